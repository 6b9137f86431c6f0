/**
 * The browser bridge: serves the static app, exposes the named-server
 * directory, and translates WebSocket sessions 1:1 into messenger requests
 * on the platform wire protocol.
 *
 * Sessions speak `{op, args}` and receive `{ok, value|error}` replies in
 * request order, plus pushed `{event: ...}` objects.  A session uses the
 * gateway's default upstream unless its first act is a `connect` op naming
 * a server from the directory, which gives it a dedicated upstream link.
 */

import * as fs from "node:fs";
import * as http from "node:http";
import * as path from "node:path";

import { WebSocket, WebSocketServer } from "ws";

import { AclMessage, canonicalJson, makeRequest, nextToken } from "./protocol.js";
import { PlatformLink, UpstreamError } from "./upstream.js";

const CONTENT_TYPES: Record<string, string> = {
  ".html": "text/html; charset=utf-8",
  ".js": "text/javascript; charset=utf-8",
  ".css": "text/css; charset=utf-8",
  ".json": "application/json; charset=utf-8",
};

interface ServerEntry {
  display_name: string;
  host: string;
  port: number;
}

interface Session {
  agentName: string;
  agentId: string;
  socket: WebSocket;
  user: string | null;
  link: PlatformLink | null;
  ownsLink: boolean;
  spawned: Promise<void> | null;
  chain: Promise<void>;
}

interface PendingCall {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

export interface GatewayOptions {
  listen: number;
  upstreamHost: string;
  upstreamPort: number;
  staticDir?: string;
  serversFile?: string;
}

export function errorCode(err: unknown): string {
  return err instanceof UpstreamError ? err.code : "InternalError";
}

export class Gateway {
  private sessions = new Map<string, Session>(); // agent name -> session
  private sessionCounter = 0;
  private managers = new Map<PlatformLink, string>();
  private pendingCalls = new Map<string, PendingCall>();
  private defaultLink: PlatformLink | null = null;

  private constructor(
    private server: http.Server,
    private wss: WebSocketServer,
    private options: GatewayOptions,
  ) {}

  static async start(options: GatewayOptions): Promise<Gateway> {
    const server = http.createServer();
    const wss = new WebSocketServer({ server });
    const gateway = new Gateway(server, wss, options);
    gateway.defaultLink = await gateway.openLink(options.upstreamHost, options.upstreamPort);

    server.on("request", (req, res) => gateway.onHttp(req, res));
    wss.on("connection", (socket) => gateway.onSession(socket));
    await new Promise<void>((resolve, reject) => {
      server.once("error", reject);
      server.listen(options.listen, "127.0.0.1", () => resolve());
    });
    return gateway;
  }

  get port(): number {
    const addr = this.server.address();
    return typeof addr === "object" && addr ? addr.port : this.options.listen;
  }

  async close(): Promise<void> {
    for (const session of this.sessions.values()) {
      session.socket.close();
      if (session.ownsLink && session.link) {
        session.link.detach();
      }
    }
    this.defaultLink?.detach();
    this.wss.close();
    await new Promise<void>((resolve) => this.server.close(() => resolve()));
  }

  private async openLink(host: string, port: number): Promise<PlatformLink> {
    const link = await PlatformLink.connect(host, port);
    link.on("message", (msg: AclMessage) => this.onUpstreamMessage(msg));
    link.on("close", () => this.onUpstreamClose(link));
    return link;
  }

  // ------------------------------------------------------------------
  // http: static app + server directory
  // ------------------------------------------------------------------

  private onHttp(req: http.IncomingMessage, res: http.ServerResponse): void {
    const url = (req.url ?? "/").split("?")[0];
    if (url === "/api/servers") {
      res.writeHead(200, { "content-type": "application/json; charset=utf-8" });
      res.end(JSON.stringify(this.readServers()));
      return;
    }
    const staticDir = this.options.staticDir;
    if (!staticDir) {
      res.writeHead(404);
      res.end("not found");
      return;
    }
    const file = path.resolve(staticDir, url === "/" ? "index.html" : url.slice(1));
    if (!file.startsWith(path.resolve(staticDir)) || !fs.existsSync(file) || fs.statSync(file).isDirectory()) {
      res.writeHead(404);
      res.end("not found");
      return;
    }
    res.writeHead(200, { "content-type": CONTENT_TYPES[path.extname(file)] ?? "application/octet-stream" });
    res.end(fs.readFileSync(file));
  }

  private readServers(): ServerEntry[] {
    if (this.options.serversFile && fs.existsSync(this.options.serversFile)) {
      try {
        const parsed = JSON.parse(fs.readFileSync(this.options.serversFile, "utf-8")) as ServerEntry[];
        return Array.isArray(parsed) ? parsed : [];
      } catch {
        return [];
      }
    }
    return [];
  }

  // ------------------------------------------------------------------
  // websocket sessions
  // ------------------------------------------------------------------

  private onSession(socket: WebSocket): void {
    this.sessionCounter += 1;
    const agentName = `web-${process.pid % 10_000}-${this.sessionCounter}`;
    const session: Session = {
      agentName,
      agentId: agentName + "@local",
      socket,
      user: null,
      link: null,
      ownsLink: false,
      spawned: null,
      chain: Promise.resolve(),
    };
    this.sessions.set(agentName, session);

    socket.on("message", (data) => {
      // strict FIFO per session: each op fully settles before the next
      const raw = String(data);
      session.chain = session.chain.then(() => this.onBrowserMessage(session, raw));
    });
    socket.on("close", () => {
      this.sessions.delete(agentName);
      const link = session.link;
      if (link && !link.closed) {
        link.killAgent(agentName).catch(() => undefined);
        if (session.ownsLink) {
          link.detach();
        }
      }
    });
  }

  private reply(session: Session, body: unknown): void {
    if (session.socket.readyState === WebSocket.OPEN) {
      session.socket.send(canonicalJson(body));
    }
  }

  private async onBrowserMessage(session: Session, raw: string): Promise<void> {
    let request: { op?: unknown; args?: Record<string, unknown> };
    try {
      request = JSON.parse(raw) as typeof request;
    } catch {
      this.reply(session, { ok: false, error: "BadRequest" });
      return;
    }
    const op = request.op;
    if (typeof op !== "string" || op.length === 0) {
      this.reply(session, { ok: false, error: "BadRequest" });
      return;
    }
    const args = request.args ?? {};
    try {
      if (op === "list-servers") {
        this.reply(session, { ok: true, value: { servers: this.readServers() } });
        return;
      }
      if (op === "connect") {
        await this.onConnectOp(session, args);
        return;
      }
      if (op === "login" && session.user !== null) {
        this.reply(session, { ok: false, error: "SessionBound" });
        return;
      }
      const value = await this.callManager(session, op, args);
      if (op === "login") {
        session.user = String((value as Record<string, unknown>).user_name ?? "");
      } else if (op === "logout") {
        session.user = null;
      }
      this.reply(session, { ok: true, value });
    } catch (err) {
      this.reply(session, { ok: false, error: errorCode(err) });
    }
  }

  /** Binds the session to a directory server (or host:port) before login. */
  private async onConnectOp(session: Session, args: Record<string, unknown>): Promise<void> {
    if (session.spawned !== null) {
      this.reply(session, { ok: false, error: "SessionBound" });
      return;
    }
    const spec = String(args.server ?? "");
    let host = this.options.upstreamHost;
    let port = this.options.upstreamPort;
    if (spec) {
      const entry = this.readServers().find((e) => e.display_name === spec);
      if (entry) {
        host = entry.host;
        port = entry.port;
      } else if (spec.includes(":")) {
        const [h, p] = spec.split(":");
        host = h;
        port = Number(p);
      } else {
        this.reply(session, { ok: false, error: "UnknownServer" });
        return;
      }
    }
    const isDefault =
      host === this.options.upstreamHost && port === this.options.upstreamPort;
    if (!isDefault) {
      session.link = await this.openLink(host, port);
      session.ownsLink = true;
    }
    await this.ensureAgent(session);
    this.reply(session, { ok: true, value: { address: `${host}:${port}` } });
  }

  private async ensureAgent(session: Session): Promise<PlatformLink> {
    if (session.link === null) {
      if (this.defaultLink === null || this.defaultLink.closed) {
        this.defaultLink = await this.openLink(
          this.options.upstreamHost,
          this.options.upstreamPort,
        );
      }
      session.link = this.defaultLink;
    }
    if (session.spawned === null) {
      const link = session.link;
      session.spawned = link.spawnAgent(session.agentName).then((agentId) => {
        session.agentId = agentId;
      });
    }
    await session.spawned;
    return session.link;
  }

  private async findManager(link: PlatformLink): Promise<string> {
    const cached = this.managers.get(link);
    if (cached) {
      return cached;
    }
    const entries = await link.dfSearch("chat");
    if (!entries.length) {
      throw new UpstreamError("UpstreamDown", "no chat service registered");
    }
    this.managers.set(link, entries[0].provider);
    return entries[0].provider;
  }

  private async callManager(
    session: Session,
    op: string,
    args: Record<string, unknown>,
    timeoutMs = 10_000,
  ): Promise<unknown> {
    const link = await this.ensureAgent(session);
    const manager = await this.findManager(link);
    return new Promise((resolve, reject) => {
      const token = nextToken(session.agentName);
      const timer = setTimeout(() => {
        this.pendingCalls.delete(token);
        reject(new UpstreamError("Timeout", op));
      }, timeoutMs);
      this.pendingCalls.set(token, {
        resolve: (value) => {
          clearTimeout(timer);
          resolve(value);
        },
        reject: (err) => {
          clearTimeout(timer);
          reject(err);
        },
      });
      try {
        link.route(makeRequest(session.agentId, manager, { op, args }, token));
      } catch (err) {
        clearTimeout(timer);
        this.pendingCalls.delete(token);
        reject(err instanceof Error ? err : new Error(String(err)));
      }
    });
  }

  // ------------------------------------------------------------------
  // upstream traffic back to sessions
  // ------------------------------------------------------------------

  private onUpstreamMessage(msg: AclMessage): void {
    if (msg.in_reply_to && this.pendingCalls.has(msg.in_reply_to)) {
      const waiter = this.pendingCalls.get(msg.in_reply_to)!;
      this.pendingCalls.delete(msg.in_reply_to);
      let body: { ok?: boolean; value?: unknown; error?: string };
      try {
        body = JSON.parse(msg.content) as typeof body;
      } catch {
        waiter.reject(new UpstreamError("MalformedPayload"));
        return;
      }
      if (body.ok) {
        waiter.resolve(body.value ?? {});
      } else {
        waiter.reject(new UpstreamError(String(body.error ?? "Error")));
      }
      return;
    }
    let event: Record<string, unknown>;
    try {
      event = JSON.parse(msg.content) as Record<string, unknown>;
    } catch {
      return;
    }
    if (!event || typeof event !== "object" || !("event" in event)) {
      return;
    }
    for (const receiver of msg.receivers) {
      const name = receiver.split("@", 1)[0];
      const session = this.sessions.get(name);
      if (session && session.socket.readyState === WebSocket.OPEN) {
        session.socket.send(canonicalJson(event));
      }
    }
  }

  private onUpstreamClose(link: PlatformLink): void {
    for (const [token, waiter] of this.pendingCalls) {
      this.pendingCalls.delete(token);
      waiter.reject(new UpstreamError("UpstreamDown"));
    }
    for (const session of this.sessions.values()) {
      if (session.link === link && session.socket.readyState === WebSocket.OPEN) {
        session.socket.send(canonicalJson({ event: "upstream-down" }));
      }
    }
  }
}
