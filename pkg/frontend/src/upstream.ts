/**
 * TCP link to the platform's Main Container: attach handshake, container
 * verbs (spawn/kill/df-search) over the control channel, frame routing for
 * agents this process hosts, and heartbeats.
 */

import * as net from "node:net";
import { EventEmitter } from "node:events";

import {
  AclMessage,
  FrameDecoder,
  PROTOCOL_VERSION,
  encodeFrame,
  makeRequest,
  nextToken,
} from "./protocol.js";

interface Pending {
  resolve: (value: Record<string, unknown>) => void;
  reject: (err: Error) => void;
}

export class UpstreamError extends Error {
  constructor(public code: string, detail?: string) {
    super(detail ? `${code}: ${detail}` : code);
  }
}

export class PlatformLink extends EventEmitter {
  containerId = "";
  address = "";
  closed = false;

  private pending = new Map<string, Pending>();
  private decoder = new FrameDecoder();
  private heartbeatTimer?: NodeJS.Timeout;

  private constructor(
    private socket: net.Socket,
    private mainAddress: string,
  ) {
    super();
  }

  static connect(host: string, port: number, heartbeatSeconds = 5): Promise<PlatformLink> {
    return new Promise((resolve, reject) => {
      const socket = net.connect({ host, port });
      const link = new PlatformLink(socket, `${host}:${port}`);
      socket.once("error", (err) => reject(new UpstreamError("MainUnreachable", String(err))));
      socket.once("connect", () => {
        socket.removeAllListeners("error");
        link
          .attach(heartbeatSeconds)
          .then(() => resolve(link))
          .catch(reject);
      });
    });
  }

  private attach(heartbeatSeconds: number): Promise<void> {
    return new Promise((resolve, reject) => {
      const token = nextToken("attach");
      this.pending.set(token, {
        resolve: (value) => {
          this.containerId = String(value.container_id);
          this.address = String(value.address);
          this.heartbeatTimer = setInterval(
            () => this.sendControl("heartbeat", {}),
            heartbeatSeconds * 1000,
          );
          resolve();
        },
        reject,
      });
      this.socket.on("data", (chunk) => this.onData(chunk));
      this.socket.on("close", () => this.onClose());
      this.socket.on("error", () => this.onClose());
      this.send(
        makeRequest(
          "container@local",
          `ams@${this.mainAddress}`,
          { verb: "attach", args: { version: PROTOCOL_VERSION } },
          token,
        ),
      );
    });
  }

  private onData(chunk: Buffer): void {
    let frames: AclMessage[];
    try {
      frames = this.decoder.push(chunk);
    } catch {
      this.onClose();
      return;
    }
    for (const msg of frames) {
      if (msg.in_reply_to && this.pending.has(msg.in_reply_to)) {
        const waiter = this.pending.get(msg.in_reply_to)!;
        this.pending.delete(msg.in_reply_to);
        let body: Record<string, unknown>;
        try {
          body = JSON.parse(msg.content) as Record<string, unknown>;
        } catch {
          waiter.reject(new UpstreamError("MalformedPayload"));
          continue;
        }
        if (body.ok) {
          waiter.resolve((body.value as Record<string, unknown>) ?? {});
        } else {
          waiter.reject(new UpstreamError(String(body.error ?? "Error")));
        }
        continue;
      }
      const control = this.parseControlPush(msg);
      if (control === "detach") {
        this.onClose();
        continue;
      }
      if (control === null) {
        this.emit("message", msg);
      }
    }
  }

  /** Returns the verb for control pushes from the main container, else null. */
  private parseControlPush(msg: AclMessage): string | null {
    if (msg.performative !== "request" || !msg.sender.startsWith("ams@")) {
      return null;
    }
    try {
      const obj = JSON.parse(msg.content) as { verb?: string };
      return obj && typeof obj.verb === "string" ? obj.verb : null;
    } catch {
      return null;
    }
  }

  private onClose(): void {
    if (this.closed) {
      return;
    }
    this.closed = true;
    if (this.heartbeatTimer) {
      clearInterval(this.heartbeatTimer);
    }
    for (const waiter of this.pending.values()) {
      waiter.reject(new UpstreamError("UpstreamDown"));
    }
    this.pending.clear();
    this.socket.destroy();
    this.emit("close");
  }

  private send(msg: AclMessage): void {
    if (this.closed) {
      throw new UpstreamError("UpstreamDown");
    }
    this.socket.write(encodeFrame(msg));
  }

  /** Fire-and-forget routed traffic from one of our hosted agents. */
  route(msg: AclMessage): void {
    this.send(msg);
  }

  private sendControl(verb: string, args: Record<string, unknown>): void {
    if (this.closed) {
      return;
    }
    this.send(
      makeRequest(`container@${this.address}`, `ams@${this.mainAddress}`, { verb, args }),
    );
  }

  rpc(verb: string, args: Record<string, unknown>, timeoutMs = 10_000): Promise<Record<string, unknown>> {
    if (this.closed) {
      return Promise.reject(new UpstreamError("UpstreamDown"));
    }
    const token = nextToken("rpc");
    return new Promise((resolve, reject) => {
      const timer = setTimeout(() => {
        this.pending.delete(token);
        reject(new UpstreamError("Timeout", verb));
      }, timeoutMs);
      this.pending.set(token, {
        resolve: (value) => {
          clearTimeout(timer);
          resolve(value);
        },
        reject: (err) => {
          clearTimeout(timer);
          reject(err);
        },
      });
      this.send(
        makeRequest(`container@${this.address}`, `ams@${this.mainAddress}`, { verb, args }, token),
      );
    });
  }

  async spawnAgent(name: string): Promise<string> {
    const value = await this.rpc("spawn", { name });
    return String(value.agent ?? `${name}@${this.address}`);
  }

  async killAgent(name: string): Promise<void> {
    await this.rpc("kill", { name });
  }

  async dfSearch(serviceType: string): Promise<Array<{ provider: string; service_type: string }>> {
    const value = await this.rpc("df-search", { service_type: serviceType });
    return (value.entries as Array<{ provider: string; service_type: string }>) ?? [];
  }

  detach(): void {
    if (!this.closed) {
      try {
        this.sendControl("detach", {});
      } catch {
        // already gone
      }
      this.onClose();
    }
  }
}
