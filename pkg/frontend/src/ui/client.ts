/**
 * Browser-side gateway client: ops go out as `{op, args}`, replies come
 * back `{ok, value|error}` in request order (the gateway guarantees FIFO
 * per session), and pushed `{event}` objects fan out to a handler.
 */

export interface GatewayReply {
  ok: boolean;
  value?: unknown;
  error?: string;
}

interface PendingOp {
  resolve: (value: unknown) => void;
  reject: (err: Error) => void;
}

export class GatewayError extends Error {
  constructor(public code: string) {
    super(code);
  }
}

export class GatewayClient {
  private queue: PendingOp[] = [];
  onEvent: ((event: Record<string, unknown>) => void) | null = null;
  onClose: (() => void) | null = null;

  private constructor(private socket: WebSocket) {
    socket.onmessage = (ev) => this.onMessage(String(ev.data));
    socket.onclose = () => {
      for (const pending of this.queue.splice(0)) {
        pending.reject(new GatewayError("ConnectionClosed"));
      }
      this.onClose?.();
    };
  }

  static connect(url: string): Promise<GatewayClient> {
    return new Promise((resolve, reject) => {
      const socket = new WebSocket(url);
      socket.onopen = () => resolve(new GatewayClient(socket));
      socket.onerror = () => reject(new GatewayError("ConnectionFailed"));
    });
  }

  private onMessage(raw: string): void {
    let body: Record<string, unknown>;
    try {
      body = JSON.parse(raw) as Record<string, unknown>;
    } catch {
      return;
    }
    if ("event" in body) {
      this.onEvent?.(body);
      return;
    }
    const pending = this.queue.shift();
    if (!pending) {
      return;
    }
    const reply = body as unknown as GatewayReply;
    if (reply.ok) {
      pending.resolve(reply.value ?? {});
    } else {
      pending.reject(new GatewayError(String(reply.error ?? "Error")));
    }
  }

  call<T = Record<string, unknown>>(op: string, args: Record<string, unknown> = {}): Promise<T> {
    return new Promise<T>((resolve, reject) => {
      this.queue.push({ resolve: (v) => resolve(v as T), reject });
      this.socket.send(JSON.stringify({ op, args }));
    });
  }

  close(): void {
    this.socket.close();
  }
}
