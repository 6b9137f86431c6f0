/**
 * Wire protocol shared with the platform: ACL envelopes framed as a 4-byte
 * big-endian length prefix followed by canonical JSON (keys sorted, no
 * insignificant whitespace, unset fields omitted).
 */

export const PROTOCOL_VERSION = "agentmesh/1";

export interface AclMessage {
  performative: string;
  sender: string;
  receivers: string[];
  content: string;
  timestamp: number;
  conversation_id?: string;
  reply_with?: string;
  in_reply_to?: string;
}

export interface ChatMessagePayload {
  message_id: number;
  sender: string;
  target_kind: "user" | "group";
  target: string;
  body: string;
  sent_at: number;
}

/** JSON with lexicographically sorted keys at every level. */
export function canonicalJson(value: unknown): string {
  return JSON.stringify(sortKeys(value));
}

function sortKeys(value: unknown): unknown {
  if (Array.isArray(value)) {
    return value.map(sortKeys);
  }
  if (value !== null && typeof value === "object") {
    const out: Record<string, unknown> = {};
    for (const key of Object.keys(value as Record<string, unknown>).sort()) {
      const v = (value as Record<string, unknown>)[key];
      if (v !== undefined) {
        out[key] = sortKeys(v);
      }
    }
    return out;
  }
  return value;
}

export function encodeFrame(msg: AclMessage): Buffer {
  const payload = Buffer.from(canonicalJson(msg), "utf-8");
  const frame = Buffer.allocUnsafe(4 + payload.length);
  frame.writeUInt32BE(payload.length, 0);
  payload.copy(frame, 4);
  return frame;
}

/** Incremental decoder for a TCP byte stream of frames. */
export class FrameDecoder {
  private buffer: Buffer = Buffer.alloc(0);

  push(chunk: Buffer): AclMessage[] {
    this.buffer = this.buffer.length ? Buffer.concat([this.buffer, chunk]) : chunk;
    const out: AclMessage[] = [];
    while (this.buffer.length >= 4) {
      const length = this.buffer.readUInt32BE(0);
      if (this.buffer.length < 4 + length) {
        break;
      }
      const payload = this.buffer.subarray(4, 4 + length).toString("utf-8");
      this.buffer = this.buffer.subarray(4 + length);
      out.push(JSON.parse(payload) as AclMessage);
    }
    return out;
  }
}

let messageCounter = 0;

export function makeRequest(
  sender: string,
  receiver: string,
  content: unknown,
  replyWith?: string,
): AclMessage {
  return {
    performative: "request",
    sender,
    receivers: [receiver],
    content: typeof content === "string" ? content : canonicalJson(content),
    timestamp: Date.now(),
    ...(replyWith ? { reply_with: replyWith } : {}),
  };
}

export function nextToken(prefix: string): string {
  messageCounter += 1;
  return `${prefix}-${messageCounter}`;
}
