import assert from "node:assert/strict";
import { test } from "node:test";

import {
  AclMessage,
  FrameDecoder,
  canonicalJson,
  encodeFrame,
  makeRequest,
} from "../src/protocol.js";

test("canonical json sorts keys at every level and stays compact", () => {
  const text = canonicalJson({ b: 1, a: { d: 2, c: [{ z: 1, y: 2 }] } });
  assert.equal(text, '{"a":{"c":[{"y":2,"z":1}],"d":2},"b":1}');
});

test("canonical json keeps unicode unescaped like the platform does", () => {
  assert.equal(canonicalJson({ content: "中文 🙂" }), '{"content":"中文 🙂"}');
});

test("frame layout is a u32 length prefix plus payload", () => {
  const msg: AclMessage = {
    performative: "inform",
    sender: "a@local",
    receivers: ["b@local"],
    content: "7 May 2016 rains",
    timestamp: 12345,
  };
  const frame = encodeFrame(msg);
  assert.equal(frame.readUInt32BE(0), frame.length - 4);
  const payload = JSON.parse(frame.subarray(4).toString("utf-8")) as AclMessage;
  assert.deepEqual(payload, msg);
});

test("decoder reassembles frames split across arbitrary chunk boundaries", () => {
  const messages: AclMessage[] = [1, 2, 3].map((i) => ({
    performative: "request",
    sender: `s${i}@local`,
    receivers: [`r${i}@local`],
    content: `payload ${i} with some padding`,
    timestamp: i,
  }));
  const bytes = Buffer.concat(messages.map(encodeFrame));
  for (const chunkSize of [1, 3, 7, 16, bytes.length]) {
    const decoder = new FrameDecoder();
    const got: AclMessage[] = [];
    for (let i = 0; i < bytes.length; i += chunkSize) {
      got.push(...decoder.push(bytes.subarray(i, i + chunkSize)));
    }
    assert.deepEqual(got, messages);
  }
});

test("makeRequest builds a request envelope with optional correlation", () => {
  const msg = makeRequest("me@local", "ams@1.2.3.4:9", { verb: "heartbeat", args: {} }, "t-9");
  assert.equal(msg.performative, "request");
  assert.equal(msg.reply_with, "t-9");
  assert.deepEqual(JSON.parse(msg.content), { verb: "heartbeat", args: {} });
  assert.ok(msg.timestamp > 0);
  const bare = makeRequest("me@local", "ams@1.2.3.4:9", "raw");
  assert.equal(bare.reply_with, undefined);
  assert.equal(bare.content, "raw");
});
