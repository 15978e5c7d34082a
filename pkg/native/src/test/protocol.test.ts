import assert from "node:assert/strict";
import { test } from "node:test";

import { handleRequest, OP_BENCH, OP_DECODE, OP_ENCODE } from "../protocol";
import { CoderHandle, encode } from "../rans";

const TABLE = { offset: -1, freqs: [20000, 30000, 15000, 536] };

function packTables(bufs: Buffer[], tables: { offset: number; freqs: number[] }[]) {
  const head = Buffer.allocUnsafe(4);
  head.writeUInt32LE(tables.length, 0);
  bufs.push(head);
  for (const t of tables) {
    const b = Buffer.allocUnsafe(8 + 4 * t.freqs.length);
    b.writeInt32LE(t.offset, 0);
    b.writeUInt32LE(t.freqs.length, 4);
    t.freqs.forEach((f, i) => b.writeUInt32LE(f, 8 + 4 * i));
    bufs.push(b);
  }
}

function encodeRequest(op: number, cases: { values: number[]; contexts: number[] }[]): Buffer {
  const bufs: Buffer[] = [Buffer.from("SNC1", "ascii")];
  const head = Buffer.allocUnsafe(5);
  head.writeUInt8(op, 0);
  head.writeUInt32LE(cases.length, 1);
  bufs.push(head);
  for (const c of cases) {
    packTables(bufs, [TABLE]);
    const b = Buffer.allocUnsafe(4 + 8 * c.values.length);
    b.writeUInt32LE(c.values.length, 0);
    c.values.forEach((v, i) => b.writeInt32LE(v, 4 + 4 * i));
    c.contexts.forEach((x, i) => b.writeUInt32LE(x, 4 + 4 * c.values.length + 4 * i));
    bufs.push(b);
  }
  return Buffer.concat(bufs);
}

test("encode op frames one payload per case", () => {
  const cases = [
    { values: [-1, 0, 1, 2], contexts: [0, 0, 0, 0] },
    { values: [], contexts: [] },
  ];
  const response = handleRequest(encodeRequest(OP_ENCODE, cases));
  let pos = 0;
  for (const c of cases) {
    assert.equal(response.readUInt8(pos), 0);
    const len = response.readUInt32LE(pos + 1);
    const payload = response.subarray(pos + 5, pos + 5 + len);
    const want = encode(c.values, c.contexts, new CoderHandle([TABLE]));
    assert.deepEqual(Uint8Array.from(payload), want);
    pos += 5 + len;
  }
  assert.equal(pos, response.length);
});

test("decode op returns symbols and flags corrupt cases without aborting", () => {
  const handle = new CoderHandle([TABLE]);
  const good = encode([0, 1, 2], [0, 0, 0], handle);
  const bufs: Buffer[] = [Buffer.from("SNC1", "ascii")];
  const head = Buffer.allocUnsafe(5);
  head.writeUInt8(OP_DECODE, 0);
  head.writeUInt32LE(2, 1);
  bufs.push(head);
  for (const payload of [good, good.subarray(0, good.length - 1)]) {
    packTables(bufs, [TABLE]);
    const b = Buffer.allocUnsafe(4 + 12 + 4);
    b.writeUInt32LE(3, 0);
    [0, 0, 0].forEach((c, i) => b.writeUInt32LE(c, 4 + 4 * i));
    b.writeUInt32LE(payload.length, 16);
    bufs.push(b, Buffer.from(payload));
  }
  const response = handleRequest(Buffer.concat(bufs));
  assert.equal(response.readUInt8(0), 0);
  assert.equal(response.readUInt32LE(1), 3);
  const symbols = [0, 1, 2].map((i) => response.readInt32LE(5 + 4 * i));
  assert.deepEqual(symbols, [0, 1, 2]);
  let pos = 5 + 12;
  assert.equal(response.readUInt8(pos), 1); // corrupt case flagged
  const errLen = response.readUInt32LE(pos + 1);
  assert.ok(errLen > 0);
  assert.equal(pos + 5 + errLen, response.length);
});

test("bench op reports payload and positive timings", () => {
  const values = Array.from({ length: 5000 }, (_, i) => (i % 4) - 1);
  const contexts = values.map(() => 0);
  const response = handleRequest(encodeRequest(OP_BENCH, [{ values, contexts }]));
  assert.equal(response.readUInt8(0), 0);
  const len = response.readUInt32LE(1);
  const encodeSeconds = response.readDoubleLE(5 + len);
  const decodeSeconds = response.readDoubleLE(5 + len + 8);
  assert.ok(len > 0 && encodeSeconds > 0 && decodeSeconds > 0);
});

test("bad magic is a protocol error", () => {
  assert.throws(() => handleRequest(Buffer.from("XXXX\x01\x00\x00\x00\x00", "ascii")));
});
