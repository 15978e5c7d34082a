/** Standalone throughput probe: encode+decode one million symbols. */

import { CoderHandle, decode, encode } from "../rans";
import { mulberry32, randomCase } from "./util";

function main() {
  const rand = mulberry32(1);
  const { tables, values, contexts } = randomCase(rand, 1_000_000, 0.01);
  const handle = new CoderHandle(tables);
  const t0 = process.hrtime.bigint();
  const payload = encode(values, contexts, handle);
  const t1 = process.hrtime.bigint();
  const back = decode(payload, contexts, handle);
  const t2 = process.hrtime.bigint();
  for (let i = 0; i < values.length; i++) {
    if (back[i] !== values[i]) throw new Error("roundtrip mismatch");
  }
  const enc = Number(t1 - t0) / 1e9;
  const dec = Number(t2 - t1) / 1e9;
  console.log(JSON.stringify({
    symbols: values.length,
    payload_bytes: payload.length,
    encode_seconds: enc,
    decode_seconds: dec,
    encode_msym_per_s: values.length / enc / 1e6,
    decode_msym_per_s: values.length / dec / 1e6,
  }));
}

main();
