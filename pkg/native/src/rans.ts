/**
 * rANS range coder, bit-exact to the scicodec reference implementation.
 *
 * Format (version 1): 32-bit state, 8-bit renormalization, lower bound
 * L = 1 << 23, 16-bit probability precision. Symbols are encoded in
 * reverse so decoding runs forward; the payload is the flushed final
 * state (4 bytes little-endian) followed by renormalization bytes in
 * decode order. Out-of-range values are sent as the table's escape
 * symbol plus 4 raw bytes (int32 two's complement, little-endian, each
 * byte coded with a uniform 256-ary distribution at 16-bit precision).
 *
 * All state arithmetic stays below 2^31, so plain JS numbers are exact.
 */

export const PRECISION = 16;
export const TOTAL_FREQ = 1 << PRECISION;
export const RANS_L = 1 << 23;

const SLOT_MASK = TOTAL_FREQ - 1;
const BYTE_FREQ = 256;

export class CodingError extends Error {}

export interface TableSpec {
  offset: number;
  freqs: ArrayLike<number>;
}

export class CdfTable {
  readonly offset: number;
  readonly freqs: Uint32Array;
  readonly cum: Uint32Array; // length freqs.length + 1, ends at 65536
  readonly rcp: Float64Array; // per-symbol 1/freq for division-free encoding
  readonly slotToSymbol: Uint16Array;
  readonly numRegular: number;
  readonly escapeIndex: number;

  constructor(spec: TableSpec) {
    const freqs = Uint32Array.from(spec.freqs as ArrayLike<number>);
    if (freqs.length < 2) {
      throw new CodingError("table needs at least one regular symbol plus escape");
    }
    const cum = new Uint32Array(freqs.length + 1);
    const rcp = new Float64Array(freqs.length);
    for (let i = 0; i < freqs.length; i++) {
      if (freqs[i] < 1) throw new CodingError("every symbol frequency must be >= 1");
      cum[i + 1] = cum[i] + freqs[i];
      rcp[i] = 1 / freqs[i];
    }
    if (cum[freqs.length] !== TOTAL_FREQ) {
      throw new CodingError(`frequencies must sum to ${TOTAL_FREQ}`);
    }
    const lookup = new Uint16Array(TOTAL_FREQ);
    for (let sym = 0; sym < freqs.length; sym++) {
      lookup.fill(sym, cum[sym], cum[sym + 1]);
    }
    this.offset = spec.offset | 0;
    this.freqs = freqs;
    this.cum = cum;
    this.rcp = rcp;
    this.slotToSymbol = lookup;
    this.numRegular = freqs.length - 1;
    this.escapeIndex = freqs.length - 1;
  }

  indexFor(value: number): number {
    const i = value - this.offset;
    return i >= 0 && i < this.numRegular ? i : this.escapeIndex;
  }
}

/** Opaque immutable session owning the precomputed tables (thread-safe). */
export class CoderHandle {
  readonly tables: readonly CdfTable[];

  constructor(specs: TableSpec[]) {
    this.tables = specs.map((s) => new CdfTable(s));
  }
}

export function buildTables(specs: TableSpec[]): CoderHandle {
  return new CoderHandle(specs);
}

export function encode(
  values: Int32Array | number[],
  contexts: Uint32Array | number[],
  handle: CoderHandle,
): Uint8Array {
  const n = values.length;
  if (contexts.length !== n) throw new CodingError("values/contexts length mismatch");
  const tables = handle.tables;

  // count ops, validating contexts in the same pass
  let m = n;
  for (let i = 0; i < n; i++) {
    const ctx = contexts[i];
    if (ctx < 0 || ctx >= tables.length) {
      throw new CodingError(`context index ${ctx} out of range`);
    }
    const t = tables[ctx];
    if (t.indexFor(values[i]) === t.escapeIndex) m += 4;
  }

  // expand ops (start, freq) in decode order
  const starts = new Int32Array(m);
  const freqs = new Int32Array(m);
  let k = 0;
  for (let i = 0; i < n; i++) {
    const t = tables[contexts[i]];
    const idx = t.indexFor(values[i]);
    starts[k] = t.cum[idx];
    freqs[k] = t.freqs[idx];
    k++;
    if (idx === t.escapeIndex) {
      const u = values[i] >>> 0; // unsigned 32-bit view
      starts[k] = (u & 0xff) << 8;
      starts[k + 1] = ((u >>> 8) & 0xff) << 8;
      starts[k + 2] = ((u >>> 16) & 0xff) << 8;
      starts[k + 3] = ((u >>> 24) & 0xff) << 8;
      freqs[k] = freqs[k + 1] = freqs[k + 2] = freqs[k + 3] = BYTE_FREQ;
      k += 4;
    }
  }

  let x = RANS_L;
  const tail = new Uint8Array(m * 3 + 8);
  let tp = 0;
  for (let i = m - 1; i >= 0; i--) {
    const f = freqs[i];
    const xMax = 32768 * f; // ((L >> 16) << 8) * f, exact in doubles
    while (x >= xMax) {
      tail[tp++] = x & 0xff;
      x >>>= 8;
    }
    const q = (x / f) | 0; // x < 2^31, so |0 == floor
    x = q * TOTAL_FREQ + (x - q * f) + starts[i];
  }
  const out = new Uint8Array(4 + tp);
  out[0] = x & 0xff;
  out[1] = (x >>> 8) & 0xff;
  out[2] = (x >>> 16) & 0xff;
  out[3] = (x >>> 24) & 0xff;
  for (let i = 0; i < tp; i++) out[4 + i] = tail[tp - 1 - i];
  return out;
}

export function decode(
  data: Uint8Array,
  contexts: Uint32Array | number[],
  handle: CoderHandle,
): Int32Array {
  if (data.length < 4) throw new CodingError("stream shorter than the flushed coder state");
  const tables = handle.tables;
  let x = data[0] | (data[1] << 8) | (data[2] << 16) | ((data[3] << 24) >>> 0);
  x = x >>> 0;
  let pos = 4;

  const n = contexts.length;
  const out = new Int32Array(n);
  for (let i = 0; i < n; i++) {
    const ctx = contexts[i];
    if (ctx < 0 || ctx >= tables.length) {
      throw new CodingError(`context index ${ctx} out of range`);
    }
    const t = tables[ctx];
    let slot = x & SLOT_MASK;
    const sym = t.slotToSymbol[slot];
    x = t.freqs[sym] * (x >>> PRECISION) + slot - t.cum[sym];
    while (x < RANS_L) {
      if (pos >= data.length) throw new CodingError("stream exhausted mid-decode");
      x = x * 256 + data[pos++];
    }
    if (sym === t.escapeIndex) {
      let u = 0;
      for (let shift = 0; shift < 32; shift += 8) {
        slot = x & SLOT_MASK;
        const b = slot >>> 8;
        x = BYTE_FREQ * (x >>> PRECISION) + (slot & 0xff);
        while (x < RANS_L) {
          if (pos >= data.length) throw new CodingError("stream exhausted mid-decode");
          x = x * 256 + data[pos++];
        }
        u += b * 2 ** shift;
      }
      out[i] = u | 0; // back to signed two's complement
    } else {
      out[i] = t.offset + sym;
    }
  }
  if (x !== RANS_L) {
    throw new CodingError("decoder did not return to the initial state; stream corrupt");
  }
  if (pos !== data.length) {
    throw new CodingError(`${data.length - pos} trailing bytes after decode; stream corrupt`);
  }
  return out;
}
