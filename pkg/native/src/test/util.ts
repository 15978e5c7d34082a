/** Deterministic PRNG and table generators for the test suite. */

import { TableSpec } from "../rans";

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randomTable(rand: () => number, maxSymbols = 24): TableSpec {
  const n = 1 + Math.floor(rand() * maxSymbols);
  const weights: number[] = [];
  for (let i = 0; i <= n; i++) weights.push(0.01 + rand());
  const total = weights.reduce((a, b) => a + b, 0);
  const freqs = weights.map((w) => Math.max(1, Math.floor((w / total) * 65536)));
  let diff = 65536 - freqs.reduce((a, b) => a + b, 0);
  let i = 0;
  while (diff !== 0) {
    const step = diff > 0 ? 1 : freqs[i % freqs.length] > 1 ? -1 : 0;
    freqs[i % freqs.length] += step;
    diff -= step;
    i++;
  }
  return { offset: Math.floor(rand() * 100) - 50, freqs };
}

export function randomCase(rand: () => number, nSymbols: number, escapeRate = 0.05) {
  const tables = [randomTable(rand), randomTable(rand), randomTable(rand)];
  const contexts = new Uint32Array(nSymbols);
  const values = new Int32Array(nSymbols);
  for (let i = 0; i < nSymbols; i++) {
    const c = Math.floor(rand() * tables.length);
    contexts[i] = c;
    const t = tables[c];
    if (rand() < escapeRate) {
      values[i] = Math.floor(rand() * (1 << 29)) - (1 << 28);
    } else {
      const nRegular = (t.freqs as number[]).length - 1;
      values[i] = t.offset + Math.floor(rand() * nRegular);
    }
  }
  return { tables, values, contexts };
}
