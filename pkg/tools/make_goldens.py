#!/usr/bin/env python3
"""Generate frozen golden files and conformance vectors.

Run from the repo root. Outputs are committed; tests compare against them
byte-for-byte (streams) or within tight tolerances (tensors). The rANS
golden streams come from an independent straight-line implementation of
the documented format, not from scicodec.rans.
"""

from __future__ import annotations

import json
import struct
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden"
CONFORMANCE = ROOT / "conformance"


# --- independent rANS (straight from the format description) -----------------

def independent_encode(values, contexts, tables):
    """tables: list of dicts {offset, freqs}; returns payload bytes."""
    # expand into (start, freq) ops in decode order
    ops = []
    for v, c in zip(values, contexts):
        t = tables[c]
        freqs = t["freqs"]
        cum = [0]
        for f in freqs:
            cum.append(cum[-1] + f)
        n_regular = len(freqs) - 1
        i = v - t["offset"]
        if 0 <= i < n_regular:
            ops.append((cum[i], freqs[i]))
        else:
            ops.append((cum[n_regular], freqs[n_regular]))
            u = v & 0xFFFFFFFF
            for shift in (0, 8, 16, 24):
                b = (u >> shift) & 0xFF
                ops.append((b << 8, 256))
    x = 1 << 23
    tail = []
    for start, freq in reversed(ops):
        x_max = ((1 << 23) >> 16 << 8) * freq
        while x >= x_max:
            tail.append(x & 0xFF)
            x >>= 8
    # note: renormalize *before* the state update, per symbol
        x = (x // freq << 16) + x % freq + start
    return struct.pack("<I", x) + bytes(reversed(tail))


# --- conformance vectors ------------------------------------------------------

def gaussian_freqs(sigma: float, tail: int) -> tuple[int, list[int]]:
    from scipy.stats import norm
    values = np.arange(-tail, tail + 1)
    probs = norm.cdf((values + 0.5) / sigma) - norm.cdf((values - 0.5) / sigma)
    escape = max(0.0, 1.0 - probs.sum())
    raw = list(probs) + [escape]
    freqs = [max(1, int(p * 65536)) for p in raw]
    top = int(np.argmax(freqs))
    freqs[top] -= sum(freqs) - 65536
    assert freqs[top] >= 1
    return -tail, freqs


def make_conformance() -> dict:
    rng = np.random.default_rng(20240801)
    tables, cases = [], []

    t_sets = []
    off, fr = gaussian_freqs(1.0, 6)
    t_sets.append([{"offset": off, "freqs": fr}])
    off, fr = gaussian_freqs(0.2, 2)
    off2, fr2 = gaussian_freqs(4.0, 20)
    t_sets.append([{"offset": off, "freqs": fr}, {"offset": off2, "freqs": fr2}])
    # skewed hand-built table
    t_sets.append([{"offset": 0, "freqs": [60000, 5000, 500, 35, 1]}])

    def add_case(tables, values, contexts):
        payload = independent_encode(values, contexts, tables)
        cases.append({
            "tables": tables,
            "values": [int(v) for v in values],
            "contexts": [int(c) for c in contexts],
            "payload_hex": payload.hex(),
        })

    add_case(t_sets[0], [], [])
    add_case(t_sets[0], [0], [0])
    add_case(t_sets[0], [100000], [0])          # escape far out of range
    add_case(t_sets[0], [-100000, 0, 7], [0, 0, 0])
    for tset in t_sets:
        for n in (17, 256, 4096):
            ctx = rng.integers(0, len(tset), size=n)
            vals = []
            for c in ctx:
                t = tset[c]
                lo = t["offset"]
                hi = lo + len(t["freqs"]) - 2
                if rng.random() < 0.02:
                    vals.append(int(rng.integers(-(1 << 20), 1 << 20)))
                else:
                    vals.append(int(rng.integers(lo, hi + 1)))
            add_case(tset, vals, ctx.tolist())
    return {"format_version": 1, "cases": cases}


# --- model golden tensors -----------------------------------------------------

def make_model_goldens():
    import torch
    from scicodec.models import MultiTaskCodec

    torch.manual_seed(0)
    model = MultiTaskCodec(backbone="channel-ar", decoders=2, latent_channels=16,
                           hyper_channels=8, hidden_channels=8, stages=2, slices=2,
                           seed=1234)
    rng = np.random.default_rng(99)
    x = torch.from_numpy(rng.uniform(0, 1, (1, 3, 32, 32)).astype(np.float32))
    with torch.no_grad():
        y = model.analysis(x)
        z = model.hyper_analysis(y)
        feats = model.hyper_synthesis(torch.round(z))
        mu, sigma = model.base_params(feats)
        x_hat = model.synthesis(y)
    np.savez(GOLDEN / "model_tensors.npz",
             x=x.numpy(), y=y.numpy(), z=z.numpy(),
             mu=mu.numpy(), sigma=sigma.numpy(), x_hat=x_hat.numpy())


def make_bitstream_golden():
    """Freeze one full image bitstream from a deterministically seeded model.

    The model is reconstructible from its architecture + seed alone, so the
    test rebuilds it instead of shipping a checkpoint. Pins the format
    against accidental changes (same-machine determinism).
    """
    import torch
    from scicodec.coding import encode_image
    from scicodec.models import MultiTaskCodec

    model = MultiTaskCodec(backbone="channel-ar", decoders=2, latent_channels=16,
                           hyper_channels=8, hidden_channels=8, stages=2, slices=2,
                           seed=2024)
    rng = np.random.default_rng(5)
    img = np.ones((40, 56, 3)) * 0.25
    img[8:24, 10:30] = rng.uniform(0, 1, (16, 20, 3))
    img[30:36, :] = 0.9
    stream, _ = encode_image(img, model)
    (GOLDEN / "bitstream.bin").write_bytes(stream.to_bytes())
    np.savez(GOLDEN / "bitstream_input.npz", img=img)


def make_plot_golden():
    from scicodec.evaluation import RDCurve, RDPoint, plot_rd
    curves = [
        RDCurve("anchor", [RDPoint(0.1, 28.0, 0.20), RDPoint(0.2, 31.0, 0.15),
                           RDPoint(0.4, 34.0, 0.10), RDPoint(0.8, 37.0, 0.06)]),
        RDCurve("test", [RDPoint(0.08, 28.0, 0.19), RDPoint(0.16, 31.0, 0.14),
                         RDPoint(0.32, 34.0, 0.09), RDPoint(0.64, 37.0, 0.055)]),
    ]
    plot_rd(curves, "psnr", GOLDEN / "rd_plot.svg")


def main():
    GOLDEN.mkdir(parents=True, exist_ok=True)
    CONFORMANCE.mkdir(parents=True, exist_ok=True)
    vectors = make_conformance()
    (CONFORMANCE / "rans_vectors.json").write_text(json.dumps(vectors, indent=1) + "\n")
    print(f"conformance: {len(vectors['cases'])} cases")
    make_model_goldens()
    print("model goldens written")
    make_bitstream_golden()
    print("bitstream golden written")
    make_plot_golden()
    print("plot golden written")


if __name__ == "__main__":
    sys.exit(main())
