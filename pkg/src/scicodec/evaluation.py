"""RD sweeps, Bjontegaard BD-rate, region-wise comparisons, and reports.

BD-rate uses the classic formulation: least-squares polynomial fit of
log10(rate) as a function of quality for each curve, integrated over the
overlapping quality interval. For GMSD (lower is better) the quality axis
is negated before fitting so the convention stays "higher is better".
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from . import metrics
from .coding import encode_image, decode_image
from .dataset import DatasetManifest, load_sample_arrays
from .checkpoint import load_checkpoint

QUALITY_AXES = ("psnr", "gmsd")


class EvaluationError(ValueError):
    pass


@dataclass
class RDPoint:
    bpp: float
    psnr: float
    gmsd: float
    name: str = ""
    source: str = "coded"  # coded | estimate | external

    def quality(self, axis: str) -> float:
        if axis == "psnr":
            return self.psnr
        if axis == "gmsd":
            return -self.gmsd  # negate: BD fitting needs quality increasing
        raise EvaluationError(f"unknown quality axis {axis!r}")


@dataclass
class RDCurve:
    label: str
    points: list[RDPoint]

    def __post_init__(self):
        if len(self.points) < 2:
            raise EvaluationError(f"curve {self.label!r} needs at least 2 points")
        self.points = sorted(self.points, key=lambda p: p.bpp)
        bpps = [p.bpp for p in self.points]
        if any(b <= 0 for b in bpps):
            raise EvaluationError(f"curve {self.label!r} has non-positive bpp")
        if any(b2 <= b1 for b1, b2 in zip(bpps, bpps[1:])):
            raise EvaluationError(f"curve {self.label!r} has duplicate bpp values")

    def check_monotone(self, axis: str):
        q = [p.quality(axis) for p in self.points]
        if any(not math.isfinite(v) for v in q):
            raise EvaluationError(f"curve {self.label!r} has no usable {axis} values")
        if any(q2 <= q1 for q1, q2 in zip(q, q[1:])):
            raise EvaluationError(
                f"curve {self.label!r}: {axis} not strictly monotone in bpp: {q}")

    def to_dict(self) -> dict:
        return {"label": self.label, "points": [asdict(p) for p in self.points]}

    @classmethod
    def from_dict(cls, d: dict) -> "RDCurve":
        return cls(label=d["label"], points=[RDPoint(**p) for p in d["points"]])

    def save(self, path: str | Path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "RDCurve":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class BdReport:
    bd_rate_percent: float
    quality: str
    overlap: tuple[float, float]
    anchor_residual: float
    test_residual: float


def _fit_log_rate(points: list[RDPoint], axis: str, degree: int):
    q = np.array([p.quality(axis) for p in points])
    r = np.log10([p.bpp for p in points])
    coeffs = np.polyfit(q, r, degree)
    residual = float(np.sqrt(np.mean((np.polyval(coeffs, q) - r) ** 2)))
    return coeffs, residual


def bd_rate_report(anchor: RDCurve, test: RDCurve, quality: str = "psnr",
                   degree: int = 3) -> BdReport:
    """Average rate difference of ``test`` vs ``anchor`` at equal quality, %.

    Negative means the test codec needs fewer bits. ``degree`` defaults to
    the classic cubic, which needs >= 4 points per curve; pass a smaller
    degree for short desk-scale curves.
    """
    if quality not in QUALITY_AXES:
        raise EvaluationError(f"quality must be one of {QUALITY_AXES}")
    for curve in (anchor, test):
        if len(curve.points) < degree + 1:
            raise EvaluationError(
                f"curve {curve.label!r} has {len(curve.points)} points; "
                f"degree-{degree} fit needs at least {degree + 1}")
        curve.check_monotone(quality)
    lo = max(min(p.quality(quality) for p in c.points) for c in (anchor, test))
    hi = min(max(p.quality(quality) for p in c.points) for c in (anchor, test))
    if hi <= lo:
        raise EvaluationError(
            f"no overlapping {quality} range between {anchor.label!r} and {test.label!r}")
    ca, res_a = _fit_log_rate(anchor.points, quality, degree)
    ct, res_t = _fit_log_rate(test.points, quality, degree)
    ia = np.polyval(np.polyint(ca), [lo, hi])
    it = np.polyval(np.polyint(ct), [lo, hi])
    delta = ((it[1] - it[0]) - (ia[1] - ia[0])) / (hi - lo)
    return BdReport(bd_rate_percent=(10.0 ** delta - 1.0) * 100.0, quality=quality,
                    overlap=(float(lo), float(hi)), anchor_residual=res_a,
                    test_residual=res_t)


def bd_rate(anchor: RDCurve, test: RDCurve, quality: str = "psnr", degree: int = 3) -> float:
    return bd_rate_report(anchor, test, quality, degree).bd_rate_percent


@dataclass
class SweepRecord:
    """Per-image evaluation record; every curve point is re-derivable from these."""

    image_index: int
    bpp: float
    psnr: float
    gmsd: float
    payload_bytes: int = 0
    header_bytes: int = 0
    estimate_bpp: float = 0.0
    natural_bits: float = 0.0
    synthetic_bits: float = 0.0
    natural_pixels: int = 0
    synthetic_pixels: int = 0
    natural_psnr: float = 0.0
    synthetic_psnr: float = 0.0


def evaluate_checkpoint(checkpoint_path: str | Path, manifest_path: str | Path,
                        split: str = "test", rate_source: str = "coded",
                        with_regions: bool = True, limit: int | None = None
                        ) -> tuple[RDPoint, list[SweepRecord]]:
    """Average rate/quality of one checkpoint over a manifest split."""
    if rate_source not in ("coded", "estimate"):
        raise EvaluationError("rate_source must be 'coded' or 'estimate'")
    model, header = load_checkpoint(checkpoint_path)
    manifest = DatasetManifest.load(manifest_path)
    base = Path(manifest_path).parent
    entries = manifest.split_entries(split)
    if limit is not None:
        entries = entries[:limit]
    if not entries:
        raise EvaluationError(f"manifest has no {split!r} entries")
    records = []
    footprint = 1 << model.stages
    for e in entries:
        img, mask = load_sample_arrays(base, e)
        stream, latents = encode_image(img, model)
        est = model.rate_estimate(latents)
        n_px = img.shape[0] * img.shape[1]
        if rate_source == "coded":
            recon = decode_image(stream.to_bytes(), model)
            x_hat = recon.image
            bpp = stream.total_bytes * 8.0 / n_px
        else:
            with torch.no_grad():
                x_hat_t, _ = model.synthesize(latents.y_hat)
            x_hat = x_hat_t[0].numpy().transpose(1, 2, 0)[: img.shape[0], : img.shape[1]]
            bpp = est.total_bits / n_px
        rec = SweepRecord(
            image_index=e.index, bpp=bpp,
            psnr=metrics.psnr(img, x_hat), gmsd=metrics.gmsd(img, x_hat),
            payload_bytes=stream.payload_bytes, header_bytes=stream.header_bytes,
            estimate_bpp=est.total_bits / n_px)
        if with_regions and mask is not None and mask.any() and not mask.all():
            y_cells = est.y_bits_map.sum(dim=0).numpy()
            region = metrics.region_rate(y_cells, est.z_bits, _pad_mask(mask, stream), footprint)
            rec.natural_bits = region.natural
            rec.synthetic_bits = region.synthetic
            rec.natural_pixels = int(mask.sum())
            rec.synthetic_pixels = int(mask.size - mask.sum())
            rec.natural_psnr = metrics.masked_psnr(img, x_hat, mask)
            rec.synthetic_psnr = metrics.masked_psnr(img, x_hat, 1 - mask)
        records.append(rec)
    point = RDPoint(
        bpp=float(np.mean([r.bpp for r in records])),
        psnr=float(np.mean([r.psnr for r in records])),
        gmsd=float(np.mean([r.gmsd for r in records])),
        name=header.get("train_config", {}).get("run_name", Path(checkpoint_path).stem),
        source=rate_source if rate_source == "estimate" else "coded")
    return point, records


def _pad_mask(mask: np.ndarray, stream) -> np.ndarray:
    ph = stream.padded_height - mask.shape[0]
    pw = stream.padded_width - mask.shape[1]
    if ph or pw:
        mask = np.pad(mask, [(0, ph), (0, pw)], mode="symmetric")
    return mask


def rd_sweep(checkpoint_paths: list, manifest_path: str | Path, label: str,
             split: str = "test", rate_source: str = "coded",
             records_dir: str | Path | None = None, min_points: int = 2,
             limit: int | None = None, warn=None) -> RDCurve:
    """RD curve over a checkpoint ladder; per-image records are persisted."""
    if len(checkpoint_paths) < min_points:
        raise EvaluationError(f"need at least {min_points} checkpoints, got {len(checkpoint_paths)}")
    points = []
    for ck in checkpoint_paths:
        point, records = evaluate_checkpoint(ck, manifest_path, split, rate_source, limit=limit)
        points.append(point)
        if records_dir is not None:
            rd = Path(records_dir)
            rd.mkdir(parents=True, exist_ok=True)
            with open(rd / f"{Path(str(ck)).stem}.records.jsonl", "w") as f:
                for r in records:
                    f.write(json.dumps(asdict(r), sort_keys=True) + "\n")
    curve = RDCurve(label=label, points=points)
    ordered = sorted(points, key=lambda p: p.bpp)
    for p1, p2 in zip(ordered, ordered[1:]):
        if p2.psnr <= p1.psnr and warn is not None:
            warn(f"{label}: PSNR not increasing with bpp between "
                 f"{p1.name} and {p2.name}")
    return curve


def region_curves(sweep_records: list[list[SweepRecord]], label: str
                  ) -> tuple[RDCurve, RDCurve]:
    """Build (natural, synthetic) RD curves from per-image region records."""
    nat_points, syn_points = [], []
    for records in sweep_records:
        with_regions = [r for r in records if r.natural_pixels > 0]
        if not with_regions:
            raise EvaluationError("records carry no region attribution")
        nat_bpp = float(np.mean([r.natural_bits / r.natural_pixels for r in with_regions]))
        syn_bpp = float(np.mean([r.synthetic_bits / r.synthetic_pixels for r in with_regions]))
        nat_points.append(RDPoint(
            bpp=nat_bpp, psnr=float(np.mean([r.natural_psnr for r in with_regions])), gmsd=0.0))
        syn_points.append(RDPoint(
            bpp=syn_bpp, psnr=float(np.mean([r.synthetic_psnr for r in with_regions])), gmsd=0.0))
    return (RDCurve(label=f"{label} (natural)", points=nat_points),
            RDCurve(label=f"{label} (synthetic)", points=syn_points))


def region_bd_rate(anchor_records: list[list[SweepRecord]],
                   test_records: list[list[SweepRecord]],
                   anchor_label: str = "anchor", test_label: str = "test",
                   degree: int = 3) -> tuple[float, float]:
    """(natural %, synthetic %) BD-rates for PSNR from per-image records."""
    a_nat, a_syn = region_curves(anchor_records, anchor_label)
    t_nat, t_syn = region_curves(test_records, test_label)
    return (bd_rate(a_nat, t_nat, "psnr", degree), bd_rate(a_syn, t_syn, "psnr", degree))


def ingest_external(path: str | Path) -> RDCurve:
    """Read an external codec's per-image results (JSONL).

    Line 1 is a header record ``{"type": "header", "label": ..., "pixels": N}``;
    each following line is ``{"point": name, "image": id, "bytes": n,
    "psnr": x, "gmsd": y}`` (``gmsd`` optional, ``pixels`` may be overridden
    per line). Schema violations report the offending line number.
    """
    points: dict[str, list[dict]] = {}
    label = None
    default_pixels = None
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise EvaluationError(f"{path}:{lineno}: invalid JSON: {exc}") from None
            if lineno == 1:
                if rec.get("type") != "header" or "label" not in rec:
                    raise EvaluationError(f"{path}:1: first line must be a header record with a label")
                label = rec["label"]
                default_pixels = rec.get("pixels")
                continue
            for key in ("point", "image", "bytes", "psnr"):
                if key not in rec:
                    raise EvaluationError(f"{path}:{lineno}: missing field {key!r}")
            pixels = rec.get("pixels", default_pixels)
            if not pixels:
                raise EvaluationError(f"{path}:{lineno}: no pixel count (header or per-line)")
            rec["_bpp"] = rec["bytes"] * 8.0 / pixels
            points.setdefault(rec["point"], []).append(rec)
    if label is None:
        raise EvaluationError(f"{path}: empty results file")
    curve_points = []
    for name, recs in points.items():
        has_gmsd = all("gmsd" in r for r in recs)
        curve_points.append(RDPoint(
            bpp=float(np.mean([r["_bpp"] for r in recs])),
            psnr=float(np.mean([r["psnr"] for r in recs])),
            gmsd=float(np.mean([r["gmsd"] for r in recs])) if has_gmsd else math.nan,
            name=name, source="external"))
    return RDCurve(label=label, points=curve_points)


def plot_rd(curves: list[RDCurve], quality: str, out_path: str | Path):
    """Deterministic RD plot (SVG output is byte-stable for golden tests)."""
    if not curves:
        raise EvaluationError("nothing to plot")
    if quality not in QUALITY_AXES:
        raise EvaluationError(f"quality must be one of {QUALITY_AXES}")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    with matplotlib.rc_context({"svg.hashsalt": "scicodec"}):
        fig, ax = plt.subplots(figsize=(6, 4.5))
        for curve in curves:
            xs = [p.bpp for p in curve.points]
            ys = [getattr(p, quality) for p in curve.points]
            ax.plot(xs, ys, marker="o", label=curve.label)
        ax.set_xlabel("bits per pixel")
        ax.set_ylabel("PSNR (dB)" if quality == "psnr" else "GMSD (lower is better)")
        ax.grid(True, alpha=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(out_path, metadata={"Date": None} if str(out_path).endswith(".svg") else None)
        plt.close(fig)


def format_table(title: str, rows: list[tuple[str, dict]]) -> str:
    """Aligned text table: one row label plus named numeric columns.

    Rows may carry different column subsets; gaps render as a dash.
    """
    if not rows:
        raise EvaluationError("empty table")
    cols = []
    for _, vals in rows:
        for c in vals:
            if c not in cols:
                cols.append(c)
    widths = [max(len("codec"), max(len(r[0]) for r in rows))]
    widths += [max(len(c), 10) for c in cols]
    lines = [title, "-" * len(title)]
    header = "  ".join(["codec".ljust(widths[0])] + [c.rjust(w) for c, w in zip(cols, widths[1:])])
    lines.append(header)
    for name, vals in rows:
        cells = [name.ljust(widths[0])]
        for c, w in zip(cols, widths[1:]):
            v = vals.get(c, "-")
            cells.append((f"{v:.2f}" if isinstance(v, float) else str(v)).rjust(w))
        lines.append("  ".join(cells))
    return "\n".join(lines) + "\n"


def write_report(out_dir: str | Path, name: str, title: str, rows: list[tuple[str, dict]]):
    """Emit a table as aligned text plus machine-readable JSON records."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{name}.txt").write_text(format_table(title, rows))
    (out / f"{name}.json").write_text(json.dumps(
        {"title": title, "rows": [{"codec": n, **v} for n, v in rows]},
        indent=1, sort_keys=True) + "\n")
