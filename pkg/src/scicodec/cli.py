"""Command-line entry point.

Verbs: dataset, toypools, train, grid, encode, decode, eval, sweep,
bdrate, plot, report, inspect, experiment. Exit codes: 0 ok, 1 user
error, 2 internal error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

log = logging.getLogger("scicodec")


class UserError(Exception):
    pass


def _load_image(path: str) -> np.ndarray:
    from PIL import Image
    try:
        return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    except Exception as exc:
        raise UserError(f"cannot read image {path}: {exc}") from None


def _save_image(path: str, arr: np.ndarray):
    from PIL import Image
    Image.fromarray(np.clip(arr * 255.0 + 0.5, 0, 255).astype(np.uint8)).save(path)


def cmd_toypools(args) -> int:
    from . import toydata
    toydata.generate_synthetic_pool(Path(args.out) / "synthetic", args.synthetic,
                                    size=args.size, seed=args.seed)
    toydata.generate_natural_pool(Path(args.out) / "natural", args.natural,
                                  size=args.size, seed=args.seed ^ 1)
    print(f"wrote {args.synthetic} synthetic and {args.natural} natural images under {args.out}")
    return 0


def cmd_dataset(args) -> int:
    from .dataset import build_dataset
    manifest = build_dataset(args.synthetic, args.natural, args.n, args.test,
                             args.seed, args.out, size=args.size,
                             patch_min=args.patch_min, patch_max=args.patch_max)
    print(f"built {manifest.n} samples ({manifest.test_n} test) under {args.out}")
    return 0


def cmd_train(args) -> int:
    from .training import Corpus, TrainConfig, train
    raw = json.loads(Path(args.config).read_text())
    if args.global_seed is not None:
        raw["seed"] = args.global_seed
    cfg = TrainConfig.from_dict(raw)
    if args.manifest:
        corpus = Corpus.from_manifest(args.manifest, split="train")
    elif args.images:
        corpus = Corpus.from_directory(args.images)
    else:
        raise UserError("provide --manifest or --images")
    path = train(cfg, corpus, args.out)
    print(f"best checkpoint: {path}")
    return 0


def cmd_grid(args) -> int:
    from .training import Corpus, TrainConfig, run_grid, PAPER_GRID
    raw = json.loads(Path(args.config).read_text())
    if args.global_seed is not None:
        raw["seed"] = args.global_seed
    cfg = TrainConfig.from_dict(raw)
    pairs = json.loads(args.pairs) if args.pairs else list(PAPER_GRID)
    if args.manifest:
        corpus = Corpus.from_manifest(args.manifest, split="train")
    else:
        corpus = Corpus.from_directory(args.images)
    paths = run_grid(cfg, pairs, corpus, args.out)
    for p in paths:
        print(p)
    return 0


def cmd_encode(args) -> int:
    from .checkpoint import load_checkpoint
    from .coding import encode_image
    model, _ = load_checkpoint(args.checkpoint)
    img = _load_image(getattr(args, "in"))
    stream, latents = encode_image(img, model)
    data = stream.to_bytes()
    Path(args.out).write_bytes(data)
    n_px = img.shape[0] * img.shape[1]
    est = model.rate_estimate(latents)
    print(f"{len(data)} bytes ({len(data) * 8 / n_px:.4f} bpp, "
          f"model estimate {est.bpp(n_px):.4f} bpp)")
    return 0


def cmd_decode(args) -> int:
    from .checkpoint import load_checkpoint
    from .coding import decode_image
    model, _ = load_checkpoint(args.checkpoint)
    result = decode_image(Path(getattr(args, "in")).read_bytes(), model)
    _save_image(args.out, result.image)
    if args.seg:
        if result.segmentation is None:
            raise UserError("this checkpoint has no segmentation head")
        _save_image(args.seg, np.stack([result.segmentation] * 3, axis=-1))
    print(f"decoded {result.image.shape[1]}×{result.image.shape[0]} image to {args.out}")
    return 0


def cmd_eval(args) -> int:
    from . import metrics
    ref = _load_image(args.ref)
    test = _load_image(args.test)
    wanted = args.metrics.split(",")
    record: dict = {"ref": args.ref, "test": args.test}
    mask = None
    if args.mask:
        from PIL import Image
        mask = (np.asarray(Image.open(args.mask)) > 0).astype(np.uint8)
    for m in wanted:
        if m not in ("psnr", "gmsd"):
            raise UserError(f"unknown metric {m!r}")
        record[m] = getattr(metrics, m)(ref, test)
        if mask is not None:
            record[f"{m}_natural"] = metrics.masked_quality(ref, test, mask, m)
            record[f"{m}_synthetic"] = metrics.masked_quality(ref, test, 1 - mask, m)
    print(json.dumps(record, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    from .evaluation import rd_sweep
    curve = rd_sweep(args.checkpoints, args.manifest, label=args.label,
                     split=args.split, rate_source=args.rate_source,
                     records_dir=args.records, min_points=args.min_points,
                     warn=log.warning)
    curve.save(args.out)
    print(f"curve with {len(curve.points)} points written to {args.out}")
    return 0


def cmd_bdrate(args) -> int:
    from .evaluation import RDCurve, bd_rate_report, ingest_external

    def load_curve(path: str) -> RDCurve:
        text = Path(path).read_text().lstrip()
        if text.startswith("{"):
            return RDCurve.load(path)
        return ingest_external(path)

    anchor = load_curve(args.anchor)
    test = load_curve(args.test)
    rep = bd_rate_report(anchor, test, args.quality, degree=args.degree)
    print(json.dumps({
        "anchor": anchor.label, "test": test.label, "quality": rep.quality,
        "bd_rate_percent": rep.bd_rate_percent, "overlap": list(rep.overlap),
        "fit_residuals": [rep.anchor_residual, rep.test_residual]}, sort_keys=True))
    return 0


def cmd_plot(args) -> int:
    from .evaluation import RDCurve, plot_rd
    curves = [RDCurve.load(p) for p in args.curves]
    plot_rd(curves, args.quality, args.out)
    print(f"plot written to {args.out}")
    return 0


def cmd_report(args) -> int:
    from .evaluation import write_report
    rows = []
    for path in args.bdrate_json:
        data = json.loads(Path(path).read_text())
        if "results" in data:
            rows.append((data["test"], {q: r["bd_rate_percent"]
                                        for q, r in data["results"].items()}))
        else:
            rows.append((Path(path).stem, data))
    write_report(Path(args.out).parent, Path(args.out).name, args.title, rows)
    print(f"report written to {args.out}.txt / {args.out}.json")
    return 0


def cmd_experiment(args) -> int:
    from .experiment import run_experiment
    spec = json.loads(Path(args.spec).read_text())
    if args.global_seed is not None:
        spec["seed"] = args.global_seed
    results = run_experiment(spec, workspace=".", force=args.force)
    for stage, files in results.items():
        print(f"{stage}: {len(files)} artifact(s)")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise UserError(f"{path} does not exist")
    head = path.read_bytes()[:4] if path.is_file() else b""
    if head == b"SCCK":
        from .checkpoint import read_header
        h = read_header(path)
        arch = h["architecture"]
        cfg = h.get("train_config", {})
        print(f"checkpoint: backbone={arch['backbone']} decoders={arch['decoders']} "
              f"C_y={arch['latent_channels']} C_z={arch['hyper_channels']} "
              f"stages={arch['stages']} slices={arch['slices']}")
        if cfg:
            print(f"training: corpus={cfg.get('corpus')} lambda={cfg.get('lam')} "
                  f"phi={cfg.get('phi')} epochs={cfg.get('epochs')} seed={cfg.get('seed')}")
        print(f"extra: {h.get('extra', {})}")
        print(f"parameters: {len(h['params'])} tensors")
    elif head == b"SCB1":
        from .coding import Bitstream
        s = Bitstream.parse(path.read_bytes())
        print(f"bitstream: {s.width}×{s.height} (padded {s.padded_width}×{s.padded_height}) "
              f"backbone={s.backbone} C_y={s.latent_channels} C_z={s.hyper_channels} "
              f"slices={s.slices} seg={s.has_seg}")
        print(f"payloads: z={len(s.z_payload)}B y={[len(p) for p in s.y_payloads]}B "
              f"header={s.header_bytes}B total={s.total_bytes}B")
    elif path.suffix == ".json":
        data = json.loads(path.read_text())
        if "master_seed" in data:
            splits = [s["split"] for s in data["samples"]]
            print(f"manifest: {data['n']} samples ({splits.count('test')} test) "
                  f"size={data['size']} seed={data['master_seed']} "
                  f"patch=[{data['patch_min']},{data['patch_max']}]")
        elif "points" in data:
            print(f"curve {data['label']!r}: "
                  + ", ".join(f"({p['bpp']:.4f} bpp, {p['psnr']:.2f} dB)" for p in data["points"]))
        else:
            print(json.dumps(data, indent=1, sort_keys=True)[:2000])
    else:
        raise UserError(f"unknown artifact type: {path} (magic {head!r})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scicodec",
                                description="multi-task screen content image codec")
    p.add_argument("--verbose", action="store_true")
    p.add_argument("--workspace", metavar="DIR",
                   help="run inside DIR; relative paths resolve against it")
    p.add_argument("--seed", dest="global_seed", type=int, default=None,
                   help="override the seed of the invoked command")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("toypools", help="generate procedural demo pools")
    sp.add_argument("--out", required=True)
    sp.add_argument("--synthetic", type=int, default=20)
    sp.add_argument("--natural", type=int, default=20)
    sp.add_argument("--size", type=int, default=512)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_toypools)

    sp = sub.add_parser("dataset", help="build the composite corpus")
    sp.add_argument("--synthetic", required=True, help="synthetic image pool directory")
    sp.add_argument("--natural", required=True, help="natural image pool directory")
    sp.add_argument("--n", type=int, default=3100)
    sp.add_argument("--test", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--size", type=int, default=512)
    sp.add_argument("--patch-min", type=int, default=128)
    sp.add_argument("--patch-max", type=int, default=192)
    sp.set_defaults(func=cmd_dataset)

    sp = sub.add_parser("train", help="train one configuration")
    sp.add_argument("--config", required=True, help="JSON TrainConfig")
    sp.add_argument("--manifest", help="composite corpus manifest")
    sp.add_argument("--images", help="plain image directory")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("grid", help="train a (lambda, phi) grid")
    sp.add_argument("--config", required=True)
    sp.add_argument("--pairs", help='JSON list of [lambda, phi] pairs (default: paper grid)')
    sp.add_argument("--manifest")
    sp.add_argument("--images")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("encode", help="encode an image to a bitstream")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("decode", help="decode a bitstream")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--in", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seg", help="also write the segmentation map here")
    sp.set_defaults(func=cmd_decode)

    sp = sub.add_parser("eval", help="compute quality metrics for an image pair")
    sp.add_argument("--ref", required=True)
    sp.add_argument("--test", required=True)
    sp.add_argument("--mask", help="binary mask for region-restricted metrics")
    sp.add_argument("--metrics", default="psnr,gmsd")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("sweep", help="RD curve over a checkpoint ladder")
    sp.add_argument("--checkpoints", nargs="+", required=True)
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--label", required=True)
    sp.add_argument("--split", default="test")
    sp.add_argument("--rate-source", default="coded", choices=("coded", "estimate"))
    sp.add_argument("--records", help="directory for per-image records")
    sp.add_argument("--min-points", type=int, default=2)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("bdrate", help="BD-rate of test vs anchor curve")
    sp.add_argument("--anchor", required=True, help="curve JSON or external results JSONL")
    sp.add_argument("--test", required=True)
    sp.add_argument("--quality", default="psnr", choices=("psnr", "gmsd"))
    sp.add_argument("--degree", type=int, default=3)
    sp.set_defaults(func=cmd_bdrate)

    sp = sub.add_parser("plot", help="RD plot for one or more curves")
    sp.add_argument("--curves", nargs="+", required=True)
    sp.add_argument("--quality", default="psnr", choices=("psnr", "gmsd"))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_plot)

    sp = sub.add_parser("report", help="aggregate BD-rate results into a table")
    sp.add_argument("bdrate_json", nargs="+")
    sp.add_argument("--title", default="BD-rate summary")
    sp.add_argument("--out", required=True, help="output path without extension")
    sp.set_defaults(func=cmd_report)

    sp = sub.add_parser("experiment", help="run an experiment spec (DAG)")
    sp.add_argument("spec")
    sp.add_argument("--force", action="store_true", help="ignore the content-hash gate")
    sp.set_defaults(func=cmd_experiment)

    sp = sub.add_parser("inspect", help="summarize a checkpoint/bitstream/manifest/curve")
    sp.add_argument("path")
    sp.set_defaults(func=cmd_inspect)

    return p


def _apply_globals(args):
    if args.workspace:
        import os
        if hasattr(args, "spec"):  # spec file resolves against the caller's cwd
            args.spec = str(Path(args.spec).resolve())
        os.makedirs(args.workspace, exist_ok=True)
        os.chdir(args.workspace)
    if args.global_seed is not None and hasattr(args, "seed"):
        args.seed = args.global_seed


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _apply_globals(args)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # internal error
        logging.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
