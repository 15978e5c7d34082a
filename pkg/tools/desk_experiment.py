#!/usr/bin/env python3
"""Desk-scale domain-shift experiment: spec construction plus criteria probes.

Shared by the acceptance suite (which imports it) and by manual calibration
runs. The experiment trains four codec families (natural-, synthetic-,
composite-trained single-decoder, and the two-decoder multi-task codec) at
three lambda points each on a 200-image 128x128 composite corpus, then
sweeps the composite test split and compares BD-rates.
"""

from __future__ import annotations

import json
import sys
import time
from pathlib import Path

import numpy as np

LAMBDAS = [8.0, 60.0, 480.0]
PHI = 0.2  # constant segmentation weight across the multi-task grid
MODEL = dict(backbone="hyperprior", lr=1e-3, batch=8, crop=64,
             latent_channels=32, hyper_channels=24, hidden_channels=32, stages=3)
TRAIN_STEPS = 5376  # equal optimization budget for every corpus
N_IMAGES = 200
N_TEST = 25
SEED = 20240808


def experiment_spec(train_steps: int = TRAIN_STEPS, lambdas=LAMBDAS,
                    phi: float = PHI, n: int = N_IMAGES,
                    test_n: int = N_TEST, seed: int = SEED) -> dict:
    pairs1 = [[lam, 0.0] for lam in lambdas]
    pairs2 = [[lam, phi] for lam in lambdas]
    pool_size = 40
    steps_per_epoch_pool = pool_size // MODEL["batch"]
    steps_per_epoch_comp = (n - test_n) // MODEL["batch"]

    def grid(name, corpus_kind, corpus_ref, decoders, pairs):
        steps = steps_per_epoch_comp if corpus_kind == "s/n-composite" else steps_per_epoch_pool
        model = {**MODEL, "epochs": max(1, round(train_steps / steps))}
        return {"name": name, "kind": "train-grid", "needs": ["corpus"],
                "config": {**model, "decoders": decoders, "corpus": corpus_kind},
                "pairs": pairs, "corpus": corpus_ref}

    def sweep(name, ckpt_stage):
        return {"name": name, "kind": "sweep", "needs": [ckpt_stage, "corpus"],
                "checkpoints": ckpt_stage, "manifest": "corpus/manifest.json",
                "label": name, "split": "test", "rate_source": "coded"}

    stages = [
        {"name": "pools", "kind": "toy-pools", "synthetic": pool_size,
         "natural": pool_size, "size": 128},
        {"name": "corpus", "kind": "dataset", "needs": ["pools"],
         "synthetic_pool": "pools/synthetic", "natural_pool": "pools/natural",
         "n": n, "test_n": test_n, "size": 128, "patch_min": 56, "patch_max": 80},
        grid("train-nat1", "natural", {"directory": "pools/natural"}, 1, pairs1),
        grid("train-syn1", "synthetic", {"directory": "pools/synthetic"}, 1, pairs1),
        grid("train-sn1", "s/n-composite", {"manifest": "corpus/manifest.json"}, 1, pairs1),
        grid("train-mt2", "s/n-composite", {"manifest": "corpus/manifest.json"}, 2, pairs2),
        sweep("sweep-nat1", "train-nat1"),
        sweep("sweep-syn1", "train-syn1"),
        sweep("sweep-sn1", "train-sn1"),
        sweep("sweep-mt2", "train-mt2"),
        {"name": "bd-sn1", "kind": "bdrate", "needs": ["sweep-nat1", "sweep-sn1"],
         "anchor": "sweep-nat1", "test": "sweep-sn1", "degree": 2,
         "qualities": ["psnr", "gmsd"]},
        {"name": "bd-mt2", "kind": "bdrate", "needs": ["sweep-nat1", "sweep-mt2"],
         "anchor": "sweep-nat1", "test": "sweep-mt2", "degree": 2,
         "qualities": ["psnr", "gmsd"]},
        {"name": "bd-syn1", "kind": "bdrate", "needs": ["sweep-nat1", "sweep-syn1"],
         "anchor": "sweep-nat1", "test": "sweep-syn1", "degree": 2,
         "qualities": ["psnr"]},
        {"name": "bd-region-syn1", "kind": "region-bdrate",
         "needs": ["sweep-nat1", "sweep-syn1"],
         "anchor": "sweep-nat1", "test": "sweep-syn1", "degree": 2},
        {"name": "summary", "kind": "report",
         "needs": ["bd-sn1", "bd-mt2", "bd-syn1"],
         "bdrates": ["bd-sn1", "bd-mt2", "bd-syn1"],
         "title": "Desk-scale BD-rates vs natural-trained anchor"},
        {"name": "rd-plot", "kind": "plot", "needs": ["sweep-nat1", "sweep-syn1",
                                                      "sweep-sn1", "sweep-mt2"],
         "sweeps": ["sweep-nat1", "sweep-syn1", "sweep-sn1", "sweep-mt2"],
         "quality": "psnr"},
    ]
    return {"seed": seed, "stages": stages}


def segmentation_iou(workspace: Path, results: dict, split: str = "train",
                     limit: int = 40) -> dict[str, float]:
    """Mean IoU of the decoded segmentation maps per 2-decoder checkpoint."""
    from scicodec.checkpoint import load_checkpoint
    from scicodec.coding import encode_image, decode_image
    from scicodec.dataset import DatasetManifest, load_sample_arrays

    manifest = DatasetManifest.load(workspace / "corpus" / "manifest.json")
    entries = manifest.split_entries(split)[:limit]
    ious = {}
    for rel in results["train-mt2"]:
        if not rel.endswith(".best.ckpt"):
            continue
        model, header = load_checkpoint(workspace / rel)
        scores = []
        for e in entries:
            img, mask = load_sample_arrays(workspace / "corpus", e)
            stream, _ = encode_image(img, model)
            seg = decode_image(stream.to_bytes(), model).segmentation
            pred = seg >= 0.5
            truth = mask.astype(bool)
            inter = np.logical_and(pred, truth).sum()
            union = np.logical_or(pred, truth).sum()
            scores.append(inter / union if union else 1.0)
        ious[header["train_config"]["lam"]] = float(np.mean(scores))
    return ious


def read_lam(ckpt_path: Path) -> float:
    from scicodec.checkpoint import read_header
    return read_header(ckpt_path)["train_config"]["lam"]


def rate_agreement(workspace: Path, results: dict, n_images: int = 10) -> list[dict]:
    """Coded payload vs model rate estimate on test images (criterion 2 probe)."""
    from scicodec.checkpoint import load_checkpoint
    from scicodec.coding import encode_image
    from scicodec.dataset import DatasetManifest, load_sample_arrays

    manifest = DatasetManifest.load(workspace / "corpus" / "manifest.json")
    entries = manifest.split_entries("test")[:n_images]
    ckpts = [rel for rel in results["train-mt2"] if rel.endswith(".best.ckpt")]
    by_lam = sorted(ckpts, key=lambda rel: read_lam(workspace / rel))
    model, _ = load_checkpoint(workspace / by_lam[-1])
    rows = []
    for e in entries:
        img, _ = load_sample_arrays(workspace / "corpus", e)
        stream, latents = encode_image(img, model)
        est_bytes = model.rate_estimate(latents).total_bits / 8
        rows.append({"image": e.index, "payload": stream.payload_bytes,
                     "estimate": est_bytes, "header": stream.header_bytes,
                     "within": abs(stream.payload_bytes - est_bytes) <= 0.01 * est_bytes + 32})
    return rows


def collect_criteria(workspace: Path, results: dict) -> dict:
    out = {}
    for name in ("bd-sn1", "bd-mt2", "bd-syn1", "bd-region-syn1"):
        out[name] = json.loads((workspace / "bdrate" / f"{name}.json").read_text())
    out["iou"] = segmentation_iou(workspace, results)
    out["rate_agreement"] = rate_agreement(workspace, results)
    return out


def main():
    from scicodec.experiment import run_experiment

    workspace = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("/tmp/desk_ws")
    spec = experiment_spec()
    t0 = time.time()
    results = run_experiment(spec, workspace=workspace)
    train_s = time.time() - t0
    crit = collect_criteria(workspace, results)
    report = {
        "minutes": train_s / 60,
        "sn1_vs_nat1_psnr": crit["bd-sn1"]["results"]["psnr"]["bd_rate_percent"],
        "mt2_vs_nat1_psnr": crit["bd-mt2"]["results"]["psnr"]["bd_rate_percent"],
        "syn1_vs_nat1_psnr": crit["bd-syn1"]["results"]["psnr"]["bd_rate_percent"],
        "region_natural": crit["bd-region-syn1"]["natural_percent"],
        "region_synthetic": crit["bd-region-syn1"]["synthetic_percent"],
        "iou": crit["iou"],
        "rate_rows": crit["rate_agreement"],
    }
    print(json.dumps(report, indent=1))
    (workspace / "criteria.json").write_text(json.dumps(report, indent=1))


if __name__ == "__main__":
    main()
