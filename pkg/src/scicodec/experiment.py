"""Experiment DAG: dataset -> training grids -> sweeps -> BD-rate -> report.

A spec file names stages with explicit dependencies; every stage is gated
by a content hash of its resolved config plus the output hashes of its
dependencies, so re-running an unchanged spec is a no-op and a corrupted
intermediate artifact fails the stages that depend on it. The provenance
ledger (one JSON record per stage execution) makes every artifact
re-derivable from the spec and seeds alone.
"""

from __future__ import annotations

import hashlib
import json
import logging
from pathlib import Path

from . import evaluation, toydata
from .dataset import build_dataset
from .training import Corpus, TrainConfig, run_grid

log = logging.getLogger(__name__)


class ExperimentError(ValueError):
    pass


def file_sha(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_key(stage: dict, dep_hashes: dict[str, dict[str, str]], seed: int) -> str:
    payload = json.dumps({"stage": stage, "deps": dep_hashes, "seed": seed}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.ledger_path = self.root / "provenance.jsonl"

    def ledger_entries(self) -> list[dict]:
        if not self.ledger_path.exists():
            return []
        return [json.loads(line) for line in self.ledger_path.read_text().splitlines() if line]

    def append_ledger(self, record: dict):
        with open(self.ledger_path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    def hash_outputs(self, rel_paths: list[str]) -> dict[str, str]:
        return {rel: file_sha(self.root / rel) for rel in sorted(rel_paths)}


def _toy_pools(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    size = stage.get("size", 512)
    out = []
    for kind, maker in (("synthetic", toydata.generate_synthetic_pool),
                        ("natural", toydata.generate_natural_pool)):
        n = stage.get(kind, 0)
        if n:
            paths = maker(ws.root / "pools" / kind, n, size=size,
                          seed=seed ^ (0 if kind == "synthetic" else 1))
            out += [str(p.relative_to(ws.root)) for p in paths]
    return out


def _dataset(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    out_dir = ws.root / stage.get("out", "corpus")
    manifest = build_dataset(
        synthetic_pool=ws.root / stage["synthetic_pool"],
        natural_pool=ws.root / stage["natural_pool"],
        n=stage["n"], test_n=stage["test_n"],
        master_seed=stage.get("seed", seed), out_dir=out_dir,
        size=stage.get("size", 512), patch_min=stage.get("patch_min", 128),
        patch_max=stage.get("patch_max", 192))
    rel = out_dir.relative_to(ws.root)
    files = [f"{rel}/manifest.json"]
    files += [f"{rel}/{e.image}" for e in manifest.samples]
    files += [f"{rel}/{e.mask}" for e in manifest.samples]
    return files


def _resolve_corpus(spec: dict, ws: Workspace) -> Corpus:
    if "manifest" in spec:
        return Corpus.from_manifest(ws.root / spec["manifest"], spec.get("split", "train"))
    if "directory" in spec:
        return Corpus.from_directory(ws.root / spec["directory"])
    raise ExperimentError(f"corpus spec needs 'manifest' or 'directory': {spec}")


def _train_grid(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    base = TrainConfig.from_dict({"seed": seed, **stage["config"]})
    corpus = _resolve_corpus(stage["corpus"], ws)
    out_dir = ws.root / stage.get("out", f"ckpts/{stage['name']}")
    paths = run_grid(base, [tuple(p) for p in stage["pairs"]], corpus, out_dir)
    return [str(p.relative_to(ws.root)) for p in paths]


def _sweep(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    ckpts = [ws.root / rel for rel in outputs_of(stage["checkpoints"])
             if rel.endswith(".best.ckpt")]
    if not ckpts:
        raise ExperimentError(f"stage {stage['checkpoints']!r} produced no checkpoints")
    records_dir = ws.root / "records" / stage["name"]
    curve = evaluation.rd_sweep(
        ckpts, ws.root / stage["manifest"], label=stage.get("label", stage["name"]),
        split=stage.get("split", "test"), rate_source=stage.get("rate_source", "coded"),
        records_dir=records_dir, min_points=stage.get("min_points", 2),
        limit=stage.get("limit"), warn=log.warning)
    curve_rel = f"curves/{stage['name']}.curve.json"
    (ws.root / "curves").mkdir(exist_ok=True, parents=True)
    curve.save(ws.root / curve_rel)
    rel_records = [str(p.relative_to(ws.root)) for p in sorted(records_dir.glob("*.jsonl"))]
    return [curve_rel] + rel_records


def _load_records(ws: Workspace, sweep_outputs: list[str]) -> list[list]:
    from .evaluation import SweepRecord
    groups = []
    for rel in sweep_outputs:
        if not rel.endswith(".records.jsonl"):
            continue
        records = [SweepRecord(**json.loads(line))
                   for line in (ws.root / rel).read_text().splitlines() if line]
        groups.append(records)
    return groups


def _ingest(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    """Bring an external codec's results (or a saved curve) into the DAG."""
    src = Path(stage["file"])
    if not src.is_absolute():
        src = ws.root / src
    if stage.get("format", "external-jsonl") == "external-jsonl":
        curve = evaluation.ingest_external(src)
    else:
        curve = evaluation.RDCurve.load(src)
    rel = f"curves/{stage['name']}.curve.json"
    (ws.root / "curves").mkdir(exist_ok=True, parents=True)
    curve.save(ws.root / rel)
    return [rel]


def _bdrate(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    def curve_of(stage_name: str) -> evaluation.RDCurve:
        for rel in outputs_of(stage_name):
            if rel.endswith(".curve.json"):
                return evaluation.RDCurve.load(ws.root / rel)
        raise ExperimentError(f"stage {stage_name!r} produced no curve")

    anchor = curve_of(stage["anchor"])
    test = curve_of(stage["test"])
    degree = stage.get("degree", 3)
    result = {}
    for quality in stage.get("qualities", ["psnr"]):
        rep = evaluation.bd_rate_report(anchor, test, quality, degree)
        result[quality] = {
            "bd_rate_percent": rep.bd_rate_percent,
            "overlap": list(rep.overlap),
            "anchor_residual": rep.anchor_residual,
            "test_residual": rep.test_residual,
        }
    rel = f"bdrate/{stage['name']}.json"
    (ws.root / "bdrate").mkdir(exist_ok=True, parents=True)
    (ws.root / rel).write_text(json.dumps(
        {"anchor": anchor.label, "test": test.label, "degree": degree, "results": result},
        indent=1, sort_keys=True) + "\n")
    return [rel]


def _region_bdrate(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    anchor_records = _load_records(ws, outputs_of(stage["anchor"]))
    test_records = _load_records(ws, outputs_of(stage["test"]))
    nat, syn = evaluation.region_bd_rate(anchor_records, test_records,
                                         degree=stage.get("degree", 3))
    rel = f"bdrate/{stage['name']}.json"
    (ws.root / "bdrate").mkdir(exist_ok=True, parents=True)
    (ws.root / rel).write_text(json.dumps(
        {"natural_percent": nat, "synthetic_percent": syn}, indent=1, sort_keys=True) + "\n")
    return [rel]


def _plot(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    curves = []
    for name in stage["sweeps"]:
        for rel in outputs_of(name):
            if rel.endswith(".curve.json"):
                curves.append(evaluation.RDCurve.load(ws.root / rel))
    rel = f"plots/{stage['name']}.{stage.get('format', 'svg')}"
    (ws.root / "plots").mkdir(exist_ok=True, parents=True)
    evaluation.plot_rd(curves, stage.get("quality", "psnr"), ws.root / rel)
    return [rel]


def _report(stage: dict, ws: Workspace, seed: int, outputs_of) -> list[str]:
    rows = []
    for name in stage["bdrates"]:
        for rel in outputs_of(name):
            data = json.loads((ws.root / rel).read_text())
            if "results" in data:
                cols = {q: r["bd_rate_percent"] for q, r in data["results"].items()}
                rows.append((data["test"], cols))
            else:
                rows.append((name, {"natural": data["natural_percent"],
                                    "synthetic": data["synthetic_percent"]}))
    evaluation.write_report(ws.root / "reports", stage["name"],
                            stage.get("title", "BD-rate summary"), rows)
    return [f"reports/{stage['name']}.txt", f"reports/{stage['name']}.json"]


_RUNNERS = {
    "toy-pools": _toy_pools,
    "dataset": _dataset,
    "train-grid": _train_grid,
    "sweep": _sweep,
    "ingest": _ingest,
    "bdrate": _bdrate,
    "region-bdrate": _region_bdrate,
    "plot": _plot,
    "report": _report,
}


def _topo_order(stages: list[dict]) -> list[dict]:
    by_name = {s["name"]: s for s in stages}
    if len(by_name) != len(stages):
        raise ExperimentError("duplicate stage names")
    order, state = [], {}

    def visit(name: str):
        if state.get(name) == 2:
            return
        if state.get(name) == 1:
            raise ExperimentError(f"stage dependency cycle through {name!r}")
        state[name] = 1
        for dep in by_name[name].get("needs", []):
            if dep not in by_name:
                raise ExperimentError(f"stage {name!r} needs unknown stage {dep!r}")
            visit(dep)
        state[name] = 2
        order.append(by_name[name])

    for s in stages:
        visit(s["name"])
    return order


def run_experiment(spec: dict | str | Path, workspace: str | Path | None = None,
                   force: bool = False) -> dict[str, list[str]]:
    """Execute an experiment spec; returns stage -> produced artifact paths.

    Completed stages with unchanged inputs are skipped via the content-hash
    gate; corrupted outputs of a dependency abort the dependent stage.
    """
    if not isinstance(spec, dict):
        spec = json.loads(Path(spec).read_text())
    ws = Workspace(workspace or spec.get("workspace", "."))
    seed = spec.get("seed", 0)
    stages = _topo_order(spec["stages"])

    latest: dict[str, dict] = {}
    for entry in ws.ledger_entries():
        latest[entry["stage"]] = entry

    results: dict[str, list[str]] = {}
    hashes: dict[str, dict[str, str]] = {}

    def outputs_of(stage_name: str) -> list[str]:
        if stage_name not in results:
            raise ExperimentError(f"stage {stage_name!r} has not produced outputs")
        return results[stage_name]

    for stage in stages:
        name = stage["name"]
        kind = stage.get("kind")
        if kind not in _RUNNERS:
            raise ExperimentError(f"stage {name!r} has unknown kind {kind!r}")
        dep_hashes = {dep: hashes[dep] for dep in stage.get("needs", [])}
        keyed_stage = stage
        if kind == "ingest":  # external inputs participate in the gate
            src = Path(stage["file"])
            src = src if src.is_absolute() else ws.root / src
            keyed_stage = {**stage, "source_sha": file_sha(src) if src.exists() else None}
        key = _stage_key(keyed_stage, dep_hashes, seed)

        prior = latest.get(name)
        if (not force and prior and prior["key"] == key and prior["status"] == "ok"
                and all((ws.root / rel).exists() for rel in prior["outputs"])):
            log.info("stage %s: up to date, skipping", name)
            results[name] = list(prior["outputs"])
            hashes[name] = dict(prior["outputs"])
            continue

        # about to do real work: dependencies must match their ledgered hashes
        for dep in stage.get("needs", []):
            current = ws.hash_outputs(results[dep])
            if current != hashes[dep]:
                changed = [k for k in current if current[k] != hashes[dep].get(k)]
                raise ExperimentError(
                    f"stage {name!r}: dependency {dep!r} outputs changed on disk "
                    f"(hash mismatch in {changed[:3]})")

        log.info("stage %s: running (%s)", name, kind)
        try:
            out_files = _RUNNERS[kind](stage, ws, seed, outputs_of)
        except Exception:
            ws.append_ledger({"stage": name, "key": key, "status": "failed", "outputs": {}})
            raise
        out_hashes = ws.hash_outputs(out_files)
        ws.append_ledger({"stage": name, "key": key, "status": "ok", "outputs": out_hashes})
        results[name] = out_files
        hashes[name] = out_hashes
    return results
