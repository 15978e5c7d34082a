"""Rate-distortion(-segmentation) training loop and the experiment grid."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .checkpoint import save_checkpoint
from .dataset import DatasetManifest
from .models import MultiTaskCodec

log = logging.getLogger(__name__)

# (lambda, phi) pairs of the multi-task grid; single-task runs reuse the
# lambda values alone.
PAPER_GRID = ((1.0, 1e-5), (1e-1, 1e-5), (1e-2, 1e-6), (1e-3, 1e-7), (1e-4, 1e-7))

CORPUS_LABELS = {"natural": "Natural", "synthetic": "Synthetic", "s/n-composite": "S/N"}


class ConfigError(ValueError):
    pass


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    backbone: str = "hyperprior"
    decoders: int = 1
    corpus: str = "natural"
    lam: float = 1e-2
    phi: float = 0.0
    lr: float = 1e-4
    epochs: int = 50
    batch: int = 8
    crop: int = 64
    seed: int = 0
    latent_channels: int | None = None
    hyper_channels: int | None = None
    hidden_channels: int | None = None
    stages: int = 4
    slices: int | None = None
    name_suffix: str = ""

    def __post_init__(self):
        if self.decoders not in (1, 2):
            raise ConfigError("decoders must be 1 or 2")
        if self.decoders == 1 and self.phi != 0.0:
            raise ConfigError("phi must be 0 for a single-decoder codec")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        if self.phi < 0:
            raise ConfigError("phi must be non-negative")
        if self.corpus not in CORPUS_LABELS:
            raise ConfigError(f"corpus must be one of {sorted(CORPUS_LABELS)}")
        if self.decoders == 2 and self.corpus != "s/n-composite":
            raise ConfigError("the two-decoder codec needs the mask-bearing composite corpus")

    @property
    def name(self) -> str:
        base = f"{self.backbone}-{self.decoders}-Decoder"
        if self.decoders == 1:
            base += f"-{CORPUS_LABELS[self.corpus]}"
        if self.name_suffix:
            base += f"-{self.name_suffix}"
        return base

    @property
    def run_name(self) -> str:
        run = f"{self.name}-lam{self.lam:g}"
        if self.decoders == 2:
            run += f"-phi{self.phi:g}"
        return run

    @property
    def file_stem(self) -> str:
        # "S/N" appears in display names; keep artifact paths slash-free
        return self.run_name.replace("/", "-")

    def resolved_channels(self) -> tuple[int, int]:
        c_y = self.latent_channels if self.latent_channels else default_latent_channels(self.lam)
        c_z = self.hyper_channels if self.hyper_channels else 128
        return c_y, c_z

    def build_model(self) -> MultiTaskCodec:
        c_y, c_z = self.resolved_channels()
        return MultiTaskCodec(
            backbone=self.backbone, decoders=self.decoders, latent_channels=c_y,
            hyper_channels=c_z, hidden_channels=self.hidden_channels,
            stages=self.stages, slices=self.slices, seed=self.seed)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


def default_latent_channels(lam: float) -> int:
    """Wider transforms for the high-quality operating points."""
    return 192 if lam >= 1e-2 else 128


@dataclass
class LossBreakdown:
    R: float
    D_X: float
    D_S: float
    lam: float
    phi: float

    @property
    def total(self) -> float:
        return self.R + self.lam * self.D_X + self.phi * self.D_S

    def to_record(self, step: int) -> dict:
        return {"step": step, "R": self.R, "D_X": self.D_X, "D_S": self.D_S,
                "total": self.total}


def loss_breakdown(rate_bpp: float, d_x: float, d_s: float, lam: float, phi: float) -> LossBreakdown:
    return LossBreakdown(R=float(rate_bpp), D_X=float(d_x), D_S=float(d_s), lam=lam, phi=phi)


def loss(x, x_hat, s, s_hat, rate_bpp: float, lam: float, phi: float) -> LossBreakdown:
    """Rate-distortion(-segmentation) breakdown from raw tensors.

    D_X and D_S are means over every element; segmentation tensors may be
    None only when phi is 0.
    """
    d_x = float(torch.mean((torch.as_tensor(x) - torch.as_tensor(x_hat)) ** 2))
    if s is None or s_hat is None:
        if phi > 0:
            raise ConfigError("phi > 0 requires segmentation maps")
        d_s = 0.0
    else:
        d_s = float(torch.mean((torch.as_tensor(s) - torch.as_tensor(s_hat)) ** 2))
    return loss_breakdown(rate_bpp, d_x, d_s, lam, phi)


class Corpus:
    """Training images (and masks when composite) behind a uniform interface."""

    def __init__(self, images: list[Path], masks: list[Path] | None = None):
        if not images:
            raise ConfigError("empty corpus")
        if masks is not None and len(masks) != len(images):
            raise ConfigError("image/mask count mismatch")
        self.images = images
        self.masks = masks
        self._cache: dict[int, tuple[np.ndarray, np.ndarray | None]] = {}

    def __len__(self) -> int:
        return len(self.images)

    @property
    def has_masks(self) -> bool:
        return self.masks is not None

    def load(self, i: int) -> tuple[np.ndarray, np.ndarray | None]:
        if i not in self._cache:
            from PIL import Image
            img = np.asarray(Image.open(self.images[i]).convert("RGB"), dtype=np.uint8)
            mask = None
            if self.masks is not None:
                mask = (np.asarray(Image.open(self.masks[i])) > 0).astype(np.uint8)
            self._cache[i] = (img, mask)
        return self._cache[i]

    @classmethod
    def from_manifest(cls, manifest_path: str | Path, split: str = "train") -> "Corpus":
        manifest = DatasetManifest.load(manifest_path)
        base = Path(manifest_path).parent
        entries = manifest.split_entries(split)
        return cls([base / e.image for e in entries], [base / e.mask for e in entries])

    @classmethod
    def from_directory(cls, directory: str | Path) -> "Corpus":
        exts = {".png", ".jpg", ".jpeg", ".bmp"}
        files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() in exts)
        return cls(files)


def _crop_batch(corpus: Corpus, indices, offsets, crop: int, need_masks: bool
                ) -> tuple[torch.Tensor, torch.Tensor | None]:
    imgs, masks = [], []
    for i, (oy, ox) in zip(indices, offsets):
        img, mask = corpus.load(int(i))
        patch = img[oy: oy + crop, ox: ox + crop].astype(np.float32) / 255.0
        imgs.append(patch.transpose(2, 0, 1))
        if need_masks:
            masks.append(mask[oy: oy + crop, ox: ox + crop].astype(np.float32)[None])
    x = torch.from_numpy(np.stack(imgs))
    m = torch.from_numpy(np.stack(masks)) if need_masks else None
    return x, m


def train(config: TrainConfig, corpus: Corpus, out_dir: str | Path,
          log_every: int = 1) -> Path:
    """Deterministic Adam training; returns the path of the best checkpoint.

    Batch composition is a pure function of (seed, epoch, step) and the
    quantization-noise stream is seeded from the config, so identical
    configs yield byte-identical checkpoints.
    """
    if config.decoders == 2 and not corpus.has_masks:
        raise ConfigError("two-decoder training requires ground-truth masks")
    if config.phi > 0 and not corpus.has_masks:
        raise ConfigError("phi > 0 requires ground-truth masks")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.use_deterministic_algorithms(True)

    model = config.build_model()
    model.train()
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    noise_rng = torch.Generator().manual_seed(config.seed ^ 0x5EED)

    n = len(corpus)
    steps_per_epoch = max(1, n // config.batch)
    log_path = out / f"{config.file_stem}.log.jsonl"
    log_f = open(log_path, "w")
    best = float("inf")
    best_path = out / f"{config.file_stem}.best.ckpt"
    last_path = out / f"{config.file_stem}.last.ckpt"
    num_pixels = config.batch * config.crop * config.crop
    step = 0
    try:
        for epoch in range(config.epochs):
            order = np.random.default_rng([config.seed, 1000003, epoch]).permutation(n)
            epoch_total = 0.0
            for s in range(steps_per_epoch):
                idx = order[(s * config.batch) % n: (s * config.batch) % n + config.batch]
                if len(idx) < config.batch:
                    idx = np.concatenate([idx, order[: config.batch - len(idx)]])
                crop_rng = np.random.default_rng([config.seed, 7919, step])
                offsets = []
                for i in idx:
                    img_i, _ = corpus.load(int(i))
                    if img_i.shape[0] < config.crop or img_i.shape[1] < config.crop:
                        raise ConfigError(
                            f"corpus image {corpus.images[int(i)]} smaller than crop {config.crop}")
                    offsets.append((int(crop_rng.integers(0, img_i.shape[0] - config.crop + 1)),
                                    int(crop_rng.integers(0, img_i.shape[1] - config.crop + 1))))
                x, m = _crop_batch(corpus, idx, offsets, config.crop, corpus.has_masks)

                fwd = model(x, noise_rng)
                rate = fwd.bpp(num_pixels)
                d_x = torch.mean((x - fwd.x_hat) ** 2)
                total = rate + config.lam * d_x
                if config.decoders == 2 and config.phi > 0:
                    d_s = torch.mean((m - fwd.s_hat) ** 2)
                    total = total + config.phi * d_s
                    d_s_val = float(d_s.detach())
                elif config.decoders == 2:
                    with torch.no_grad():
                        d_s_val = float(torch.mean((m - fwd.s_hat) ** 2))
                else:
                    d_s_val = 0.0

                if not torch.isfinite(total):
                    dump = out / f"{config.file_stem}.diverged.npz"
                    np.savez(dump, x=x.numpy(), step=step)
                    raise TrainingDiverged(
                        f"non-finite loss at step {step}; offending batch dumped to {dump}")

                opt.zero_grad()
                total.backward()
                opt.step()

                bd = loss_breakdown(float(rate.detach()), float(d_x.detach()),
                                    d_s_val, config.lam, config.phi)
                epoch_total += bd.total
                if step % log_every == 0:
                    log_f.write(json.dumps(bd.to_record(step)) + "\n")
                step += 1
            epoch_mean = epoch_total / steps_per_epoch
            save_checkpoint(last_path, model, train_config=config.to_dict(),
                            extra={"epoch": epoch, "mean_total": epoch_mean})
            if epoch_mean < best:
                best = epoch_mean
                save_checkpoint(best_path, model, train_config=config.to_dict(),
                                extra={"epoch": epoch, "mean_total": epoch_mean})
    finally:
        log_f.close()
    return best_path


def run_grid(base: TrainConfig, pairs, corpus: Corpus, out_dir: str | Path) -> list[Path]:
    """Train one checkpoint per (lambda, phi) pair.

    Single-decoder configs take only the lambda value from each pair.
    """
    pairs = list(pairs)
    if not pairs:
        raise ConfigError("empty (lambda, phi) grid")
    configs = []
    for lam, phi in pairs:
        c = replace(base, lam=lam, phi=phi if base.decoders == 2 else 0.0)
        configs.append(c)
    names = [c.run_name for c in configs]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate run names in grid: {names}")
    out = []
    for c in configs:
        log.info("training %s", c.run_name)
        out.append(train(c, corpus, out_dir))
    return out
