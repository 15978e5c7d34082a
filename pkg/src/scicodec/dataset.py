"""Composite SCI corpus synthesis with ground-truth region masks.

A sample is a synthetic (screen-content) source image with one natural
patch pasted at a random location; the binary mask marks the natural
region with 1 and the synthetic remainder with 0. Every random draw for
sample ``i`` comes from a stream keyed by ``(master_seed, i)``, so corpus
generation is order-independent and byte-reproducible. Images and masks
are stored as lossless PNG; anything lossy would corrupt the sharp-edged,
noise-free statistics that make the synthetic region synthetic.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from . import __version__

log = logging.getLogger(__name__)

CANVAS = 512
PATCH_MIN = 128
PATCH_MAX = 192
_SPLIT_KEY = 0x5B117  # split draw stream, distinct from per-sample streams


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Rect:
    x: int
    y: int
    w: int
    h: int

    def __post_init__(self):
        if self.x < 0 or self.y < 0 or self.w <= 0 or self.h <= 0:
            raise DatasetError(f"degenerate rect {self}")

    @property
    def area(self) -> int:
        return self.w * self.h

    def slices(self) -> tuple[slice, slice]:
        return slice(self.y, self.y + self.h), slice(self.x, self.x + self.w)


@dataclass
class CompositeSample:
    image: np.ndarray  # H×W×3 float in [0,1]
    mask: np.ndarray   # H×W uint8, 1 = natural region
    rect: Rect
    synthetic_source_id: str
    natural_source_id: str
    seed_offset: int


def sample_patch_rect(rng: np.random.Generator, width: int, height: int,
                      patch_min: int = PATCH_MIN, patch_max: int = PATCH_MAX) -> Rect:
    """Uniform patch size in [patch_min, patch_max]^2 at a uniform position
    fully inside the canvas."""
    if width < patch_max or height < patch_max:
        raise DatasetError(
            f"canvas {width}×{height} too small for patches up to {patch_max}")
    w = int(rng.integers(patch_min, patch_max + 1))
    h = int(rng.integers(patch_min, patch_max + 1))
    x = int(rng.integers(0, width - w + 1))
    y = int(rng.integers(0, height - h + 1))
    return Rect(x=x, y=y, w=w, h=h)


def composite(synthetic: np.ndarray, natural: np.ndarray, rect: Rect,
              rng: np.random.Generator, synthetic_id: str = "", natural_id: str = "",
              seed_offset: int = 0) -> CompositeSample:
    """Paste a rect-sized crop of ``natural`` (origin uniform at random)
    into ``synthetic`` and build the indicator mask from the rect alone."""
    h, w = synthetic.shape[:2]
    if rect.x + rect.w > w or rect.y + rect.h > h:
        raise DatasetError(f"rect {rect} exceeds canvas {w}×{h}")
    nh, nw = natural.shape[:2]
    if nh < rect.h or nw < rect.w:
        raise DatasetError(f"natural source {nw}×{nh} smaller than patch {rect.w}×{rect.h}")
    oy = int(rng.integers(0, nh - rect.h + 1))
    ox = int(rng.integers(0, nw - rect.w + 1))
    image = synthetic.copy()
    ys, xs = rect.slices()
    image[ys, xs] = natural[oy: oy + rect.h, ox: ox + rect.w]
    mask = np.zeros((h, w), dtype=np.uint8)
    mask[ys, xs] = 1
    return CompositeSample(image=image, mask=mask, rect=rect,
                           synthetic_source_id=synthetic_id, natural_source_id=natural_id,
                           seed_offset=seed_offset)


def prepare_source(source: str | Path | np.ndarray, target: int = CANVAS) -> np.ndarray:
    """Normalize a source image to target×target.

    Center-crop when both dimensions are already >= target; otherwise
    bicubic-resize the shorter side to target first, then center-crop.
    """
    if isinstance(source, np.ndarray):
        arr = source
        if arr.dtype != np.uint8:
            arr = np.clip(np.asarray(arr, dtype=np.float64) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        img = Image.fromarray(arr)
    else:
        img = Image.open(source).convert("RGB")
    w, h = img.size
    if w < target or h < target:
        scale = target / min(w, h)
        img = img.resize((max(target, round(w * scale)), max(target, round(h * scale))),
                         Image.BICUBIC)
        w, h = img.size
    left = (w - target) // 2
    top = (h - target) // 2
    img = img.crop((left, top, left + target, top + target))
    return np.asarray(img, dtype=np.float64) / 255.0


@dataclass
class ManifestEntry:
    index: int
    image: str
    mask: str
    rect: dict
    synthetic_source: str
    natural_source: str
    split: str
    seed_offset: int


@dataclass
class DatasetManifest:
    master_seed: int
    n: int
    test_n: int
    size: int
    patch_min: int
    patch_max: int
    tool_version: str
    notes: str
    samples: list[ManifestEntry]

    def save(self, path: str | Path):
        payload = asdict(self)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        raw = json.loads(Path(path).read_text())
        samples = [ManifestEntry(**s) for s in raw.pop("samples")]
        return cls(samples=samples, **raw)

    def split_entries(self, split: str) -> list[ManifestEntry]:
        return [s for s in self.samples if s.split == split]


def _list_pool(pool: str | Path) -> list[Path]:
    exts = {".png", ".jpg", ".jpeg", ".bmp", ".ppm", ".tif", ".tiff", ".webp"}
    files = sorted(p for p in Path(pool).iterdir() if p.suffix.lower() in exts)
    if not files:
        raise DatasetError(f"no images found in pool {pool}")
    return files


def _save_png(path: Path, arr: np.ndarray):
    Image.fromarray(arr).save(path, format="PNG")


def load_sample_arrays(manifest_dir: Path, entry: ManifestEntry) -> tuple[np.ndarray, np.ndarray]:
    img = np.asarray(Image.open(manifest_dir / entry.image), dtype=np.float64) / 255.0
    mask = (np.asarray(Image.open(manifest_dir / entry.mask)) > 0).astype(np.uint8)
    return img, mask


def build_dataset(synthetic_pool: str | Path, natural_pool: str | Path,
                  n: int, test_n: int, master_seed: int, out_dir: str | Path,
                  size: int = CANVAS, patch_min: int = PATCH_MIN,
                  patch_max: int = PATCH_MAX) -> DatasetManifest:
    """Generate ``n`` composites (sources sampled with replacement), carve a
    uniform test split of ``test_n``, and persist everything plus a manifest."""
    if test_n >= n:
        raise DatasetError(f"test split {test_n} must be smaller than corpus {n}")
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    synth_files = _list_pool(synthetic_pool)
    nat_files = _list_pool(natural_pool)

    prepared: dict[Path, np.ndarray | None] = {}

    def prepare(path: Path) -> np.ndarray | None:
        if path not in prepared:
            try:
                prepared[path] = prepare_source(path, size)
            except Exception as exc:  # undecodable source: skip, redraw
                log.warning("skipping undecodable source %s: %s", path, exc)
                prepared[path] = None
        return prepared[path]

    def draw_source(rng, files) -> tuple[Path, np.ndarray]:
        for _ in range(len(files) * 4):
            f = files[int(rng.integers(0, len(files)))]
            arr = prepare(f)
            if arr is not None:
                return f, arr
        raise DatasetError("could not decode any pool image")

    split_rng = np.random.default_rng([master_seed, _SPLIT_KEY])
    test_idx = set(split_rng.choice(n, size=test_n, replace=False).tolist())

    entries = []
    for i in range(n):
        rng = np.random.default_rng([master_seed, i])
        sfile, synth = draw_source(rng, synth_files)
        nfile, nat = draw_source(rng, nat_files)
        rect = sample_patch_rect(rng, size, size, patch_min, patch_max)
        sample = composite(synth, nat, rect, rng, sfile.name, nfile.name, seed_offset=i)
        img_rel = f"images/{i:06d}.png"
        mask_rel = f"masks/{i:06d}.png"
        _save_png(out / img_rel, np.clip(sample.image * 255.0 + 0.5, 0, 255).astype(np.uint8))
        _save_png(out / mask_rel, sample.mask * 255)
        entries.append(ManifestEntry(
            index=i, image=img_rel, mask=mask_rel, rect=asdict(sample.rect),
            synthetic_source=sample.synthetic_source_id,
            natural_source=sample.natural_source_id,
            split="test" if i in test_idx else "train", seed_offset=i))

    manifest = DatasetManifest(
        master_seed=master_seed, n=n, test_n=test_n, size=size,
        patch_min=patch_min, patch_max=patch_max, tool_version=__version__,
        notes="sources sampled with replacement; natural patch origin uniform "
              "within the natural source; mask polarity 1=natural",
        samples=entries)
    manifest.save(out / "manifest.json")
    return manifest
