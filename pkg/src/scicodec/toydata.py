"""Procedural image pools for demos and desk-scale experiments.

Real corpora (screen captures, photographs) are supplied by the user as
directories; these generators produce stand-ins with the statistics that
matter for the codec: synthetic images are flat-colored with sharp edges,
rules, and text-like glyph runs and carry no sensor noise, while natural
images are smooth, band-limited, and mildly noisy.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter


def synthetic_image(rng: np.random.Generator, size: int = 512) -> np.ndarray:
    """Screen-content-like image: flat panels, rectangles, rules, glyph rows."""
    palette = rng.uniform(0.05, 0.95, size=(6, 3))
    img = np.ones((size, size, 3)) * palette[0]

    for _ in range(int(rng.integers(3, 7))):  # window-like panels
        w = int(rng.integers(size // 6, size // 2))
        h = int(rng.integers(size // 6, size // 2))
        x = int(rng.integers(0, size - w + 1))
        y = int(rng.integers(0, size - h + 1))
        img[y: y + h, x: x + w] = palette[int(rng.integers(0, len(palette)))]

    for _ in range(int(rng.integers(2, 6))):  # rules / separators
        t = int(rng.integers(2, 5))
        pos = int(rng.integers(0, size - t))
        color = palette[int(rng.integers(0, len(palette)))]
        if rng.random() < 0.5:
            img[pos: pos + t, :] = color
        else:
            img[:, pos: pos + t] = color

    # text-like rows: blocky dark runs on a light strip
    for _ in range(int(rng.integers(2, 5))):
        row_h = int(rng.integers(8, 16))
        y = int(rng.integers(0, size - row_h))
        x0 = int(rng.integers(0, size // 3))
        x1 = int(rng.integers(x0 + size // 3, size))
        strip = img[y: y + row_h, x0:x1]
        strip[:] = np.clip(strip.mean(axis=(0, 1)) * 0.15 + 0.82, 0, 1)
        x = 0
        width = x1 - x0
        ink = palette[int(rng.integers(0, len(palette)))] * 0.25
        while x < width - 4:
            glyph_w = int(rng.integers(4, 12))
            if rng.random() < 0.7:
                strip[2: row_h - 2, x: min(x + glyph_w, width)] = ink
            x += glyph_w + int(rng.integers(2, 6))
    return np.clip(img, 0.0, 1.0)


def natural_image(rng: np.random.Generator, size: int = 512) -> np.ndarray:
    """Photo-like image: piecewise-smooth regions with soft boundaries,
    low-frequency color gradients, gentle texture, and mild sensor noise."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.zeros((size, size, 3))
    for c in range(3):
        field = np.zeros((size, size))
        for _ in range(4):
            fx, fy = rng.uniform(0.5, 2.5, size=2)
            phase = rng.uniform(0, 2 * np.pi, size=2)
            field += rng.uniform(0.1, 0.5) * np.cos(2 * np.pi * fx * xx + phase[0]) \
                * np.cos(2 * np.pi * fy * yy + phase[1])
        img[:, :, c] = field
    img -= img.min()
    img /= max(img.max(), 1e-9)

    # object-like regions: smooth interiors, soft but visible boundaries
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, size, 2)
        ry, rx = rng.uniform(size / 10, size / 3, 2)
        angle = rng.uniform(0, np.pi)
        dy = (np.arange(size)[:, None] - cy) / ry
        dx = (np.arange(size)[None, :] - cx) / rx
        u = dy * np.cos(angle) + dx * np.sin(angle)
        v = -dy * np.sin(angle) + dx * np.cos(angle)
        region = (u * u + v * v < 1.0).astype(np.float64)
        soft = gaussian_filter(region, sigma=rng.uniform(1.0, 3.0))[:, :, None]
        tint = rng.uniform(-0.35, 0.35, 3)
        shade = 1.0 - 0.3 * (u * u + v * v).clip(0, 1)[:, :, None]
        img = img * (1 - soft) + (np.clip(img * shade + tint, 0, 1)) * soft

    texture = gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(3.0, 3.0, 0))
    texture = (texture - texture.min()) / max(np.ptp(texture), 1e-9)
    noise = rng.standard_normal((size, size, 3)) * 0.004
    img = 0.72 * img + 0.23 * texture + noise + 0.02
    return np.clip(img, 0.0, 1.0)


def _write_pool(out_dir: Path, maker, n: int, size: int, seed: int, tag: str) -> list[Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        arr = np.clip(maker(rng, size) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        p = out_dir / f"{tag}_{i:04d}.png"
        Image.fromarray(arr).save(p, format="PNG")
        paths.append(p)
    return paths


def generate_synthetic_pool(out_dir: str | Path, n: int, size: int = 512, seed: int = 0) -> list[Path]:
    return _write_pool(Path(out_dir), synthetic_image, n, size, seed, "synthetic")


def generate_natural_pool(out_dir: str | Path, n: int, size: int = 512, seed: int = 1) -> list[Path]:
    return _write_pool(Path(out_dir), natural_image, n, size, seed, "natural")
