"""Image quality metrics: PSNR, GMSD, and mask-restricted variants.

All functions take H×W or H×W×C float arrays with values in [0, 1].
GMSD follows the original definition of the metric with constants pinned
for the [0, 1] value range: BT.601 luma, 2×2 average-pool downsampling,
Prewitt 3×3 gradients with 1/3 normalization, c = 0.0026, and the
population standard deviation of the similarity map. Lower GMSD is better.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

PSNR_CAP_DB = 100.0
GMSD_C = 0.0026

_PREWITT_X = np.array([[1.0, 0.0, -1.0]] * 3) / 3.0
_PREWITT_Y = _PREWITT_X.T
_LUMA = np.array([0.299, 0.587, 0.114])


class MetricError(ValueError):
    pass


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a, b = _check_pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] range.

    Identical inputs return the 100 dB cap so RD-curve fitting never sees
    an infinity.
    """
    err = mse(a, b)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / err), PSNR_CAP_DB)


def masked_mse(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """MSE over the pixels where ``mask`` is 1 (all channels of each pixel)."""
    a, b = _check_pair(a, b)
    sel = _pixel_mask(mask, a.shape)
    n = int(sel.sum())
    if n == 0:
        raise MetricError("mask selects no pixels")
    sq = (a - b) ** 2
    if a.ndim == 3:
        return float(sq[sel].sum() / (n * a.shape[2]))
    return float(sq[sel].sum() / n)


def masked_psnr(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    err = masked_mse(a, b, mask)
    if err == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(1.0 / err), PSNR_CAP_DB)


def _pixel_mask(mask: np.ndarray, shape) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.shape != shape[:2]:
        raise MetricError(f"mask shape {mask.shape} does not match image {shape[:2]}")
    return mask.astype(bool)


def _to_luma(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ _LUMA
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    raise MetricError(f"expected H×W or H×W×3 image, got shape {img.shape}")


def _downsample2(x: np.ndarray) -> np.ndarray:
    """2×2 non-overlapping average pooling; odd trailing row/col dropped."""
    h, w = x.shape[0] & ~1, x.shape[1] & ~1
    x = x[:h, :w]
    return x.reshape(h // 2, 2, w // 2, 2).mean(axis=(1, 3))


def _gradient_magnitude(x: np.ndarray) -> np.ndarray:
    gx = convolve2d(x, _PREWITT_X, mode="same", boundary="symm")
    gy = convolve2d(x, _PREWITT_Y, mode="same", boundary="symm")
    return np.sqrt(gx * gx + gy * gy)


def gms_map(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient magnitude similarity map at half resolution."""
    a, b = _check_pair(a, b)
    if a.shape[0] < 6 or a.shape[1] < 6:
        raise MetricError("images smaller than 6×6 have no meaningful gradient field")
    ya = _downsample2(_to_luma(a))
    yb = _downsample2(_to_luma(b))
    ma = _gradient_magnitude(ya)
    mb = _gradient_magnitude(yb)
    return (2.0 * ma * mb + GMSD_C) / (ma * ma + mb * mb + GMSD_C)


def gmsd(a: np.ndarray, b: np.ndarray) -> float:
    """Gradient magnitude similarity deviation; 0 for identical inputs."""
    return float(np.std(gms_map(a, b)))


def masked_gmsd(a: np.ndarray, b: np.ndarray, mask: np.ndarray) -> float:
    """GMSD restricted to GMS pixels whose downsampled mask value is 1.

    The mask is reduced 2×2 by majority vote (ties count as selected).
    """
    gms = gms_map(a, b)
    sel = downsample_mask2(_pixel_mask(mask, np.asarray(a).shape))
    sel = sel[: gms.shape[0], : gms.shape[1]]
    if not sel.any():
        raise MetricError("mask selects no pixels after downsampling")
    return float(np.std(gms[sel]))


def downsample_mask2(mask: np.ndarray) -> np.ndarray:
    """2×2 majority-vote mask reduction; a 2-2 tie selects the pixel."""
    m = mask.astype(np.int32)
    h, w = m.shape[0] & ~1, m.shape[1] & ~1
    m = m[:h, :w].reshape(h // 2, 2, w // 2, 2).sum(axis=(1, 3))
    return m >= 2


def masked_quality(a: np.ndarray, b: np.ndarray, mask: np.ndarray, metric: str) -> float:
    if metric == "psnr":
        return masked_psnr(a, b, mask)
    if metric == "gmsd":
        return masked_gmsd(a, b, mask)
    raise MetricError(f"unknown metric {metric!r}")


@dataclass(frozen=True)
class RegionBits:
    """Bit counts attributed to the natural (mask=1) and synthetic regions.

    ``total`` is by construction natural + synthetic; attribution never
    drops or double-counts an element.
    """

    natural: float
    synthetic: float

    @property
    def total(self) -> float:
        return self.natural + self.synthetic


def region_rate(
    y_bits_per_cell: np.ndarray,
    z_bits_total: float,
    mask: np.ndarray,
    footprint: int,
) -> RegionBits:
    """Attribute latent bits to the natural/synthetic regions of ``mask``.

    Each latent grid cell (i, j) carries ``y_bits_per_cell[i, j]`` bits
    (already summed over channels) and is attributed to the region of the
    mask value at the center of its ``footprint``×``footprint`` image
    footprint. Hyper-latent bits are split proportionally to the resulting
    main-latent split, with the synthetic share taken as the exact
    complement so the two regions always sum to the total.
    """
    y_bits = np.asarray(y_bits_per_cell, dtype=np.float64)
    mask = np.asarray(mask).astype(bool)
    gh, gw = y_bits.shape
    if gh * footprint > mask.shape[0] or gw * footprint > mask.shape[1]:
        raise MetricError("latent grid exceeds mask extent")
    half = footprint // 2
    centers = mask[half::footprint, half::footprint][:gh, :gw]
    y_nat = float(math.fsum(y_bits[centers].tolist()))
    y_syn = float(math.fsum(y_bits[~centers].tolist()))
    y_total = y_nat + y_syn
    z_total = float(z_bits_total)
    frac = y_nat / y_total if y_total > 0 else 0.5
    z_nat = z_total * frac
    z_syn = z_total - z_nat
    return RegionBits(natural=y_nat + z_nat, synthetic=y_syn + z_syn)
