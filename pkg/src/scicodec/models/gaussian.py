"""Conditional Gaussian entropy model: unit-bin probabilities and bit costs."""

from __future__ import annotations

import math

import torch

SIGMA_MIN = 0.11
LIKELIHOOD_FLOOR = 2.0 ** -50
_INV_SQRT2 = 1.0 / math.sqrt(2.0)


def standard_cdf(t: torch.Tensor) -> torch.Tensor:
    return 0.5 * torch.erfc(-t * _INV_SQRT2)


def gaussian_bin_likelihood(x: torch.Tensor, mu: torch.Tensor, sigma: torch.Tensor) -> torch.Tensor:
    """Probability mass of the unit quantization bin centred on ``x``.

    p = Phi((x + 1/2 - mu)/sigma) - Phi((x - 1/2 - mu)/sigma), floored so
    the bit cost stays finite.
    """
    if torch.any(sigma < SIGMA_MIN - 1e-9):
        raise ValueError(f"sigma below the {SIGMA_MIN} floor")
    centered = x - mu
    upper = standard_cdf((centered + 0.5) / sigma)
    lower = standard_cdf((centered - 0.5) / sigma)
    return (upper - lower).clamp_min(LIKELIHOOD_FLOOR)


def bits_from_likelihood(p: torch.Tensor) -> torch.Tensor:
    """Element-wise information content in bits."""
    return -torch.log2(p)
