"""Latent quantization: additive-noise proxy for training, rounding for coding."""

from __future__ import annotations

import torch


def round_away(x: torch.Tensor) -> torch.Tensor:
    """Round to nearest integer with ties away from zero.

    The rounding rule is part of the bitstream contract: encoder and
    decoder must agree on it bit-exactly.
    """
    return torch.trunc(x + torch.where(x >= 0, 0.5, -0.5))


def quantize(x: torch.Tensor, mode: str, generator: torch.Generator | None = None) -> torch.Tensor:
    """Quantize ``x`` either with uniform noise (training) or rounding."""
    if mode == "noise":
        u = torch.rand(x.shape, generator=generator, dtype=x.dtype, device=x.device) - 0.5
        return x + u
    if mode == "round":
        return round_away(x)
    raise ValueError(f"unknown quantization mode {mode!r}")
