"""Generalized divisive normalization."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

BETA_MIN = 1e-6


def gdn(x: torch.Tensor, beta: torch.Tensor, gamma: torch.Tensor, inverse: bool = False) -> torch.Tensor:
    """Apply (inverse) GDN to a batch of feature maps.

    Forward: y_i = x_i / sqrt(beta_i + sum_j gamma_ij * x_j^2); the inverse
    multiplies instead of dividing. ``beta`` is (C,), ``gamma`` is (C, C).
    """
    if torch.any(beta <= 0):
        raise ValueError("GDN beta must be positive")
    if torch.any(gamma < 0):
        raise ValueError("GDN gamma must be non-negative")
    c = x.shape[1]
    norm = F.conv2d(x * x, gamma.view(c, c, 1, 1), beta)
    norm = torch.sqrt(norm)
    return x * norm if inverse else x / norm


def _softplus_inv(y: float) -> float:
    return math.log(math.expm1(y))


class GDN(nn.Module):
    """Trainable GDN layer with positivity enforced by reparameterization.

    beta = BETA_MIN + softplus(beta_raw) > 0 and gamma = softplus(gamma_raw) > 0
    element-wise, so the normalization pool never degenerates.
    """

    def __init__(self, channels: int, inverse: bool = False,
                 gamma_init: float = 0.1, gamma_off_diagonal_init: float = 1e-4):
        super().__init__()
        self.inverse = inverse
        self.beta_raw = nn.Parameter(torch.full((channels,), _softplus_inv(1.0 - BETA_MIN)))
        g0 = torch.full((channels, channels), _softplus_inv(gamma_off_diagonal_init))
        g0.fill_diagonal_(_softplus_inv(gamma_init))
        self.gamma_raw = nn.Parameter(g0)

    @property
    def beta(self) -> torch.Tensor:
        return BETA_MIN + F.softplus(self.beta_raw)

    @property
    def gamma(self) -> torch.Tensor:
        return F.softplus(self.gamma_raw)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return gdn(x, self.beta, self.gamma, inverse=self.inverse)
