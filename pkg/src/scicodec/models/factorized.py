"""Learned factorized prior for the hyper-latent.

Each channel gets an independent nonparametric density built from a small
monotone network whose output, squashed through a sigmoid, is a CDF. Bin
probabilities follow by differencing the CDF at +-1/2 around the value.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F

from .gaussian import LIKELIHOOD_FLOOR


class FactorizedPrior(nn.Module):
    def __init__(self, channels: int, filters: tuple[int, ...] = (3, 3, 3), init_scale: float = 10.0):
        super().__init__()
        self.channels = channels
        self.filters = (1,) + tuple(int(f) for f in filters) + (1,)
        self._n_layers = len(self.filters) - 1
        scale = init_scale ** (1.0 / self._n_layers)
        for k in range(self._n_layers):
            d_in, d_out = self.filters[k], self.filters[k + 1]
            init = math.log(math.expm1(1.0 / scale / d_out))
            self.register_parameter(f"matrix{k}", nn.Parameter(torch.full((channels, d_out, d_in), init)))
            self.register_parameter(f"bias{k}", nn.Parameter(torch.zeros(channels, d_out, 1)))
            if k < self._n_layers - 1:
                self.register_parameter(f"factor{k}", nn.Parameter(torch.zeros(channels, d_out, 1)))

    def _logits(self, x: torch.Tensor) -> torch.Tensor:
        # x: (channels, 1, N)
        for k in range(self._n_layers):
            m = F.softplus(getattr(self, f"matrix{k}"))
            x = torch.bmm(m, x) + getattr(self, f"bias{k}")
            if k < self._n_layers - 1:
                a = torch.tanh(getattr(self, f"factor{k}"))
                x = x + a * torch.tanh(x)
        return x

    def _per_channel(self, z: torch.Tensor) -> torch.Tensor:
        b, c, h, w = z.shape
        return z.permute(1, 0, 2, 3).reshape(c, 1, b * h * w)

    def _from_per_channel(self, x: torch.Tensor, shape) -> torch.Tensor:
        b, c, h, w = shape
        return x.reshape(c, b, h, w).permute(1, 0, 2, 3)

    def cdf(self, x: torch.Tensor) -> torch.Tensor:
        """Per-channel CDF evaluated at ``x`` of shape (channels, 1, N)."""
        return torch.sigmoid(self._logits(x))

    def bin_likelihood(self, z: torch.Tensor) -> torch.Tensor:
        """Unit-bin probability of each element of a (B, C, H, W) hyper-latent."""
        if z.shape[1] != self.channels:
            raise ValueError(f"expected {self.channels} channels, got {z.shape[1]}")
        x = self._per_channel(z)
        upper = self._logits(x + 0.5)
        lower = self._logits(x - 0.5)
        # evaluate on the side with better sigmoid precision, symmetric in sign
        sign = -torch.sign(upper + lower).detach()
        p = torch.abs(torch.sigmoid(sign * upper) - torch.sigmoid(sign * lower))
        return self._from_per_channel(p, z.shape).clamp_min(LIKELIHOOD_FLOOR)
