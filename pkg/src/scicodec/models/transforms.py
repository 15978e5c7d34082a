"""Analysis/synthesis transforms and the hyper transform pair."""

from __future__ import annotations

import torch
import torch.nn as nn

from .gdn import GDN


def conv(c_in: int, c_out: int, kernel: int, stride: int) -> nn.Conv2d:
    return nn.Conv2d(c_in, c_out, kernel, stride=stride, padding=kernel // 2)


def deconv(c_in: int, c_out: int, kernel: int, stride: int) -> nn.ConvTranspose2d:
    return nn.ConvTranspose2d(c_in, c_out, kernel, stride=stride,
                              padding=kernel // 2, output_padding=stride - 1)


class AnalysisTransform(nn.Module):
    """Stride-2 convolution stages interleaved with GDN; downsamples 2^stages."""

    def __init__(self, in_channels: int, hidden: int, out_channels: int,
                 stages: int = 4, kernel: int = 5):
        super().__init__()
        self.stages = stages
        layers: list[nn.Module] = []
        prev = in_channels
        for s in range(stages):
            last = s == stages - 1
            layers.append(conv(prev, out_channels if last else hidden, kernel, 2))
            if not last:
                layers.append(GDN(hidden))
            prev = hidden
        self.layers = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        factor = 1 << self.stages
        if x.shape[-2] % factor or x.shape[-1] % factor:
            from .codec import PaddingRequiredError
            raise PaddingRequiredError(
                f"spatial dims {tuple(x.shape[-2:])} not divisible by {factor}; pad first")
        return self.layers(x)


class SynthesisTransform(nn.Module):
    """Mirror of the analysis transform: stride-2 upsampling with inverse GDN."""

    def __init__(self, in_channels: int, hidden: int, out_channels: int,
                 stages: int = 4, kernel: int = 5, final_sigmoid: bool = False):
        super().__init__()
        self.final_sigmoid = final_sigmoid
        layers: list[nn.Module] = []
        prev = in_channels
        for s in range(stages):
            last = s == stages - 1
            layers.append(deconv(prev, out_channels if last else hidden, kernel, 2))
            if not last:
                layers.append(GDN(hidden, inverse=True))
            prev = hidden
        self.layers = nn.Sequential(*layers)

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        out = self.layers(y)
        return torch.sigmoid(out) if self.final_sigmoid else out


class HyperAnalysis(nn.Module):
    """Reduces the main latent to a hyper-latent at 1/4 of its resolution."""

    def __init__(self, in_channels: int, channels: int, kernel: int = 3):
        super().__init__()
        self.layers = nn.Sequential(
            conv(in_channels, channels, kernel, 1), nn.ReLU(inplace=True),
            conv(channels, channels, kernel, 2), nn.ReLU(inplace=True),
            conv(channels, channels, kernel, 2),
        )

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[-2] % 4 or y.shape[-1] % 4:
            from .codec import PaddingRequiredError
            raise PaddingRequiredError(
                f"latent dims {tuple(y.shape[-2:])} not divisible by 4; pad the input image")
        return self.layers(y)


class HyperSynthesis(nn.Module):
    """Expands the quantized hyper-latent into per-element entropy features.

    Output has 2x the main latent channels: the first half is the mean,
    the second half parameterizes the scale.
    """

    def __init__(self, channels: int, latent_channels: int, kernel: int = 3):
        super().__init__()
        self.layers = nn.Sequential(
            deconv(channels, channels, kernel, 2), nn.ReLU(inplace=True),
            deconv(channels, latent_channels, kernel, 2), nn.ReLU(inplace=True),
            conv(latent_channels, 2 * latent_channels, kernel, 1),
        )

    def forward(self, z_hat: torch.Tensor) -> torch.Tensor:
        return self.layers(z_hat)
