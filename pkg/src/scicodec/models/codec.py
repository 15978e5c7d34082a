"""Multi-task codec: shared analysis transform, dual synthesis heads, and
hyperprior or channel-autoregressive entropy modeling."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import torch
import torch.nn as nn
import torch.nn.functional as F

from .factorized import FactorizedPrior
from .gaussian import SIGMA_MIN, bits_from_likelihood, gaussian_bin_likelihood
from .quant import quantize, round_away
from .transforms import AnalysisTransform, HyperAnalysis, HyperSynthesis, SynthesisTransform, conv

BACKBONES = ("hyperprior", "channel-ar")


class CapabilityError(RuntimeError):
    """Operation requires a model capability this checkpoint lacks."""


class PaddingRequiredError(ValueError):
    """Input spatial dims are not divisible as required; caller must pad."""


@dataclass
class TrainingForward:
    """One noise-quantized training pass."""

    x_hat: torch.Tensor
    s_hat: torch.Tensor | None
    y_bits: torch.Tensor  # total bits over the batch
    z_bits: torch.Tensor

    def bpp(self, num_pixels: int) -> torch.Tensor:
        return (self.y_bits + self.z_bits) / num_pixels


@dataclass
class QuantizedLatents:
    """Inference-mode latents plus the entropy parameters they were coded with."""

    y_hat: torch.Tensor
    z_hat: torch.Tensor
    mu: torch.Tensor
    sigma: torch.Tensor
    features: torch.Tensor


@dataclass
class RateEstimate:
    """Model-based rate of quantized latents (bin-integrated likelihoods)."""

    y_bits_map: torch.Tensor  # (C, h, w) bits per element
    z_bits_map: torch.Tensor
    y_bits: float
    z_bits: float

    @property
    def total_bits(self) -> float:
        return self.y_bits + self.z_bits

    def bpp(self, num_pixels: int) -> float:
        return self.total_bits / num_pixels


class SliceParamNet(nn.Module):
    """Entropy parameters of one latent slice from hyper features plus the
    previously decoded slices."""

    def __init__(self, feature_channels: int, context_channels: int, slice_channels: int, hidden: int):
        super().__init__()
        self.layers = nn.Sequential(
            conv(feature_channels + context_channels, hidden, 3, 1), nn.ReLU(inplace=True),
            conv(hidden, 2 * slice_channels, 3, 1),
        )

    def forward(self, features: torch.Tensor, decoded_prefix: torch.Tensor) -> torch.Tensor:
        return self.layers(torch.cat([features, decoded_prefix], dim=1))


def sigma_from_raw(raw: torch.Tensor) -> torch.Tensor:
    return SIGMA_MIN + F.softplus(raw)


class MultiTaskCodec(nn.Module):
    """Learned image codec with optional synthetic/natural segmentation head.

    ``decoders=2`` adds a second synthesis transform that mirrors the
    reconstruction head but emits a 1-channel sigmoid segmentation map.
    ``backbone`` selects the entropy model: a mean-scale hyperprior, or a
    channel-autoregressive refinement of it with ``slices`` equal channel
    groups (1 slice degenerates to the plain hyperprior).
    """

    def __init__(self, backbone: str = "hyperprior", decoders: int = 2,
                 latent_channels: int = 192, hyper_channels: int = 128,
                 hidden_channels: int | None = None, stages: int = 4,
                 slices: int | None = None, kernel: int = 5, hyper_kernel: int = 3,
                 seed: int = 0):
        super().__init__()
        if backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}")
        if decoders not in (1, 2):
            raise ValueError("decoders must be 1 or 2")
        if slices is None:
            slices = 4 if backbone == "channel-ar" else 1
        if backbone == "hyperprior" and slices != 1:
            raise ValueError("hyperprior backbone has no slicing")
        if latent_channels % slices:
            raise ValueError(f"latent channels {latent_channels} not divisible into {slices} slices")
        hidden = hidden_channels or latent_channels

        self.backbone = backbone
        self.decoders = decoders
        self.latent_channels = latent_channels
        self.hyper_channels = hyper_channels
        self.hidden_channels = hidden
        self.stages = stages
        self.slices = slices
        self.kernel = kernel
        self.hyper_kernel = hyper_kernel
        self.seed = seed

        self.analysis = AnalysisTransform(3, hidden, latent_channels, stages, kernel)
        self.synthesis = SynthesisTransform(latent_channels, hidden, 3, stages, kernel)
        self.segmentation = (
            SynthesisTransform(latent_channels, hidden, 1, stages, kernel, final_sigmoid=True)
            if decoders == 2 else None
        )
        self.hyper_analysis = HyperAnalysis(latent_channels, hyper_channels, hyper_kernel)
        self.hyper_synthesis = HyperSynthesis(hyper_channels, latent_channels, hyper_kernel)
        self.factorized = FactorizedPrior(hyper_channels)

        self.slice_size = latent_channels // slices
        if slices > 1:
            ar_hidden = max(32, latent_channels)
            self.slice_nets = nn.ModuleList(
                SliceParamNet(2 * latent_channels, k * self.slice_size, self.slice_size, ar_hidden)
                for k in range(1, slices)
            )
        else:
            self.slice_nets = nn.ModuleList()

        init_parameters(self, seed)

    @property
    def pad_multiple(self) -> int:
        # hyper transform divides the latent by another factor of 4
        return (1 << self.stages) * 4

    def architecture(self) -> dict:
        return {
            "backbone": self.backbone,
            "decoders": self.decoders,
            "latent_channels": self.latent_channels,
            "hyper_channels": self.hyper_channels,
            "hidden_channels": self.hidden_channels,
            "stages": self.stages,
            "slices": self.slices,
            "kernel": self.kernel,
            "hyper_kernel": self.hyper_kernel,
            "seed": self.seed,
        }

    def _check_input(self, x: torch.Tensor):
        m = self.pad_multiple
        if x.shape[-2] % m or x.shape[-1] % m:
            raise PaddingRequiredError(
                f"input dims {tuple(x.shape[-2:])} not divisible by {m}; pad first")

    def _slice_bounds(self, k: int) -> tuple[int, int]:
        return k * self.slice_size, (k + 1) * self.slice_size

    def base_params(self, features: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu = features[:, : self.latent_channels]
        raw = features[:, self.latent_channels:]
        return mu, sigma_from_raw(raw)

    def slice_params(self, features: torch.Tensor, y_prefix: torch.Tensor, k: int
                     ) -> tuple[torch.Tensor, torch.Tensor]:
        """Entropy parameters of slice ``k`` given decoded slices 0..k-1."""
        if k == 0:
            mu, sigma = self.base_params(features)
            lo, hi = self._slice_bounds(0)
            return mu[:, lo:hi], sigma[:, lo:hi]
        out = self.slice_nets[k - 1](features, y_prefix)
        mu, raw = out.chunk(2, dim=1)
        return mu, sigma_from_raw(raw)

    def entropy_params(self, features: torch.Tensor, y_cond: torch.Tensor
                       ) -> tuple[torch.Tensor, torch.Tensor]:
        """Full-latent (mu, sigma), conditioning slice k on y_cond slices < k."""
        if self.slices == 1:
            return self.base_params(features)
        mus, sigmas = [], []
        for k in range(self.slices):
            lo, _ = self._slice_bounds(k)
            mu_k, sigma_k = self.slice_params(features, y_cond[:, :lo], k)
            mus.append(mu_k)
            sigmas.append(sigma_k)
        return torch.cat(mus, dim=1), torch.cat(sigmas, dim=1)

    def forward(self, x: torch.Tensor, rng: torch.Generator | None = None) -> TrainingForward:
        """Noise-quantized training pass. Draw order (z then y) is fixed."""
        self._check_input(x)
        y = self.analysis(x)
        z = self.hyper_analysis(y)
        z_noisy = quantize(z, "noise", rng)
        y_noisy = quantize(y, "noise", rng)
        z_lik = self.factorized.bin_likelihood(z_noisy)
        features = self.hyper_synthesis(z_noisy)
        mu, sigma = self.entropy_params(features, y_noisy)
        y_lik = gaussian_bin_likelihood(y_noisy, mu, sigma)
        x_hat = self.synthesis(y_noisy)
        s_hat = self.segmentation(y_noisy) if self.segmentation is not None else None
        return TrainingForward(
            x_hat=x_hat,
            s_hat=s_hat,
            y_bits=bits_from_likelihood(y_lik).sum(),
            z_bits=bits_from_likelihood(z_lik).sum(),
        )

    @torch.no_grad()
    def quantize_latents(self, x: torch.Tensor) -> QuantizedLatents:
        """Inference quantization: y is rounded as a mean-centered residual,
        slice-sequentially for the channel-autoregressive backbone."""
        self._check_input(x)
        y = self.analysis(x)
        z = self.hyper_analysis(y)
        z_hat = round_away(z)
        features = self.hyper_synthesis(z_hat)
        parts, mus, sigmas = [], [], []
        for k in range(self.slices):
            lo, hi = self._slice_bounds(k)
            prefix = torch.cat(parts, dim=1) if parts else y[:, :0]
            mu_k, sigma_k = self.slice_params(features, prefix, k)
            y_hat_k = round_away(y[:, lo:hi] - mu_k) + mu_k
            parts.append(y_hat_k)
            mus.append(mu_k)
            sigmas.append(sigma_k)
        return QuantizedLatents(
            y_hat=torch.cat(parts, dim=1),
            z_hat=z_hat,
            mu=torch.cat(mus, dim=1),
            sigma=torch.cat(sigmas, dim=1),
            features=features,
        )

    @torch.no_grad()
    def synthesize(self, y_hat: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        x_hat = self.synthesis(y_hat).clamp(0.0, 1.0)
        s_hat = self.segmentation(y_hat) if self.segmentation is not None else None
        return x_hat, s_hat

    @torch.no_grad()
    def synthesize_segmentation(self, y_hat: torch.Tensor) -> torch.Tensor:
        if self.segmentation is None:
            raise CapabilityError("this checkpoint was trained without a segmentation head")
        return self.segmentation(y_hat)

    @torch.no_grad()
    def rate_estimate(self, latents: QuantizedLatents) -> RateEstimate:
        """Eq.-style model rate of already-quantized latents, per element."""
        y_lik = gaussian_bin_likelihood(latents.y_hat, latents.mu, latents.sigma)
        z_lik = self.factorized.bin_likelihood(latents.z_hat)
        y_map = bits_from_likelihood(y_lik)[0]
        z_map = bits_from_likelihood(z_lik)[0]
        return RateEstimate(
            y_bits_map=y_map,
            z_bits_map=z_map,
            y_bits=float(y_map.sum()),
            z_bits=float(z_map.sum()),
        )


def _param_seed(seed: int, name: str) -> int:
    digest = hashlib.sha256(f"{seed}|{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFFFFFFFFFFFFFF


def init_parameters(model: nn.Module, seed: int):
    """Deterministic per-parameter initialization.

    Each tensor draws from its own generator keyed by (seed, parameter name),
    so architecturally shared sub-modules initialize identically no matter
    which optional heads exist alongside them.
    """
    for name, param in sorted(model.named_parameters(), key=lambda kv: kv[0]):
        g = torch.Generator().manual_seed(_param_seed(seed, name))
        with torch.no_grad():
            if param.dim() == 4:  # conv / deconv kernels
                fan_in = param.shape[1] * param.shape[2] * param.shape[3]
                fan_out = param.shape[0] * param.shape[2] * param.shape[3]
                std = math.sqrt(2.0 / (fan_in + fan_out))
                param.copy_(torch.randn(param.shape, generator=g) * std)
            elif "bias" in name and param.dim() == 1:
                param.zero_()
            elif name.split(".")[-1].startswith("bias") and param.dim() == 3:
                # factorized-prior bias: uniform as in the usual scheme
                param.copy_(torch.rand(param.shape, generator=g) - 0.5)
            # GDN raws, factorized matrices/factors keep their deterministic init
