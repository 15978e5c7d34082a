"""Image bitstream: CDF table construction, encode/decode, header format.

The bitstream is self-describing up to the checkpoint: a fixed-width
little-endian header, the hyper-latent payload, then one payload per
latent slice. The byte-level layout is documented in docs/bitstream.md.

The main latent is coded as mean-centered residuals with zero-mean
Gaussian CDFs indexed by a shared scale table (each model scale maps to
the nearest table entry at or above it, identically at encode and
decode); the hyper-latent is coded with per-channel CDFs discretized from
the learned factorized prior.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass

import numpy as np
import torch
from scipy.stats import norm

from . import FORMAT_VERSION
from .models import MultiTaskCodec, round_away
from .models.codec import QuantizedLatents
from .rans import CdfTable, CodingError, make_table, quantize_probabilities
from . import native_bridge

log = logging.getLogger(__name__)

MAGIC = b"SCB1"
SCALES_MIN = 0.11
SCALES_MAX = 256.0
SCALES_LEVELS = 64
TAIL_MASS = 2.0 ** -16  # max truncated probability per side
_BACKBONE_IDS = {"hyperprior": 0, "channel-ar": 1}
_BACKBONE_NAMES = {v: k for k, v in _BACKBONE_IDS.items()}
_HEADER_FMT = "<4sBBBBBBHHHHHH"
HEADER_BYTES = struct.calcsize(_HEADER_FMT)

# Quantile of the standard normal with TAIL_MASS above it.
_TAIL_QUANTILE = float(-norm.ppf(TAIL_MASS))


class FormatError(CodingError):
    """Bitstream header does not match the checkpoint or the format spec."""


def default_scale_table(levels: int = SCALES_LEVELS, smin: float = SCALES_MIN,
                        smax: float = SCALES_MAX) -> np.ndarray:
    return np.exp(np.linspace(math.log(smin), math.log(smax), levels))


def build_scale_cdfs(scale_table: np.ndarray, precision: int = 16) -> list[CdfTable]:
    """One CDF table per scale: bin-integrated zero-mean Gaussian plus escape.

    Symbols cover [-tail, tail] with the tail chosen so the truncated mass
    per side is below 2^-16; format version 1 pins 16-bit precision.
    """
    if precision != 16:
        raise CodingError("format version 1 supports 16-bit precision only")
    scale_table = np.asarray(scale_table, dtype=np.float64)
    if np.any(np.diff(scale_table) <= 0):
        raise CodingError("scale table must be sorted ascending")
    tables = []
    for sigma in scale_table:
        tail = max(0, math.ceil(sigma * _TAIL_QUANTILE - 0.5))
        values = np.arange(-tail, tail + 1)
        upper = norm.cdf((values + 0.5) / sigma)
        lower = norm.cdf((values - 0.5) / sigma)
        probs = upper - lower
        escape = max(0.0, 1.0 - float(probs.sum()))
        tables.append(make_table(-tail, quantize_probabilities(probs, escape)))
    return tables


def scale_indexes(sigma: np.ndarray, scale_table: np.ndarray) -> np.ndarray:
    """Index of the nearest table entry at or above each sigma (clamped at top)."""
    idx = np.searchsorted(scale_table, sigma, side="left")
    return np.minimum(idx, len(scale_table) - 1)


def factorized_cdf_tables(prior, max_half_range: int = 4096) -> list[CdfTable]:
    """Per-channel CDF tables discretized from the learned factorized prior."""
    tables = []
    half = 16
    while True:
        xs = torch.arange(-half, half + 2, dtype=torch.float32) - 0.5  # bin edges
        grid = xs.view(1, 1, -1).repeat(prior.channels, 1, 1)
        with torch.no_grad():
            cdf = prior.cdf(grid).numpy().astype(np.float64)[:, 0, :]
        if (cdf[:, 0].max() <= TAIL_MASS and cdf[:, -1].min() >= 1.0 - TAIL_MASS) or half >= max_half_range:
            break
        half *= 2
    for c in range(prior.channels):
        edges = cdf[c]
        probs = np.diff(edges)
        escape = max(0.0, float(edges[0]) + float(1.0 - edges[-1]))
        tables.append(make_table(-half, quantize_probabilities(probs, escape)))
    return tables


@dataclass
class Bitstream:
    """Parsed bitstream: header fields plus entropy-coded payloads."""

    width: int
    height: int
    padded_width: int
    padded_height: int
    backbone: str
    stages: int
    slices: int
    latent_channels: int
    hyper_channels: int
    has_seg: bool
    z_payload: bytes
    y_payloads: list[bytes]

    @property
    def header_bytes(self) -> int:
        return HEADER_BYTES + 4 * (1 + len(self.y_payloads))

    @property
    def payload_bytes(self) -> int:
        return len(self.z_payload) + sum(len(p) for p in self.y_payloads)

    @property
    def total_bytes(self) -> int:
        return self.header_bytes + self.payload_bytes

    def to_bytes(self) -> bytes:
        head = struct.pack(
            _HEADER_FMT, MAGIC, FORMAT_VERSION, _BACKBONE_IDS[self.backbone],
            self.stages, self.slices, 1 if self.has_seg else 0, 0,
            self.width, self.height, self.padded_width, self.padded_height,
            self.latent_channels, self.hyper_channels)
        parts = [head, struct.pack("<I", len(self.z_payload)), self.z_payload]
        for p in self.y_payloads:
            parts.append(struct.pack("<I", len(p)))
            parts.append(p)
        return b"".join(parts)

    @classmethod
    def parse(cls, data: bytes) -> "Bitstream":
        if len(data) < HEADER_BYTES:
            raise FormatError("bitstream shorter than its header")
        (magic, version, backbone_id, stages, slices, flags, _r,
         w, h, pw, ph, cy, cz) = struct.unpack_from(_HEADER_FMT, data, 0)
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}")
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported bitstream version {version}")
        if backbone_id not in _BACKBONE_NAMES:
            raise FormatError(f"unknown backbone id {backbone_id}")
        pos = HEADER_BYTES

        def take() -> bytes:
            nonlocal pos
            if pos + 4 > len(data):
                raise FormatError("truncated payload length")
            (n,) = struct.unpack_from("<I", data, pos)
            pos += 4
            if pos + n > len(data):
                raise FormatError("truncated payload")
            chunk = data[pos: pos + n]
            pos += n
            return chunk

        z_payload = take()
        y_payloads = [take() for _ in range(slices)]
        if pos != len(data):
            raise FormatError(f"{len(data) - pos} trailing bytes")
        return cls(width=w, height=h, padded_width=pw, padded_height=ph,
                   backbone=_BACKBONE_NAMES[backbone_id], stages=stages, slices=slices,
                   latent_channels=cy, hyper_channels=cz, has_seg=bool(flags & 1),
                   z_payload=z_payload, y_payloads=y_payloads)


def pad_image(img: np.ndarray, multiple: int) -> np.ndarray:
    """Reflectively pad H and W up to the next multiple."""
    h, w = img.shape[:2]
    ph = (-h) % multiple
    pw = (-w) % multiple
    if ph == 0 and pw == 0:
        return img
    pad = [(0, ph), (0, pw)] + [(0, 0)] * (img.ndim - 2)
    return np.pad(img, pad, mode="symmetric")


def _to_tensor(img: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1))[None]).float()


def _encode_payload(values: np.ndarray, contexts: np.ndarray, tables: list[CdfTable]) -> bytes:
    return native_bridge.dispatch_encode(values.tolist(), contexts.tolist(), tables)


def _decode_payload(data: bytes, contexts: np.ndarray, tables: list[CdfTable]) -> np.ndarray:
    syms = native_bridge.dispatch_decode(data, contexts.tolist(), tables)
    return np.asarray(syms, dtype=np.int64)


def encode_image(img: np.ndarray, model: MultiTaskCodec,
                 scale_table: np.ndarray | None = None) -> tuple[Bitstream, QuantizedLatents]:
    """Encode an H×W×3 [0,1] image; returns the bitstream and the latents
    the encoder committed to (the decoder reproduces them bit-exactly)."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got {img.shape}")
    h, w = img.shape[:2]
    padded = pad_image(img.astype(np.float64), model.pad_multiple)
    x = _to_tensor(padded)
    model.eval()
    latents = model.quantize_latents(x)

    if scale_table is None:
        scale_table = default_scale_table()
    scale_cdfs = build_scale_cdfs(scale_table)
    z_tables = factorized_cdf_tables(model.factorized)

    z = latents.z_hat[0].numpy().astype(np.int64)
    cz = z.shape[0]
    z_ctx = np.repeat(np.arange(cz), z.shape[1] * z.shape[2])
    z_payload = _encode_payload(z.reshape(-1), z_ctx, z_tables)

    y_payloads = []
    for k in range(model.slices):
        lo, hi = model._slice_bounds(k)
        res = round_away(latents.y_hat[0, lo:hi] - latents.mu[0, lo:hi]).numpy().astype(np.int64)
        sigma_k = latents.sigma[0, lo:hi].numpy().astype(np.float64)
        ctx = scale_indexes(sigma_k.reshape(-1), scale_table)
        y_payloads.append(_encode_payload(res.reshape(-1), ctx, scale_cdfs))

    stream = Bitstream(
        width=w, height=h, padded_width=padded.shape[1], padded_height=padded.shape[0],
        backbone=model.backbone, stages=model.stages, slices=model.slices,
        latent_channels=model.latent_channels, hyper_channels=model.hyper_channels,
        has_seg=model.decoders == 2, z_payload=z_payload, y_payloads=y_payloads)
    return stream, latents


@dataclass
class DecodeResult:
    image: np.ndarray
    segmentation: np.ndarray | None
    y_hat: torch.Tensor
    z_hat: torch.Tensor


def decode_image(data: bytes | Bitstream, model: MultiTaskCodec,
                 scale_table: np.ndarray | None = None) -> DecodeResult:
    stream = data if isinstance(data, Bitstream) else Bitstream.parse(data)
    arch_ok = (stream.backbone == model.backbone and stream.stages == model.stages
               and stream.slices == model.slices
               and stream.latent_channels == model.latent_channels
               and stream.hyper_channels == model.hyper_channels)
    if not arch_ok:
        raise FormatError("bitstream/checkpoint mismatch: "
                          f"stream {stream.backbone}/C{stream.latent_channels} vs "
                          f"model {model.backbone}/C{model.latent_channels}")

    if scale_table is None:
        scale_table = default_scale_table()
    scale_cdfs = build_scale_cdfs(scale_table)
    z_tables = factorized_cdf_tables(model.factorized)

    factor = 1 << model.stages
    yh, yw = stream.padded_height // factor, stream.padded_width // factor
    zh, zw = yh // 4, yw // 4
    cz = model.hyper_channels
    z_ctx = np.repeat(np.arange(cz), zh * zw)
    z_vals = _decode_payload(stream.z_payload, z_ctx, z_tables)
    z_hat = torch.from_numpy(z_vals.reshape(1, cz, zh, zw).astype(np.float32))

    model.eval()
    with torch.no_grad():
        features = model.hyper_synthesis(z_hat)
        parts = []
        for k in range(model.slices):
            prefix = torch.cat(parts, dim=1) if parts else features[:, :0]
            mu_k, sigma_k = model.slice_params(features, prefix, k)
            ctx = scale_indexes(sigma_k[0].numpy().astype(np.float64).reshape(-1), scale_table)
            vals = _decode_payload(stream.y_payloads[k], ctx, scale_cdfs)
            res = torch.from_numpy(
                vals.reshape(1, model.slice_size, yh, yw).astype(np.float32))
            parts.append(res + mu_k)
        y_hat = torch.cat(parts, dim=1)
        x_hat, s_hat = model.synthesize(y_hat)

    img = x_hat[0].numpy().transpose(1, 2, 0)[: stream.height, : stream.width]
    seg = None
    if s_hat is not None:
        seg = s_hat[0, 0].numpy()[: stream.height, : stream.width]
    return DecodeResult(image=img, segmentation=seg, y_hat=y_hat, z_hat=z_hat)
