"""Self-describing checkpoint container.

Layout: magic ``SCCK`` + u8 format version + u32 header length + UTF-8 JSON
header + raw little-endian tensor payload. The header carries the
architecture, a training-config echo, and the (name, shape, dtype, offset)
manifest of every parameter. Serialization is fully deterministic: no
timestamps, sorted keys, parameters in sorted name order, so identical
training runs produce byte-identical files.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from . import FORMAT_VERSION
from .models import MultiTaskCodec

MAGIC = b"SCCK"

_DTYPES = {"float32": np.float32, "float64": np.float64}


class CheckpointError(ValueError):
    pass


def save_checkpoint(path: str | Path, model: MultiTaskCodec, train_config: dict | None = None,
                    extra: dict | None = None) -> Path:
    path = Path(path)
    names = sorted(n for n, _ in model.named_parameters())
    params = dict(model.named_parameters())
    manifest = []
    offset = 0
    blobs = []
    for name in names:
        t = params[name].detach().cpu().contiguous()
        arr = t.numpy()
        blob = arr.astype(arr.dtype.newbyteorder("<"), copy=False).tobytes()
        manifest.append({
            "name": name,
            "shape": list(t.shape),
            "dtype": str(arr.dtype),
            "offset": offset,
            "nbytes": len(blob),
        })
        offset += len(blob)
        blobs.append(blob)
    header = {
        "format_version": FORMAT_VERSION,
        "architecture": model.architecture(),
        "train_config": train_config or {},
        "extra": extra or {},
        "params": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<BI", FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)
    return path


def _read_raw(path: str | Path) -> tuple[dict, int, bytes]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    version, hlen = struct.unpack_from("<BI", data, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(data[9: 9 + hlen].decode())
    return header, 9 + hlen, data


def read_header(path: str | Path) -> dict:
    """Header only; never pulls the tensor payload into memory."""
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise CheckpointError(f"{path}: not a checkpoint (bad magic {magic!r})")
        version, hlen = struct.unpack("<BI", f.read(5))
        if version != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        return json.loads(f.read(hlen).decode())


def load_checkpoint(path: str | Path, dtype: torch.dtype = torch.float32
                    ) -> tuple[MultiTaskCodec, dict]:
    """Rebuild the model from a checkpoint; returns (model, header)."""
    header, base, data = _read_raw(path)
    arch = header["architecture"]
    model = MultiTaskCodec(**arch)
    state = {}
    for entry in header["params"]:
        np_dtype = _DTYPES.get(entry["dtype"])
        if np_dtype is None:
            raise CheckpointError(f"unsupported tensor dtype {entry['dtype']}")
        start = base + entry["offset"]
        raw = data[start: start + entry["nbytes"]]
        arr = np.frombuffer(raw, dtype=np.dtype(np_dtype).newbyteorder("<")).reshape(entry["shape"])
        state[entry["name"]] = torch.from_numpy(arr.astype(np_dtype, copy=True))
    missing = set(dict(model.named_parameters())) - set(state)
    if missing:
        raise CheckpointError(f"checkpoint missing parameters: {sorted(missing)[:4]}...")
    model.load_state_dict(state, strict=True)
    model.to(dtype)
    model.eval()
    return model, header
