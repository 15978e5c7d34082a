"""Optional high-throughput entropy coder bridge.

The native coder is a separate executable (see ``native/``) speaking a
versioned binary protocol over stdin/stdout: flat integer arrays and byte
buffers only, nothing richer crosses the boundary. It must be bit-exact
to :mod:`scicodec.rans`; the shipped conformance vectors gate both sides.

Detection: ``SCICODEC_NATIVE_CLI`` names the executable script explicitly,
otherwise ``native/dist/cli.js`` next to this repo is used when node is
available. ``SCICODEC_NATIVE`` = ``auto`` (default: native only for large
payloads, where it pays for the process round-trip), ``always``, or
``never``. Fallback to the reference coder is silent and logged once.
"""

from __future__ import annotations

import logging
import os
import shutil
import struct
import subprocess
from pathlib import Path

from . import rans
from .rans import CdfTable, CodingError

log = logging.getLogger(__name__)

PROTOCOL_MAGIC = b"SNC1"
OP_ENCODE = 1
OP_DECODE = 2
OP_BENCH = 3

# below this symbol count the subprocess round-trip dominates
AUTO_THRESHOLD = 1 << 16

_DETECTED: tuple[str, ...] | None | bool = False  # False = not probed yet
_LOGGED = False


def _repo_native_cli() -> Path:
    return Path(__file__).resolve().parents[2] / "native" / "dist" / "cli.js"


def find_native() -> tuple[str, ...] | None:
    """Command prefix for the native coder, or None if unavailable."""
    global _DETECTED, _LOGGED
    if _DETECTED is not False:
        return _DETECTED
    cmd = None
    explicit = os.environ.get("SCICODEC_NATIVE_CLI")
    node = shutil.which("node")
    if explicit:
        p = Path(explicit)
        if p.exists():
            cmd = (node, str(p)) if p.suffix == ".js" and node else (str(p),)
    else:
        p = _repo_native_cli()
        if p.exists() and node:
            cmd = (node, str(p))
    _DETECTED = cmd
    if not _LOGGED:
        _LOGGED = True
        if cmd:
            log.info("native entropy coder detected: %s", " ".join(cmd))
        else:
            log.info("native entropy coder not found; using the reference coder")
    return cmd


def _mode() -> str:
    return os.environ.get("SCICODEC_NATIVE", "auto")


def _use_native(n_symbols: int) -> bool:
    mode = _mode()
    if mode == "never":
        return False
    if find_native() is None:
        return False
    if mode == "always":
        return True
    return n_symbols >= AUTO_THRESHOLD


def _pack_tables(out: bytearray, tables: list[CdfTable]):
    out += struct.pack("<I", len(tables))
    for t in tables:
        out += struct.pack("<iI", t.offset, len(t.freqs))
        out += struct.pack(f"<{len(t.freqs)}I", *t.freqs)


def _pack_encode_case(out: bytearray, values, contexts, tables):
    _pack_tables(out, tables)
    n = len(values)
    out += struct.pack("<I", n)
    out += struct.pack(f"<{n}i", *values)
    out += struct.pack(f"<{n}I", *contexts)


def _pack_decode_case(out: bytearray, payload: bytes, contexts, tables):
    _pack_tables(out, tables)
    n = len(contexts)
    out += struct.pack("<I", n)
    out += struct.pack(f"<{n}I", *contexts)
    out += struct.pack("<I", len(payload))
    out += payload


def _run(request: bytes) -> bytes:
    cmd = find_native()
    proc = subprocess.run(cmd, input=request, stdout=subprocess.PIPE,
                          stderr=subprocess.PIPE)
    if proc.returncode != 0:
        raise CodingError(f"native coder failed: {proc.stderr.decode(errors='replace')[:500]}")
    return proc.stdout


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, fmt: str):
        vals = struct.unpack_from(fmt, self.data, self.pos)
        self.pos += struct.calcsize(fmt)
        return vals

    def take_bytes(self, n: int) -> bytes:
        b = self.data[self.pos: self.pos + n]
        self.pos += n
        return b


def native_encode_batch(cases: list[tuple[list, list, list[CdfTable]]]) -> list[bytes]:
    req = bytearray(PROTOCOL_MAGIC + struct.pack("<BI", OP_ENCODE, len(cases)))
    for values, contexts, tables in cases:
        _pack_encode_case(req, values, contexts, tables)
    r = _Reader(_run(bytes(req)))
    out = []
    for _ in cases:
        (status,) = r.take("<B")
        (n,) = r.take("<I")
        body = r.take_bytes(n)
        if status != 0:
            raise CodingError(f"native encode error: {body.decode(errors='replace')}")
        out.append(body)
    return out


def native_decode_batch(cases: list[tuple[bytes, list, list[CdfTable]]]
                        ) -> list[list[int] | CodingError]:
    """Decode many payloads; corrupt cases come back as CodingError values."""
    req = bytearray(PROTOCOL_MAGIC + struct.pack("<BI", OP_DECODE, len(cases)))
    for payload, contexts, tables in cases:
        _pack_decode_case(req, payload, contexts, tables)
    r = _Reader(_run(bytes(req)))
    out: list[list[int] | CodingError] = []
    for _, contexts, _t in cases:
        (status,) = r.take("<B")
        if status == 0:
            (n,) = r.take("<I")
            out.append(list(r.take(f"<{n}i")))
        else:
            (n,) = r.take("<I")
            out.append(CodingError(r.take_bytes(n).decode(errors="replace")))
    return out


def native_bench(values, contexts, tables) -> dict:
    """Time one encode+decode of the workload inside the native process."""
    req = bytearray(PROTOCOL_MAGIC + struct.pack("<BI", OP_BENCH, 1))
    _pack_encode_case(req, values, contexts, tables)
    r = _Reader(_run(bytes(req)))
    (status,) = r.take("<B")
    (n,) = r.take("<I")
    body = r.take_bytes(n)
    if status != 0:
        raise CodingError(f"native bench error: {body.decode(errors='replace')}")
    encode_s, decode_s = r.take("<dd")
    return {"payload": body, "encode_seconds": encode_s, "decode_seconds": decode_s}


def dispatch_encode(values: list, contexts: list, tables: list[CdfTable]) -> bytes:
    if _use_native(len(values)):
        return native_encode_batch([(values, contexts, tables)])[0]
    return rans.encode_symbols(values, contexts, tables)


def dispatch_decode(data: bytes, contexts: list, tables: list[CdfTable]) -> list[int]:
    if _use_native(len(contexts)):
        result = native_decode_batch([(data, contexts, tables)])[0]
        if isinstance(result, CodingError):
            raise result
        return result
    return rans.decode_symbols(data, contexts, tables)
