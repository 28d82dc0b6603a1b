"""Binary policy checkpoints.

Layout (little-endian): 4-byte magic, uint32 format version, uint32 context
window, uint32 hidden size, uint32 vocabulary size, uint64 parameter count,
then the parameters as float64.
"""

from __future__ import annotations

import os
import struct
from pathlib import Path

import numpy as np

from .errors import ArchitectureMismatch, CheckpointError
from .policy import PolicyArch, PolicyParams

MAGIC = b"SLPC"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIIIIQ")


def encode_checkpoint(params: PolicyParams) -> bytes:
    arch = params.arch
    header = _HEADER.pack(
        MAGIC,
        FORMAT_VERSION,
        arch.context_window,
        arch.hidden_size,
        arch.vocab_size,
        arch.param_count,
    )
    return header + params.values.astype("<f8").tobytes()


def decode_checkpoint(data: bytes, source: str = "<bytes>") -> PolicyParams:
    if len(data) < _HEADER.size:
        raise CheckpointError(source, "truncated header")
    magic, version, window, hidden, vocab, count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointError(source, "bad magic")
    if version != FORMAT_VERSION:
        raise CheckpointError(source, f"unsupported format version {version}")

    arch = PolicyArch(context_window=window, hidden_size=hidden, vocab_size=vocab)
    if count != arch.param_count:
        raise CheckpointError(source, f"{count} values for an architecture of {arch.param_count}")
    body = data[_HEADER.size :]
    if len(body) != 8 * count:
        raise CheckpointError(source, "parameter block has the wrong length")
    values = np.frombuffer(body, dtype="<f8").astype(np.float64)
    return PolicyParams(arch, values)


def save_checkpoint(params: PolicyParams, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    partial = path.with_name(path.name + ".partial")
    with open(partial, "wb") as f:
        f.write(encode_checkpoint(params))
        f.flush()
        os.fsync(f.fileno())
    os.replace(partial, path)


def load_checkpoint(path: str | Path, arch: PolicyArch | None = None) -> PolicyParams:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(path), exc.strerror or "unreadable") from exc
    params = decode_checkpoint(data, str(path))
    if arch is not None and params.arch != arch:
        raise ArchitectureMismatch(arch, params.arch)
    return params
