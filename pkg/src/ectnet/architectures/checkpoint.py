"""Versioned binary checkpoints.

Layout (all integers little-endian)::

    magic        8 bytes  b"ECTRNCK1"
    version      u32
    meta_len     u32, then meta_len bytes of UTF-8 JSON
                 ({"spec": NetworkSpec dict, "dtype": ..., "extra": {...}})
    n_arrays     u32
    per array:   u16 name_len, name (UTF-8), u8 dtype code, u8 ndim,
                 ndim x u64 extents, payload (row-major, little-endian)
    crc32        u32 over everything before it

dtype codes: 0 = float32, 1 = float64, 2 = int64. Arrays keep their own
precision so a float64 network round-trips bitwise.
"""
from __future__ import annotations

import io
import json
import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from ..errors import CheckpointMismatchError, CheckpointVersionError, CorruptCheckpointError
from .network import Network
from .specs import NetworkSpec

MAGIC = b"ECTRNCK1"
FORMAT_VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1, np.dtype("int64"): 2}


def write_arrays(path, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(arrays)))
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _CODES.get(arr.dtype)
        if code is None:
            raise TypeError(f"unsupported dtype {arr.dtype} for {name}")
        nb = name.encode("utf-8")
        buf.write(struct.pack("<H", len(nb)))
        buf.write(nb)
        buf.write(struct.pack("<BB", code, arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    body = buf.getvalue()
    body += struct.pack("<I", zlib.crc32(body))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(body)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, data: bytes):
        self.data, self.pos = data, 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptCheckpointError("checkpoint truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        data = Path(path).read_bytes()
    except FileNotFoundError:
        raise
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CorruptCheckpointError(f"{path}: not a checkpoint (bad magic or too short)")
    body, tail = data[:-4], data[-4:]
    r = _Reader(body)
    r.take(len(MAGIC))
    (version,) = r.unpack("<I")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, reader supports {FORMAT_VERSION}")
    if struct.unpack("<I", tail)[0] != zlib.crc32(body):
        raise CorruptCheckpointError(f"{path}: checksum mismatch (truncated or corrupted)")
    (meta_len,) = r.unpack("<I")
    try:
        meta = json.loads(r.take(meta_len).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"{path}: unreadable metadata") from exc
    (count,) = r.unpack("<I")
    arrays: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode("utf-8")
        code, ndim = r.unpack("<BB")
        if code not in _DTYPES:
            raise CorruptCheckpointError(f"{path}: unknown dtype code {code}")
        shape = r.unpack(f"<{ndim}Q") if ndim else ()
        dt = _DTYPES[code]
        n = int(np.prod(shape)) if shape else 1
        arrays[name] = np.frombuffer(r.take(n * dt.itemsize), dtype=dt).reshape(shape).astype(dt.newbyteorder("="))
    if r.pos != len(body):
        raise CorruptCheckpointError(f"{path}: trailing bytes after last array")
    return meta, arrays


def save_checkpoint(net: Network, path, extra: dict | None = None,
                    extra_arrays: dict[str, np.ndarray] | None = None) -> Path:
    meta = {"spec": net.spec.to_dict(), "dtype": net.dtype.name, "extra": extra or {}}
    arrays = dict(net.state_dict())
    if extra_arrays:
        overlap = set(arrays) & set(extra_arrays)
        if overlap:
            raise ValueError(f"extra arrays collide with network state: {sorted(overlap)}")
        arrays.update(extra_arrays)
    write_arrays(path, meta, arrays)
    return Path(path)


def load_checkpoint(path, into: Network | NetworkSpec | str | None = None,
                    return_extra: bool = False):
    """Rebuild a network from ``path``.

    With ``into`` given (network, spec or architecture name) the stored
    arrays must fit that target exactly, else :class:`CheckpointMismatchError`.
    """
    from .network import build_network

    meta, arrays = read_arrays(path)
    try:
        stored_spec = NetworkSpec.from_dict(meta["spec"])
        dtype = np.dtype(meta.get("dtype", "float64"))
    except (KeyError, TypeError) as exc:
        raise CorruptCheckpointError(f"{path}: malformed spec descriptor") from exc
    if into is None:
        net = Network(stored_spec, dtype=dtype)
    elif isinstance(into, Network):
        net = into
    else:
        net = build_network(into, dtype=dtype)
    names = {n for n, _ in net.named_parameters()} | {n for n, _ in net.named_buffers()}
    state = {k: v for k, v in arrays.items() if k in names}
    leftovers = {k: v for k, v in arrays.items() if k not in names}
    if set(state) != names:
        missing = sorted(names - set(state))
        raise CheckpointMismatchError(
            f"{path}: checkpoint of {stored_spec.name!r} does not fit {net.spec.name!r} "
            f"(missing {missing[:3]}...)"
        )
    net.load_state_dict(state)
    net.eval()
    if return_extra:
        return net, meta.get("extra", {}), leftovers
    return net
