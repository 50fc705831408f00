"""Versioned binary checkpoints.

Layout (little-endian)::

    magic "PIHCKPT\\0" | u16 version | u32 len | JSON header
    u32 n_params, then per parameter:
        u16 len | name | u8 ndim | u32 dims... | f8 values
    u8 has_optimizer [| u64 step | f8 first moments | f8 second moments]
    u32 crc32 of everything above

The JSON header holds the network kind, its architecture config, the compute
dtype and free-form metadata (epoch, loss curve). Loading rebuilds the model
from the config and checks every stored shape against it.
"""

from __future__ import annotations

import io
import json
import struct
import zlib

import numpy as np

from ..errors import CorruptFile, ShapeMismatch, VersionMismatch
from .optim import Adam
from .pointnet import OAKN, OPN, config_from_dict

MAGIC = b"PIHCKPT\0"
VERSION = 1
_MODELS = {"oakn": OAKN, "opn": OPN}


def _w(buf, fmt, *vals):
    buf.write(struct.pack("<" + fmt, *vals))


def _array(buf, a):
    buf.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def dumps(model, optimizer: Adam | None = None, meta: dict | None = None) -> bytes:
    header = {
        "kind": model.kind,
        "config": model.config.to_dict(),
        "dtype": model.dtype.name,
        "meta": meta or {},
    }
    hb = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    _w(buf, "HI", VERSION, len(hb))
    buf.write(hb)
    _w(buf, "I", len(model.params))
    for name, p in model.params.items():
        nb = name.encode()
        _w(buf, "H", len(nb))
        buf.write(nb)
        _w(buf, "B", p.data.ndim)
        _w(buf, f"{p.data.ndim}I", *p.data.shape)
        _array(buf, p.data)
    if optimizer is None:
        _w(buf, "B", 0)
    else:
        _w(buf, "BQ", 1, optimizer.t)
        for a in optimizer.m + optimizer.v:
            _array(buf, a)
    body = buf.getvalue()
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CorruptFile("checkpoint truncated")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct("<" + fmt)
        return s.unpack(self.take(s.size))

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        return np.frombuffer(self.take(8 * n), dtype="<f8").reshape(shape)


def loads(blob: bytes):
    """Return ``(model, optimizer_state or None, meta)``."""
    if len(blob) < len(MAGIC) + 6 or blob[: len(MAGIC)] != MAGIC:
        raise CorruptFile("not a checkpoint file")
    rd = _Reader(blob)
    rd.take(len(MAGIC))
    (version,) = rd.unpack("H")
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version}, expected {VERSION}")
    if len(blob) < 4 or struct.unpack("<I", blob[-4:])[0] != zlib.crc32(blob[:-4]):
        raise CorruptFile("checkpoint checksum mismatch")
    rd.blob = blob[:-4]
    (hlen,) = rd.unpack("I")
    try:
        header = json.loads(rd.take(hlen))
        cls = _MODELS[header["kind"]]
        config = config_from_dict(header["kind"], header["config"])
    except (ValueError, KeyError, TypeError) as exc:
        raise CorruptFile(f"bad checkpoint header: {exc}") from exc
    model = cls(config, seed=0, dtype=np.dtype(header["dtype"]))
    (count,) = rd.unpack("I")
    if count != len(model.params):
        raise ShapeMismatch(f"checkpoint has {count} tensors, architecture needs {len(model.params)}")
    for expected in model.params:
        (nlen,) = rd.unpack("H")
        name = rd.take(nlen).decode()
        (ndim,) = rd.unpack("B")
        shape = rd.unpack(f"{ndim}I")
        p = model.params.get(name)
        if name != expected or p is None or tuple(shape) != p.shape:
            raise ShapeMismatch(f"tensor {name} {tuple(shape)} does not match the architecture")
        p.data = rd.array(shape).astype(model.dtype)
    (has_opt,) = rd.unpack("B")
    opt_state = None
    if has_opt:
        (t,) = rd.unpack("Q")
        shapes = [p.shape for p in model.params.values()]
        m = [rd.array(s).copy() for s in shapes]
        v = [rd.array(s).copy() for s in shapes]
        opt_state = {"t": t, "m": m, "v": v}
    if rd.pos != len(rd.blob):
        raise CorruptFile("trailing bytes after checkpoint payload")
    return model, opt_state, header["meta"]


def save_checkpoint(path, model, optimizer: Adam | None = None, meta: dict | None = None) -> None:
    with open(path, "wb") as f:
        f.write(dumps(model, optimizer, meta))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return loads(f.read())
