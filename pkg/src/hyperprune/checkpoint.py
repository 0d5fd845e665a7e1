"""Versioned binary checkpoints of a (compacted) network.

Layout, all integers little-endian::

    magic      8 bytes  b"HPRUNECK"
    version    u32
    spec_len   u32, then spec_len bytes of UTF-8 layer-graph text
    meta_len   u32, then meta_len bytes of UTF-8 ``key=value`` lines
    count      u32 tensors, each:
        name_len u16, name bytes
        ndim     u8, dims as ndim x u32
        payload  prod(dims) x float64 (little-endian)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ArgumentError
from .netspec import NetSpec, WeightSet, from_text, to_text
from .numeric import Tensor

MAGIC = b"HPRUNECK"
VERSION = 1


def encode(spec: NetSpec, weights: WeightSet, meta: dict | None = None) -> bytes:
    spec_bytes = to_text(spec).encode("utf-8")
    meta_bytes = "".join(f"{k}={v}\n" for k, v in sorted((meta or {}).items())).encode("utf-8")
    named = weights.named()
    out = [MAGIC, struct.pack("<I", VERSION)]
    out += [struct.pack("<I", len(spec_bytes)), spec_bytes]
    out += [struct.pack("<I", len(meta_bytes)), meta_bytes]
    out.append(struct.pack("<I", len(named)))
    for name, t in named.items():
        nb = name.encode("utf-8")
        arr = np.ascontiguousarray(t.data, dtype="<f8")
        out.append(struct.pack("<H", len(nb)) + nb)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def decode(blob: bytes) -> tuple[NetSpec, WeightSet, dict]:
    if blob[:8] != MAGIC:
        raise ArgumentError("not a checkpoint file (bad magic)")
    pos = 8

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        vals = struct.unpack_from(fmt, blob, pos)
        pos += size
        return vals

    (version,) = take("<I")
    if version != VERSION:
        raise ArgumentError(f"unsupported checkpoint version {version}")
    (n,) = take("<I")
    spec = from_text(blob[pos:pos + n].decode("utf-8"))
    pos += n
    (n,) = take("<I")
    meta = {}
    for line in blob[pos:pos + n].decode("utf-8").splitlines():
        k, _, v = line.partition("=")
        meta[k] = v
    pos += n
    (count,) = take("<I")
    ws = WeightSet()
    for _ in range(count):
        (ln,) = take("<H")
        name = blob[pos:pos + ln].decode("utf-8")
        pos += ln
        (ndim,) = take("<B")
        dims = take(f"<{ndim}I") if ndim else ()
        size = int(np.prod(dims)) if dims else 1
        arr = np.frombuffer(blob, dtype="<f8", count=size, offset=pos).reshape(dims).astype(np.float64)
        pos += 8 * size
        lid, _, key = name.rpartition(".")
        ws.setdefault(lid, {})[key] = Tensor(arr, requires_grad=True)
    return spec, ws, meta


def save(path, spec: NetSpec, weights: WeightSet, meta: dict | None = None) -> None:
    Path(path).write_bytes(encode(spec, weights, meta))


def load(path) -> tuple[NetSpec, WeightSet, dict]:
    return decode(Path(path).read_bytes())
