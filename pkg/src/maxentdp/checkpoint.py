"""Binary checkpoints.

Layout (all integers unsigned little-endian, all reals little-endian float64)::

    b"MXDP1"
    u32 network count
      per network: u16 name length, name (utf-8), u32 layer count L,
                   u32 x (L+1) widths, then per layer W (row-major, in x out) and b
    u32 optimizer count
      per optimizer: u16 name length, name (the network it updates), u64 step,
                     f64 lr, beta1, beta2, eps, then per parameter m followed by v
    u32 CRC-32 of every preceding byte
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .netcore import Adam, Mlp

MAGIC = b"MXDP1"
_F8 = np.dtype("<f8")


class CheckpointError(ValueError):
    pass


def atomic_write(path, data: bytes):
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _name(buf: list, name: str):
    raw = name.encode("utf-8")
    buf.append(struct.pack("<H", len(raw)))
    buf.append(raw)


def dumps(nets: dict[str, Mlp], opts: dict[str, Adam] | None = None) -> bytes:
    opts = opts or {}
    buf = [MAGIC, struct.pack("<I", len(nets))]
    for name, net in nets.items():
        _name(buf, name)
        buf.append(struct.pack("<I", net.n_layers))
        buf.append(struct.pack(f"<{len(net.widths)}I", *net.widths))
        for p in net.params:
            buf.append(np.ascontiguousarray(p, dtype=_F8).tobytes())
    buf.append(struct.pack("<I", len(opts)))
    for name, opt in opts.items():
        if name not in nets or opt.net is not nets[name]:
            raise CheckpointError(f"optimizer {name!r} must be keyed by the network it updates")
        _name(buf, name)
        buf.append(struct.pack("<Q", opt.step_count))
        buf.append(struct.pack("<4d", opt.lr, opt.beta1, opt.beta2, opt.eps))
        for m, v in zip(opt.m, opt.v):
            buf.append(np.ascontiguousarray(m, dtype=_F8).tobytes())
            buf.append(np.ascontiguousarray(v, dtype=_F8).tobytes())
    body = b"".join(buf)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointError("checkpoint is truncated")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        (n,) = self.unpack("<H")
        return self.take(n).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        count = int(np.prod(shape))
        return np.frombuffer(self.take(8 * count), dtype=_F8).reshape(shape).astype(np.float64)


def loads(data: bytes):
    """Parse checkpoint bytes into ``(nets, opts)``; nothing is returned unless the whole file is valid."""
    if len(data) < len(MAGIC) or data[:4] != MAGIC[:4]:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"unsupported checkpoint version {data[4:5]!r}")
    if len(data) < len(MAGIC) + 4:
        raise CheckpointError("checkpoint is truncated")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    r = _Reader(body)
    r.take(len(MAGIC))
    nets: dict[str, Mlp] = {}
    (n_nets,) = r.unpack("<I")
    for _ in range(n_nets):
        name = r.name()
        (n_layers,) = r.unpack("<I")
        widths = list(r.unpack(f"<{n_layers + 1}I"))
        net = Mlp(widths)
        net.params = [r.array(p.shape) for p in net.params]
        nets[name] = net
    opts: dict[str, Adam] = {}
    (n_opts,) = r.unpack("<I")
    for _ in range(n_opts):
        name = r.name()
        if name not in nets:
            raise CheckpointError(f"optimizer state for unknown network {name!r}")
        (step,) = r.unpack("<Q")
        lr, b1, b2, eps = r.unpack("<4d")
        opt = Adam(nets[name], lr, b1, b2, eps)
        opt.step_count = step
        for i, p in enumerate(nets[name].params):
            opt.m[i] = r.array(p.shape)
            opt.v[i] = r.array(p.shape)
        opts[name] = opt
    if r.pos != len(body):
        raise CheckpointError("trailing bytes after checkpoint payload")
    if zlib.crc32(body) != crc:
        raise CheckpointError("checkpoint checksum mismatch")
    return nets, opts


def save(path, nets, opts=None):
    atomic_write(path, dumps(nets, opts))


def load(path):
    return loads(Path(path).read_bytes())
