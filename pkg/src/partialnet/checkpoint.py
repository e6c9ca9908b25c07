"""Versioned binary checkpoints.

Layout (all integers little-endian uint32)::

    magic "PNCKPT\\0\\0" | version | spec_len | spec JSON (utf-8)
    n_params  then per parameter:  name_len | name | rank | dims... | float32 data
    n_stats   then per BN layer:   name_len | name | channels | mean f32 | var f32
    n_masks   then per parameter:  name_len | name | element count | packbits(mask, little)
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .nn import ArchitectureSpec, Model, build_model
from .partition import MaskSet
from .tensor import Rng

MAGIC = b"PNCKPT\0\0"
VERSION = 1


class CheckpointError(ValueError):
    pass


def _u32(fh, v):
    fh.write(struct.pack("<I", int(v)))


def _name(fh, s):
    b = s.encode("utf-8")
    _u32(fh, len(b))
    fh.write(b)


def _f32(fh, arr):
    fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(path, model: Model, masks: MaskSet) -> None:
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        _u32(fh, VERSION)
        spec = json.dumps(model.spec.to_dict(), sort_keys=True).encode("utf-8")
        _u32(fh, len(spec))
        fh.write(spec)
        _u32(fh, len(model.infos))
        for info in model.infos:
            arr = model.params[info.name].data
            _name(fh, info.name)
            _u32(fh, arr.ndim)
            for d in arr.shape:
                _u32(fh, d)
            _f32(fh, arr)
        _u32(fh, len(model.running))
        for name, r in model.running.items():
            _name(fh, name)
            _u32(fh, r["mean"].size)
            _f32(fh, r["mean"])
            _f32(fh, r["var"])
        _u32(fh, len(masks))
        for name, m in masks.items():
            _name(fh, name)
            _u32(fh, m.size)
            fh.write(np.packbits(m.ravel(), bitorder="little").tobytes())


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise CheckpointError("truncated checkpoint")
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def u32(self):
        return struct.unpack("<I", self.take(4))[0]

    def name(self):
        return self.take(self.u32()).decode("utf-8")

    def f32(self, n):
        return np.frombuffer(self.take(4 * n), dtype="<f4").astype(np.float32)


def load_checkpoint(path) -> tuple[Model, MaskSet]:
    with open(path, "rb") as fh:
        r = _Reader(fh.read())
    if r.take(len(MAGIC)) != MAGIC:
        raise CheckpointError("not a partialnet checkpoint")
    version = r.u32()
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    spec = ArchitectureSpec.from_dict(json.loads(r.take(r.u32()).decode("utf-8")))
    model = build_model(spec, Rng(0))
    for _ in range(r.u32()):
        name = r.name()
        shape = tuple(r.u32() for _ in range(r.u32()))
        if name not in model.params or model.params[name].shape != shape:
            raise CheckpointError(f"parameter {name} {shape} does not fit {spec.label}")
        model.params[name].data[...] = r.f32(int(np.prod(shape))).reshape(shape)
    for _ in range(r.u32()):
        name = r.name()
        n = r.u32()
        model.running[name]["mean"][...] = r.f32(n)
        model.running[name]["var"][...] = r.f32(n)
    masks = {}
    for _ in range(r.u32()):
        name = r.name()
        n = r.u32()
        bits = np.frombuffer(r.take((n + 7) // 8), dtype=np.uint8)
        masks[name] = np.unpackbits(bits, count=n, bitorder="little").astype(bool).reshape(model.params[name].shape)
    if r.pos != len(r.buf):
        raise CheckpointError("trailing bytes in checkpoint")
    return model, MaskSet(masks)
