"""Splitting a network's parameters into a learned and a fixed set.

A :class:`PartitionSpec` says declaratively which entries are learned;
:func:`build_masks` resolves it against a concrete model into one boolean
array per parameter (True = learned). Subsets are always the *first*
coefficients along the chosen dimension, never a random or optimized choice.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import BLOCKS, ArchitectureSpec, Model, ParamInfo, param_layout

KINDS = ("full", "fractional", "integer_k", "blocks", "bn_only")
FIXED_MODES = ("random", "zero")

# guards floor() against representation error, e.g. (1 - 0.9) * 10 = 0.9999999999999998
_FLOOR_SLACK = 1e-9


def slice_count(fraction: float, n: int, minimum: int = 0) -> int:
    return min(n, max(minimum, math.floor(fraction * n + _FLOOR_SLACK)))


@dataclass(frozen=True)
class PartitionSpec:
    kind: str = "full"
    p: float | None = None
    dim_slice: int = 1
    k: int | None = None
    blocks: frozenset = field(default_factory=frozenset)
    fixed_mode: str = "random"

    def __post_init__(self):
        object.__setattr__(self, "blocks", frozenset(self.blocks))
        if self.kind not in KINDS:
            raise ValueError(f"unknown partition kind {self.kind!r}")
        if self.fixed_mode not in FIXED_MODES:
            raise ValueError(f"fixed_mode must be one of {FIXED_MODES}, got {self.fixed_mode!r}")
        if self.kind == "fractional":
            if self.p is None or not 0.0 <= self.p <= 1.0:
                raise ValueError(f"fractional p must lie in [0, 1], got {self.p}")
            if self.dim_slice not in (1, 2, 3, 4):
                raise ValueError(f"dim_slice must be 1, 2, 3 or 4, got {self.dim_slice}")
        if self.kind == "integer_k" and (self.k is None or int(self.k) < 1):
            raise ValueError(f"integer_k needs k >= 1, got {self.k}")
        if self.kind == "blocks":
            if not self.blocks:
                raise ValueError("blocks partition needs at least one block")
            unknown = self.blocks - set(BLOCKS)
            if unknown:
                raise ValueError(f"unknown blocks {sorted(unknown)}; choose from {BLOCKS}")

    @classmethod
    def full(cls, fixed_mode="random"):
        return cls("full", fixed_mode=fixed_mode)

    @classmethod
    def fractional(cls, p, dim_slice=1, fixed_mode="random"):
        return cls("fractional", p=float(p), dim_slice=int(dim_slice), fixed_mode=fixed_mode)

    @classmethod
    def integer_k(cls, k, fixed_mode="random"):
        return cls("integer_k", k=int(k), fixed_mode=fixed_mode)

    @classmethod
    def of_blocks(cls, *names, fixed_mode="random"):
        return cls("blocks", blocks=frozenset(names), fixed_mode=fixed_mode)

    @classmethod
    def bn_only(cls, fixed_mode="random"):
        return cls("bn_only", fixed_mode=fixed_mode)

    def describe(self) -> str:
        if self.kind == "fractional":
            return f"fractional(p={self.p:g},dim={self.dim_slice})"
        if self.kind == "integer_k":
            return f"integer_k(k={self.k})"
        if self.kind == "blocks":
            return "blocks(" + "+".join(b for b in BLOCKS if b in self.blocks) + ")"
        return self.kind


class MaskSet(dict):
    """Parameter name -> read-only boolean array (True = learned)."""

    def __init__(self, masks):
        super().__init__()
        for name, m in masks.items():
            m = np.asarray(m, dtype=bool)
            m.setflags(write=False)
            dict.__setitem__(self, name, m)

    def __setitem__(self, key, value):
        raise TypeError("MaskSet is immutable")

    @property
    def effective(self) -> int:
        return int(sum(int(m.sum()) for m in self.values()))

    @property
    def total(self) -> int:
        return int(sum(m.size for m in self.values()))

    def learned_names(self) -> list[str]:
        return [k for k, m in self.items() if m.any()]


def _conv_mask(info: ParamInfo, spec: PartitionSpec) -> np.ndarray:
    mask = np.zeros(info.shape, dtype=bool)
    if spec.kind == "integer_k":
        mask[:min(spec.k, info.shape[0])] = True
        return mask
    d = spec.dim_slice
    if info.role == "conv_bias":
        # biases follow the filters; they are never split along other dimensions
        if d == 1:
            mask[:slice_count(spec.p, info.shape[0])] = True
        else:
            mask[...] = True
        return mask
    n = slice_count(spec.p, info.shape[d - 1], minimum=1 if d >= 3 else 0)
    index = [slice(None)] * 4
    index[d - 1] = slice(0, n)
    mask[tuple(index)] = True
    return mask


def param_mask(info: ParamInfo, spec: PartitionSpec) -> np.ndarray:
    if spec.kind == "full":
        return np.ones(info.shape, dtype=bool)
    if spec.kind == "bn_only":
        return np.full(info.shape, info.is_bn)
    if spec.kind == "blocks":
        return np.full(info.shape, info.is_bn or info.block in spec.blocks)
    # fractional and integer_k slice conv layers only; fc and BN stay learned
    if info.is_conv:
        return _conv_mask(info, spec)
    return np.ones(info.shape, dtype=bool)


def build_masks(model, spec: PartitionSpec) -> MaskSet:
    infos = model.infos if isinstance(model, Model) else list(model)
    return MaskSet({info.name: param_mask(info, spec) for info in infos})


def learned_count(info: ParamInfo, spec: PartitionSpec) -> int:
    """Number of learned entries of one parameter, computed arithmetically."""
    if spec.kind == "full":
        return info.size
    if spec.kind == "bn_only":
        return info.size if info.is_bn else 0
    if spec.kind == "blocks":
        return info.size if (info.is_bn or info.block in spec.blocks) else 0
    if not info.is_conv:
        return info.size
    o = info.shape[0]
    if spec.kind == "integer_k":
        return min(spec.k, o) * (info.size // o)
    if info.role == "conv_bias":
        return slice_count(spec.p, o) if spec.dim_slice == 1 else o
    d = spec.dim_slice
    n = slice_count(spec.p, info.shape[d - 1], minimum=1 if d >= 3 else 0)
    return n * (info.size // info.shape[d - 1])


def count_params(arch: ArchitectureSpec, partition: PartitionSpec, num_classes: int | None = None):
    """(total, effective) parameter counts without allocating any weights."""
    if num_classes is not None and num_classes != arch.num_classes:
        arch = ArchitectureSpec(arch.family, arch.depth, arch.width_param, num_classes, arch.input_shape)
    infos = param_layout(arch)
    total = sum(i.size for i in infos)
    effective = sum(learned_count(i, partition) for i in infos)
    return total, effective


def apply_fixed_mode(model: Model, masks: MaskSet, mode: str):
    """Set the fixed entries: zeros (``zero``) or left at initialization (``random``).

    Fixed BN scales and shifts are held at 1 and 0 in either mode. Running
    statistics are not parameters and are never touched.
    """
    if mode not in FIXED_MODES:
        raise ValueError(f"fixed_mode must be one of {FIXED_MODES}, got {mode!r}")
    for info in model.infos:
        fixed = ~masks[info.name]
        if not fixed.any():
            continue
        data = model.params[info.name].data
        if info.role == "bn_weight":
            data[fixed] = 1
        elif info.role == "bn_bias" or mode == "zero":
            data[fixed] = 0


def match_fraction(arch: ArchitectureSpec, target: int, dim_slice: int) -> float:
    """Fraction along ``dim_slice`` whose effective count is closest to ``target``.

    Candidates are the breakpoints j/n of every sliced dimension size n, so
    the search is exhaustive; ties go to the smaller fraction.
    """
    sizes = {i.shape[dim_slice - 1] for i in param_layout(arch) if i.role == "conv_weight"}
    candidates = sorted({j / n for n in sizes for j in range(n + 1)})
    best, best_gap = 0.0, None
    for p in candidates:
        gap = abs(count_params(arch, PartitionSpec.fractional(p, dim_slice))[1] - target)
        if best_gap is None or gap < best_gap:
            best, best_gap = p, gap
    return best
