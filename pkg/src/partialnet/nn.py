"""Architectures: a plain CNN, wide residual networks and densenet-BC.

Each architecture is a small graph of layer objects. The graph can be built
without allocating any weights (``param_layout``), which is how full-scale
networks such as WRN-28-10 are counted; ``build_model`` allocates and
initializes the same parameters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Rng, Tensor

FAMILIES = ("simple-cnn", "wide-resnet", "densenet-bc")
BLOCKS = ("conv1", "block1", "block2", "block3", "fc")
ROLES = ("conv_weight", "conv_bias", "bn_weight", "bn_bias", "fc_weight", "fc_bias")

SIMPLE_CNN_WIDTHS = (16, 32, 64, 64)


@dataclass(frozen=True)
class ArchitectureSpec:
    family: str
    depth: int
    width_param: int = 1
    num_classes: int = 10
    input_shape: tuple = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(s) for s in self.input_shape))
        if self.family not in FAMILIES:
            raise ValueError(f"unknown architecture family {self.family!r}")
        if self.family in ("wide-resnet", "densenet-bc"):
            if self.depth < 10 or (self.depth - 4) % 6:
                raise ValueError(f"{self.family} depth must satisfy (depth - 4) % 6 == 0, got {self.depth}")
        elif self.depth < 0:
            raise ValueError("simple-cnn depth must be >= 0")
        if self.width_param < 1:
            raise ValueError("width_param must be >= 1")
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ValueError(f"input_shape must be C x H x W, got {self.input_shape}")

    @property
    def label(self) -> str:
        return f"{self.family}-{self.depth}-{self.width_param}"

    def to_dict(self) -> dict:
        return {"family": self.family, "depth": self.depth, "width_param": self.width_param,
                "num_classes": self.num_classes, "input_shape": list(self.input_shape)}

    @classmethod
    def from_dict(cls, d) -> "ArchitectureSpec":
        return cls(d["family"], int(d["depth"]), int(d["width_param"]), int(d["num_classes"]),
                   tuple(d["input_shape"]))


@dataclass(frozen=True)
class ParamInfo:
    name: str
    shape: tuple
    block: str
    role: str

    @property
    def size(self) -> int:
        return math.prod(self.shape)

    @property
    def is_bn(self) -> bool:
        return self.role.startswith("bn_")

    @property
    def is_bias(self) -> bool:
        return self.role in ("conv_bias", "fc_bias", "bn_bias")

    @property
    def is_conv(self) -> bool:
        return self.role.startswith("conv_")

    @property
    def is_fc(self) -> bool:
        return self.role.startswith("fc_")

    @property
    def fan_in(self) -> int:
        return math.prod(self.shape[1:])


# ---------------------------------------------------------------- layers


class Conv:
    def __init__(self, name, cin, cout, k, block, stride=1, pad=None, bias=False):
        self.name, self.cin, self.cout, self.k, self.block = name, cin, cout, k, block
        self.stride = stride
        self.pad = k // 2 if pad is None else pad
        self.bias = bias

    def params(self):
        yield ParamInfo(f"{self.name}.weight", (self.cout, self.cin, self.k, self.k), self.block, "conv_weight")
        if self.bias:
            yield ParamInfo(f"{self.name}.bias", (self.cout,), self.block, "conv_bias")

    def __call__(self, m, x):
        b = m.params[f"{self.name}.bias"] if self.bias else None
        return T.conv2d(x, m.params[f"{self.name}.weight"], b, self.stride, self.pad)


class BN:
    def __init__(self, name, channels, block):
        self.name, self.channels, self.block = name, channels, block

    def params(self):
        yield ParamInfo(f"{self.name}.weight", (self.channels,), self.block, "bn_weight")
        yield ParamInfo(f"{self.name}.bias", (self.channels,), self.block, "bn_bias")

    def __call__(self, m, x):
        return T.batchnorm2d(x, m.params[f"{self.name}.weight"], m.params[f"{self.name}.bias"],
                             m.running[self.name], m.training)


class Linear:
    def __init__(self, name, din, dout, block="fc"):
        self.name, self.din, self.dout, self.block = name, din, dout, block

    def params(self):
        yield ParamInfo(f"{self.name}.weight", (self.dout, self.din), self.block, "fc_weight")
        yield ParamInfo(f"{self.name}.bias", (self.dout,), self.block, "fc_bias")

    def __call__(self, m, x):
        return T.linear(x, m.params[f"{self.name}.weight"], m.params[f"{self.name}.bias"])


# ---------------------------------------------------------------- networks


class SimpleCNN:
    """``depth`` conv-BN-ReLU stages, global average pooling, linear classifier.

    Widths follow 16, 32, 64, 64 (then 64) times ``width_param``; stages 2-4
    downsample by 2 while the map is larger than 1x1. With depth 0 the
    network is logistic regression on the flattened input.
    """

    def __init__(self, spec: ArchitectureSpec):
        c, h, w = spec.input_shape
        self.stages = []
        cin = c
        for i in range(spec.depth):
            cout = SIMPLE_CNN_WIDTHS[min(i, len(SIMPLE_CNN_WIDTHS) - 1)] * spec.width_param
            block = "conv1" if i == 0 else f"block{min(i, 3)}"
            prefix = "conv1" if i == 0 else f"block{min(i, 3)}.stage{i}"
            stride = 2 if 1 <= i <= 3 and min(h, w) > 1 else 1
            h, w = (h - 1) // stride + 1, (w - 1) // stride + 1
            self.stages.append((Conv(f"{prefix}.conv", cin, cout, 3, block, stride, bias=True),
                                BN(f"{prefix}.bn", cout, block)))
            cin = cout
        din = cin if spec.depth else c * spec.input_shape[1] * spec.input_shape[2]
        self.fc = Linear("fc", din, spec.num_classes)

    def layers(self):
        for conv, bn in self.stages:
            yield conv
            yield bn
        yield self.fc

    def forward(self, m, x):
        for conv, bn in self.stages:
            x = T.relu(bn(m, conv(m, x)))
        x = T.global_avg_pool(x) if self.stages else T.flatten(x)
        return self.fc(m, x)


class WideResNet:
    """Pre-activation wide residual network (depth 6n+4, widen factor k)."""

    def __init__(self, spec: ArchitectureSpec):
        n = (spec.depth - 4) // 6
        k = spec.width_param
        widths = [16, 16 * k, 32 * k, 64 * k]
        self.conv1 = Conv("conv1", spec.input_shape[0], widths[0], 3, "conv1")
        self.units = []
        cin = widths[0]
        for b in range(3):
            block = f"block{b + 1}"
            for u in range(n):
                cout = widths[b + 1]
                stride = 2 if (b > 0 and u == 0) else 1
                p = f"{block}.unit{u + 1}"
                unit = {
                    "bn1": BN(f"{p}.bn1", cin, block),
                    "conv1": Conv(f"{p}.conv1", cin, cout, 3, block, stride),
                    "bn2": BN(f"{p}.bn2", cout, block),
                    "conv2": Conv(f"{p}.conv2", cout, cout, 3, block),
                    "shortcut": None if cin == cout else Conv(f"{p}.shortcut", cin, cout, 1, block, stride, pad=0),
                }
                self.units.append(unit)
                cin = cout
        self.bn = BN("block3.bn_final", cin, "block3")
        self.fc = Linear("fc", cin, spec.num_classes)

    def layers(self):
        yield self.conv1
        for u in self.units:
            for key in ("bn1", "conv1", "bn2", "conv2", "shortcut"):
                if u[key] is not None:
                    yield u[key]
        yield self.bn
        yield self.fc

    def forward(self, m, x):
        x = self.conv1(m, x)
        for u in self.units:
            o = T.relu(u["bn1"](m, x))
            shortcut = x if u["shortcut"] is None else u["shortcut"](m, o)
            y = u["conv1"](m, o)
            y = u["conv2"](m, T.relu(u["bn2"](m, y)))
            x = y + shortcut
        x = T.relu(self.bn(m, x))
        return self.fc(m, T.global_avg_pool(x))


class DenseNetBC:
    """Densenet with bottleneck layers and 0.5 compression (depth 6n+4, growth rate g)."""

    def __init__(self, spec: ArchitectureSpec):
        n = (spec.depth - 4) // 6
        g = spec.width_param
        cin = 2 * g
        self.conv1 = Conv("conv1", spec.input_shape[0], cin, 3, "conv1")
        self.blocks = []
        for b in range(3):
            block = f"block{b + 1}"
            layers = []
            for i in range(n):
                p = f"{block}.layer{i + 1}"
                layers.append((BN(f"{p}.bn1", cin, block), Conv(f"{p}.conv1", cin, 4 * g, 1, block),
                               BN(f"{p}.bn2", 4 * g, block), Conv(f"{p}.conv2", 4 * g, g, 3, block)))
                cin += g
            trans = None
            if b < 2:
                cout = cin // 2
                trans = (BN(f"{block}.trans.bn", cin, block), Conv(f"{block}.trans.conv", cin, cout, 1, block))
                cin = cout
            self.blocks.append((layers, trans))
        self.bn = BN("block3.bn_final", cin, "block3")
        self.fc = Linear("fc", cin, spec.num_classes)

    def layers(self):
        yield self.conv1
        for layers, trans in self.blocks:
            for group in layers:
                yield from group
            if trans is not None:
                yield from trans
        yield self.bn
        yield self.fc

    def forward(self, m, x):
        x = self.conv1(m, x)
        for layers, trans in self.blocks:
            for bn1, conv1, bn2, conv2 in layers:
                y = conv1(m, T.relu(bn1(m, x)))
                y = conv2(m, T.relu(bn2(m, y)))
                x = T.concat([x, y], axis=1)
            if trans is not None:
                bn, conv = trans
                x = T.avg_pool2d(conv(m, T.relu(bn(m, x))), 2)
        x = T.relu(self.bn(m, x))
        return self.fc(m, T.global_avg_pool(x))


_NETS = {"simple-cnn": SimpleCNN, "wide-resnet": WideResNet, "densenet-bc": DenseNetBC}


def build_graph(spec: ArchitectureSpec):
    return _NETS[spec.family](spec)


def param_layout(spec: ArchitectureSpec) -> list[ParamInfo]:
    """Every parameter of ``spec`` in canonical order, without allocating weights."""
    infos = [info for layer in build_graph(spec).layers() for info in layer.params()]
    names = [i.name for i in infos]
    assert len(set(names)) == len(names), "duplicate parameter names"
    return infos


def bn_layers(spec_or_graph) -> list[BN]:
    graph = build_graph(spec_or_graph) if isinstance(spec_or_graph, ArchitectureSpec) else spec_or_graph
    return [layer for layer in graph.layers() if isinstance(layer, BN)]


# ---------------------------------------------------------------- model


class Model:
    """Instantiated network: parameter tensors, BN running statistics and mode."""

    def __init__(self, spec: ArchitectureSpec, graph, params: dict, running: dict):
        self.spec = spec
        self.graph = graph
        self.params = params
        self.running = running
        self.infos = [info for layer in graph.layers() for info in layer.params()]
        self.training = True

    def forward(self, batch, mode="train") -> Tensor:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = batch if isinstance(batch, Tensor) else Tensor(batch)
        if x.shape[1:] != self.spec.input_shape:
            raise ValueError(f"batch shape {x.shape[1:]} does not match input shape {self.spec.input_shape}")
        self.training = mode == "train"
        return self.graph.forward(self, x)

    __call__ = forward

    def named_parameters(self):
        """(name, tensor, block, is_bn, is_bias) for every parameter, in canonical order."""
        return [(i.name, self.params[i.name], i.block, i.is_bn, i.is_bias) for i in self.infos]

    @property
    def num_params(self) -> int:
        return sum(i.size for i in self.infos)

    def state(self) -> tuple[dict, dict]:
        """Deep copy of (parameter arrays, running statistics)."""
        return ({k: t.data.copy() for k, t in self.params.items()},
                {k: {s: v.copy() for s, v in r.items()} for k, r in self.running.items()})

    def load_state(self, params: dict, running: dict | None = None):
        for k, arr in params.items():
            t = self.params[k]
            if arr.shape != t.shape:
                raise ValueError(f"shape mismatch for {k}: {arr.shape} vs {t.shape}")
            t.data[...] = arr
        if running is not None:
            for k, r in running.items():
                for s, v in r.items():
                    self.running[k][s][...] = v


def init_param(info: ParamInfo, rng: Rng, dtype=np.float32) -> np.ndarray:
    if info.role in ("conv_weight", "fc_weight"):
        return T.init_kaiming(info.shape, info.fan_in, rng, dtype).data
    if info.role == "bn_weight":
        return np.ones(info.shape, dtype=dtype)
    return np.zeros(info.shape, dtype=dtype)


def build_model(spec: ArchitectureSpec, rng: Rng, dtype=np.float32) -> Model:
    graph = build_graph(spec)
    params = {}
    for layer in graph.layers():
        for info in layer.params():
            params[info.name] = Tensor(init_param(info, rng, dtype), requires_grad=True, name=info.name)
    running = {bn.name: {"mean": np.zeros(bn.channels, dtype=dtype), "var": np.ones(bn.channels, dtype=dtype)}
               for bn in bn_layers(graph)}
    return Model(spec, graph, params, running)
