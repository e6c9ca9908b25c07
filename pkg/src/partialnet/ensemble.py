"""Cheap ensembles: one shared backbone, small per-member deltas.

A base network is trained with every parameter learned. Each member then
copies it, re-initializes a chosen subset from its own seed and retrains
only that subset. Members are stored as the values of their relearned
entries; everything else is read from the shared backbone.
"""
from __future__ import annotations

import dataclasses
import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import checkpoint as ck
from .data import Dataset
from .nn import ArchitectureSpec, Model, build_model
from .optim import OptimConfig, predict_logits, train
from .partition import MaskSet, PartitionSpec, build_masks, slice_count
from .tensor import Rng, softmax

MEMBER_KINDS = ("fc_only", "share_conv", "full")


@dataclass
class EnsembleConfig:
    size: int = 5
    member_kind: str = "fc_only"
    R: float | None = None
    base_epochs: int = 1
    member_epochs: int = 1
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        if not self.seeds:
            self.seeds = list(range(1, self.size + 1))
        self.seeds = [int(s) for s in self.seeds]
        if self.size < 2:
            raise ValueError("an ensemble needs at least 2 members")
        if self.member_kind not in MEMBER_KINDS:
            raise ValueError(f"member_kind must be one of {MEMBER_KINDS}")
        if self.member_kind == "share_conv" and (self.R is None or not 0 <= self.R <= 1):
            raise ValueError("share_conv needs R in [0, 1]")
        if len(self.seeds) != self.size or len(set(self.seeds)) != self.size:
            raise ValueError("need one distinct seed per member")
        if self.base_epochs < 0 or self.member_epochs < 1:
            raise ValueError("base_epochs must be >= 0 and member_epochs >= 1")

    def describe(self) -> str:
        if self.member_kind == "share_conv":
            return f"share_conv(R={self.R:g})"
        return self.member_kind


def member_masks(model: Model, cfg: EnsembleConfig) -> MaskSet:
    """Entries each member relearns; BN parameters are shared except in ``full``."""
    if cfg.member_kind == "full":
        return build_masks(model, PartitionSpec.full())
    masks = {}
    for info in model.infos:
        m = np.zeros(info.shape, dtype=bool)
        if info.is_fc:
            m[...] = True
        elif info.is_conv and cfg.member_kind == "share_conv":
            m[:slice_count(1.0 - cfg.R, info.shape[0])] = True
        masks[info.name] = m
    return MaskSet(masks)


@dataclass
class Member:
    seed: int
    delta: dict          # name -> 1-D float32 values of the relearned entries
    running: dict        # BN running statistics after member training
    history: list = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(sum(v.size for v in self.delta.values()))


@dataclass
class Ensemble:
    spec: ArchitectureSpec
    cfg: EnsembleConfig
    backbone: dict
    backbone_running: dict
    masks: MaskSet
    members: list

    @property
    def backbone_size(self) -> int:
        return int(sum(v.size for v in self.backbone.values()))

    @property
    def stored_params(self) -> int:
        return self.backbone_size + sum(m.size for m in self.members)

    def member_params(self, i: int) -> dict:
        out = {}
        delta = self.members[i].delta
        for name, base in self.backbone.items():
            arr = base.copy()
            if name in delta:
                arr[self.masks[name]] = delta[name]
            out[name] = arr
        return out

    def member_model(self, i: int) -> Model:
        model = build_model(self.spec, Rng(0))
        model.load_state(self.member_params(i), self.members[i].running)
        return model


def _copy_running(running):
    return {k: {s: v.copy() for s, v in r.items()} for k, r in running.items()}


def train_ensemble(spec: ArchitectureSpec, train_set: Dataset, cfg: EnsembleConfig, optim_cfg: OptimConfig,
                   val_set: Dataset | None = None, use_augment=False) -> Ensemble:
    base = build_model(spec, Rng(optim_cfg.seed))
    if cfg.base_epochs:
        base_cfg = dataclasses.replace(optim_cfg, epochs=cfg.base_epochs, schedule=None)
        train(base, train_set, build_masks(base, PartitionSpec.full()), base_cfg, val_set, use_augment)
    backbone, backbone_running = base.state()
    masks = member_masks(base, cfg)

    members = []
    for seed in cfg.seeds:
        model = build_model(spec, Rng(seed))
        fresh, _ = model.state()
        model.load_state({k: np.where(masks[k], fresh[k], backbone[k]) for k in backbone},
                         _copy_running(backbone_running))
        member_cfg = dataclasses.replace(optim_cfg, epochs=cfg.member_epochs, schedule=None, seed=seed)
        history = train(model, train_set, masks, member_cfg, val_set, use_augment)
        delta = {k: model.params[k].data[masks[k]].copy() for k in masks.learned_names()}
        members.append(Member(seed, delta, _copy_running(model.running), history))
    return Ensemble(spec, cfg, backbone, backbone_running, masks, members)


def member_probs(ens: Ensemble, images: np.ndarray) -> np.ndarray:
    """Softmax outputs of every member, shape (members, N, classes)."""
    out = []
    for i in range(len(ens.members)):
        model = ens.member_model(i)
        ds = Dataset(images, np.zeros(len(images), dtype=np.int64), ens.spec.num_classes, "test")
        out.append(softmax(predict_logits(model, ds).astype(np.float64)))
    return np.stack(out)


def average_probs(probs) -> np.ndarray:
    return np.mean(np.asarray(probs, dtype=np.float64), axis=0)


def predict_ensemble(ens: Ensemble, images: np.ndarray) -> np.ndarray:
    """Arithmetic mean of the members' class probabilities."""
    return average_probs(member_probs(ens, images))


@dataclass
class EnsembleReport:
    kind: str
    stored_params: int
    member_accuracies: list
    mean_accuracy: float
    ensemble_accuracy: float


def ensemble_report(ens: Ensemble, test_set: Dataset) -> EnsembleReport:
    probs = member_probs(ens, test_set.images)
    accs = [float((p.argmax(1) == test_set.labels).mean()) for p in probs]
    ens_acc = float((average_probs(probs).argmax(1) == test_set.labels).mean())
    return EnsembleReport(ens.cfg.describe(), ens.stored_params, accs, float(np.mean(accs)), ens_acc)


# ---------------------------------------------------------------- persistence

DELTA_MAGIC = b"PNDELTA\0"


def save_ensemble(ens: Ensemble, out_dir) -> list[str]:
    """One backbone checkpoint plus one delta file per member."""
    os.makedirs(out_dir, exist_ok=True)
    base = build_model(ens.spec, Rng(0))
    base.load_state(ens.backbone, ens.backbone_running)
    paths = [os.path.join(out_dir, "backbone.ckpt")]
    ck.save_checkpoint(paths[0], base, build_masks(base, PartitionSpec.full()))
    meta = json.dumps({"member_kind": ens.cfg.member_kind, "R": ens.cfg.R,
                       "base_epochs": ens.cfg.base_epochs, "member_epochs": ens.cfg.member_epochs,
                       "seeds": ens.cfg.seeds}, sort_keys=True).encode("utf-8")
    for i, m in enumerate(ens.members):
        path = os.path.join(out_dir, f"member{i + 1}.delta")
        with open(path, "wb") as fh:
            fh.write(DELTA_MAGIC)
            ck._u32(fh, ck.VERSION)
            ck._u32(fh, len(meta))
            fh.write(meta)
            fh.write(struct.pack("<Q", m.seed))
            ck._u32(fh, len(m.delta))
            for name, values in m.delta.items():
                ck._name(fh, name)
                ck._u32(fh, values.size)
                ck._f32(fh, values)
            ck._u32(fh, len(m.running))
            for name, r in m.running.items():
                ck._name(fh, name)
                ck._u32(fh, r["mean"].size)
                ck._f32(fh, r["mean"])
                ck._f32(fh, r["var"])
        paths.append(path)
    return paths


def load_ensemble(out_dir) -> Ensemble:
    base, _ = ck.load_checkpoint(os.path.join(out_dir, "backbone.ckpt"))
    backbone, backbone_running = base.state()
    members, cfg = [], None
    i = 1
    while os.path.exists(os.path.join(out_dir, f"member{i}.delta")):
        with open(os.path.join(out_dir, f"member{i}.delta"), "rb") as fh:
            r = ck._Reader(fh.read())
        if r.take(len(DELTA_MAGIC)) != DELTA_MAGIC or r.u32() != ck.VERSION:
            raise ck.CheckpointError(f"member{i}.delta: bad header")
        meta = json.loads(r.take(r.u32()).decode("utf-8"))
        seed = struct.unpack("<Q", r.take(8))[0]
        delta = {}
        for _ in range(r.u32()):
            name = r.name()
            delta[name] = r.f32(r.u32())
        running = {}
        for _ in range(r.u32()):
            name = r.name()
            n = r.u32()
            running[name] = {"mean": r.f32(n), "var": r.f32(n)}
        members.append(Member(seed, delta, running))
        cfg = meta
        i += 1
    if cfg is None:
        raise ck.CheckpointError(f"no member deltas in {out_dir}")
    ecfg = EnsembleConfig(len(members), cfg["member_kind"], cfg["R"], cfg["base_epochs"],
                          cfg["member_epochs"], cfg["seeds"])
    return Ensemble(base.spec, ecfg, backbone, backbone_running, member_masks(base, ecfg), members)
