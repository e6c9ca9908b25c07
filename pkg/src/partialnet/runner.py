"""Experiment drivers behind the CLI subcommands."""
from __future__ import annotations

import dataclasses
import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import analysis
from .checkpoint import save_checkpoint
from .config import RunConfig, sweep_partition
from .data import load_cifar10, synth_splits
from .ensemble import ensemble_report, save_ensemble, train_ensemble
from .nn import ArchitectureSpec, build_model
from .optim import OptimConfig, train
from .partition import PartitionSpec, apply_fixed_mode, build_masks, count_params, match_fraction
from .tensor import Rng

ENSEMBLE_COLUMNS = ("row", "model_type", "stored_params", "mean_accuracy", "ensemble_accuracy",
                    "member", "seed", "accuracy")


def load_data(cfg: RunConfig):
    d = cfg.data
    if d.source == "cifar10":
        return load_cifar10(d.path)
    return synth_splits(cfg.arch.num_classes, d.n_train_per_class, d.n_test_per_class,
                        cfg.arch.input_shape, d.noise_sigma, d.seed)


def run_id(partition: PartitionSpec, seed: int) -> str:
    return f"{partition.describe()}/{partition.fixed_mode}/seed{seed}"


def train_run(arch: ArchitectureSpec, partition: PartitionSpec, optim: OptimConfig, train_set, test_set,
              use_augment=False, reference=True):
    """Train one partially-learned model; returns (model, masks, epoch rows, layer stats rows)."""
    model = build_model(arch, Rng(optim.seed))
    masks = build_masks(model, partition)
    apply_fixed_mode(model, masks, partition.fixed_mode)
    rid = run_id(partition, optim.seed)
    rows = []
    start = time.perf_counter()

    def on_epoch(m):
        row = {"run_id": rid, "partition": partition.describe(), "fixed_mode": partition.fixed_mode,
               "effective_params": masks.effective, "total_params": masks.total,
               "wall_time": 0.0 if reference else time.perf_counter() - start}
        row.update(m)
        rows.append(row)

    train(model, train_set, masks, optim, test_set, use_augment, on_epoch)
    stats = analysis.layer_rows(rid, analysis.weight_stats(model, masks))
    return model, masks, rows, stats


def write_config_echo(cfg: RunConfig, out_dir):
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.dumps())


def cmd_train(cfg: RunConfig, reference=True) -> float:
    os.makedirs(cfg.out, exist_ok=True)
    write_config_echo(cfg, cfg.out)
    train_set, test_set = load_data(cfg)
    model, masks, rows, stats = train_run(cfg.arch, cfg.partition, cfg.optim, train_set, test_set,
                                          cfg.data.augment, reference)
    analysis.write_report(cfg.out, rows, stats)
    save_checkpoint(os.path.join(cfg.out, "model.ckpt"), model, masks)
    return rows[-1]["val_acc"]


def cmd_count(cfg: RunConfig) -> tuple[int, int]:
    return count_params(cfg.arch, cfg.partition)


def cmd_ensemble(cfg: RunConfig, reference=True):
    os.makedirs(cfg.out, exist_ok=True)
    write_config_echo(cfg, cfg.out)
    train_set, test_set = load_data(cfg)
    ens = train_ensemble(cfg.arch, train_set, cfg.ensemble, cfg.optim, None, cfg.data.augment)
    rep = ensemble_report(ens, test_set)
    rows = [{"row": "summary", "model_type": rep.kind, "stored_params": rep.stored_params,
             "mean_accuracy": rep.mean_accuracy, "ensemble_accuracy": rep.ensemble_accuracy}]
    for i, (m, acc) in enumerate(zip(ens.members, rep.member_accuracies)):
        rows.append({"row": "member", "model_type": rep.kind, "stored_params": m.size,
                     "member": i + 1, "seed": m.seed, "accuracy": acc})
    analysis.write_csv(os.path.join(cfg.out, "ensemble.csv"), ENSEMBLE_COLUMNS, rows)
    save_ensemble(ens, os.path.join(cfg.out, "ensemble"))
    return rep


# ---------------------------------------------------------------- sweeps


def sweep_points(cfg: RunConfig) -> list[dict]:
    """Every (mode, value, budget group) point of the sweep with its partition."""
    sw = cfg.sweep
    points = []
    for mode in sw.modes:
        if sw.axis == "dim_slices":
            ref_dim = int(sw.values[0])
            for p in sw.fractions:
                budget = count_params(cfg.arch, PartitionSpec.fractional(p, ref_dim))[1]
                for d in sw.values:
                    q = p if int(d) == ref_dim else match_fraction(cfg.arch, budget, int(d))
                    points.append({"value": int(d), "mode": mode, "budget_group": p,
                                   "partition": sweep_partition(sw, d, mode, q)})
        else:
            for v in sw.values:
                points.append({"value": v, "mode": mode, "budget_group": None,
                               "partition": sweep_partition(sw, v, mode)})
    return points


def _sweep_job(args):
    arch, partition, optim, data_cfg, augment, reference = args
    train_set, test_set = data_cfg
    _, _, rows, _ = train_run(arch, partition, optim, train_set, test_set, augment, reference)
    return rows


def _value_label(v):
    return "+".join(v) if isinstance(v, list) else v


SWEEP_BASE_COLUMNS = ("kind", "axis", "value", "partition", "fixed_mode", "budget_group",
                      "effective_params", "total_params", "learned_fraction")
SWEEP_FIT_COLUMNS = ("mean_acc", "fit_slope", "fit_intercept", "fit_residual", "fit_points")


def cmd_sweep(cfg: RunConfig, reference=True) -> list[dict]:
    sw = cfg.sweep
    os.makedirs(cfg.out, exist_ok=True)
    write_config_echo(cfg, cfg.out)
    data = load_data(cfg)
    points = sweep_points(cfg)
    jobs = [(cfg.arch, pt["partition"], dataclasses.replace(cfg.optim, seed=s), data, cfg.data.augment, reference)
            for pt in points for s in sw.seeds]
    if sw.workers > 1 and not reference:
        with ProcessPoolExecutor(sw.workers) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]

    all_rows = [r for rows in results for r in rows]
    analysis.write_csv(os.path.join(cfg.out, "runs.csv"), analysis.RUN_COLUMNS, all_rows)

    acc_cols = [f"acc_seed{s}" for s in sw.seeds]
    out_rows = []
    it = iter(results)
    for pt in points:
        accs = [next(it)[-1]["val_acc"] for _ in sw.seeds]
        total, eff = count_params(cfg.arch, pt["partition"])
        row = {"kind": "point", "axis": sw.axis, "value": _value_label(pt["value"]),
               "partition": pt["partition"].describe(), "fixed_mode": pt["mode"],
               "budget_group": pt["budget_group"], "effective_params": eff, "total_params": total,
               "learned_fraction": eff / total, "mean_acc": float(np.mean(accs))}
        row.update(dict(zip(acc_cols, accs)))
        out_rows.append(row)
    for mode in sw.modes:
        pts = [(r["learned_fraction"], r["mean_acc"]) for r in out_rows
               if r["fixed_mode"] == mode and r["kind"] == "point" and r["learned_fraction"] > 0]
        if len({f for f, _ in pts}) < 2:
            continue
        fit = analysis.fit_log_curve(pts)
        out_rows.append({"kind": "fit", "axis": sw.axis, "fixed_mode": mode, "fit_slope": fit.slope,
                         "fit_intercept": fit.intercept, "fit_residual": fit.residual, "fit_points": fit.count})
    columns = SWEEP_BASE_COLUMNS + tuple(acc_cols) + SWEEP_FIT_COLUMNS
    analysis.write_csv(os.path.join(cfg.out, "sweep.csv"), columns, out_rows)
    return out_rows
