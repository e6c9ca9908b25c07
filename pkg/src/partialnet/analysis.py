"""Weight statistics, logarithmic accuracy fits and CSV reports."""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np

from .partition import MaskSet

POOLED = "(all conv)"


@dataclass
class LayerStats:
    layer: str
    learned_count: int
    fixed_count: int
    learned_mean_abs: float | None = None
    learned_var: float | None = None
    fixed_mean_abs: float | None = None
    fixed_var: float | None = None


def _side(values: np.ndarray):
    if values.size == 0:
        return None, None
    v = values.astype(np.float64)
    return float(np.abs(v).mean()), float(v.var())


def _stats(name, w, mask):
    lm, lv = _side(w[mask])
    fm, fv = _side(w[~mask])
    return LayerStats(name, int(mask.sum()), int((~mask).sum()), lm, lv, fm, fv)


def weight_stats(model, masks: MaskSet, pooled=True) -> list[LayerStats]:
    """Mean |w| and population variance per conv layer, split into learned and fixed entries.

    A side with no entries reports ``None``. With ``pooled`` a final row
    aggregates all conv weights together.
    """
    rows, all_w, all_m = [], [], []
    for info in model.infos:
        if info.role != "conv_weight":
            continue
        w = model.params[info.name].data
        m = masks[info.name]
        rows.append(_stats(info.name, w, m))
        all_w.append(w.ravel())
        all_m.append(m.ravel())
    if pooled and rows:
        rows.append(_stats(POOLED, np.concatenate(all_w), np.concatenate(all_m)))
    return rows


@dataclass
class FitResult:
    slope: float
    intercept: float
    residual: float
    count: int

    def __call__(self, fraction):
        return self.slope * np.log(fraction) + self.intercept


def fit_log_curve(points) -> FitResult:
    """Least-squares fit of accuracy = slope * ln(fraction) + intercept."""
    pts = [(float(f), float(a)) for f, a in points]
    if len(pts) < 2:
        raise ValueError("need at least two points to fit")
    if any(f <= 0 for f, _ in pts):
        raise ValueError("fractions must be positive")
    x = np.log([f for f, _ in pts])
    y = np.array([a for _, a in pts])
    xm, ym = x.mean(), y.mean()
    sxx = ((x - xm) ** 2).sum()
    if sxx == 0:
        raise ValueError("all fractions are equal; slope undefined")
    slope = float(((x - xm) * (y - ym)).sum() / sxx)
    intercept = float(ym - slope * xm)
    residual = float(((y - (slope * x + intercept)) ** 2).sum())
    return FitResult(slope, intercept, residual, len(pts))


# ---------------------------------------------------------------- CSV

RUN_COLUMNS = ("run_id", "partition", "fixed_mode", "effective_params", "total_params", "epoch", "lr",
               "train_loss", "train_acc", "val_loss", "val_acc", "wall_time")
LAYER_COLUMNS = ("run_id", "layer", "learned_count", "learned_mean_abs", "learned_var",
                 "fixed_count", "fixed_mean_abs", "fixed_var")


def fmt(value) -> str:
    """Locale-independent rendering: floats with 9 significant digits, None as empty."""
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        v = float(value)
        if math.isnan(v):
            return "nan"
        return format(v, ".9g")
    return str(value)


def write_csv(path, columns, rows) -> None:
    """Write dict rows with a mandatory header and fixed column order."""
    d = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(d):
        raise OSError(f"output directory {d} does not exist")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def layer_rows(run_id, stats: list[LayerStats]) -> list[dict]:
    return [{"run_id": run_id, "layer": s.layer, "learned_count": s.learned_count,
             "learned_mean_abs": s.learned_mean_abs, "learned_var": s.learned_var,
             "fixed_count": s.fixed_count, "fixed_mean_abs": s.fixed_mean_abs, "fixed_var": s.fixed_var}
            for s in stats]


def write_report(out_dir, run_rows, stats_rows) -> tuple[str, str]:
    """Emit runs.csv (one row per epoch) and layers.csv (one row per conv layer)."""
    runs = os.path.join(out_dir, "runs.csv")
    layers = os.path.join(out_dir, "layers.csv")
    write_csv(runs, RUN_COLUMNS, run_rows)
    write_csv(layers, LAYER_COLUMNS, stats_rows)
    return runs, layers
