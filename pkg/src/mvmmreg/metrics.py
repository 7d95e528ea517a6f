"""Overlap and surface-distance metrics for labelmaps."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import LabelVolume, gradient_magnitude_array


class MissingClassError(ValueError):
    """A surface metric was requested for a class absent from an input."""


def _check_grids(a: LabelVolume, b: LabelVolume):
    if not a.grid.compatible(b.grid):
        raise ValueError(f"grid mismatch: {a.grid.dims} vs {b.grid.dims}")


def dice(a: LabelVolume, b: LabelVolume, k: int) -> float:
    _check_grids(a, b)
    ma = a.labels == k
    mb = b.labels == k
    na, nb = int(ma.sum()), int(mb.sum())
    if na == 0 and nb == 0:
        return 1.0
    return 2.0 * int(np.sum(ma & mb)) / (na + nb)


def mean_foreground_dice(a: LabelVolume, b: LabelVolume, classes=None) -> float:
    classes = range(1, max(a.n_classes, b.n_classes)) if classes is None else classes
    return float(np.mean([dice(a, b, k) for k in classes]))


def surface_points(mask: np.ndarray, spacing) -> np.ndarray:
    """Physical coordinates of the mask's boundary voxels.

    Boundary voxels are in-mask voxels with a non-zero gradient response. A
    mask without any (an isolated voxel, or one filling the grid) is its own
    boundary.
    """
    mask = np.asarray(mask, dtype=bool)
    edge = mask & (gradient_magnitude_array(mask.astype(float)) > 0)
    if not edge.any():
        edge = mask
    return np.argwhere(edge) * np.asarray(spacing, dtype=float)


def hausdorff(a: LabelVolume, b: LabelVolume, k: int, percentile: float = 100.0) -> float:
    """Symmetric surface distance of class ``k`` in mm at ``percentile`` (100 = classic HD)."""
    _check_grids(a, b)
    if not 0 < percentile <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    ma, mb = a.labels == k, b.labels == k
    if not ma.any() or not mb.any():
        raise MissingClassError(f"class {k} is absent from one of the labelmaps")
    pa = surface_points(ma, a.grid.spacing)
    pb = surface_points(mb, b.grid.spacing)
    dab, _ = cKDTree(pb).query(pa)
    dba, _ = cKDTree(pa).query(pb)
    d = np.concatenate([dab, dba])
    return float(d.max() if percentile == 100 else np.percentile(d, percentile))


@dataclass
class MetricReport:
    dice: dict
    hausdorff: dict
    hausdorff95: dict = field(default_factory=dict)
    foreground_hausdorff: float = None

    @property
    def mean_dice(self) -> float:
        return float(np.mean(list(self.dice.values())))


def evaluate(pred: LabelVolume, ref: LabelVolume, classes=None) -> MetricReport:
    """Per-class Dice and HD/HD95; missing classes are reported as NaN distances."""
    classes = list(range(1, max(pred.n_classes, ref.n_classes))) if classes is None else list(classes)
    d, hd, hd95 = {}, {}, {}
    for k in classes:
        d[k] = dice(pred, ref, k)
        try:
            hd[k] = hausdorff(pred, ref, k)
            hd95[k] = hausdorff(pred, ref, k, 95)
        except MissingClassError:
            hd[k] = hd95[k] = float("nan")
    fg_pred = LabelVolume(pred.grid, pred.labels > 0, 2)
    fg_ref = LabelVolume(ref.grid, ref.labels > 0, 2)
    try:
        fg = hausdorff(fg_pred, fg_ref, 1)
    except MissingClassError:
        fg = float("nan")
    return MetricReport(d, hd, hd95, fg)


def _fmt(x: float) -> str:
    return "nan" if not np.isfinite(x) else f"{x:.6f}"


def report_csv(reports: dict) -> str:
    """Rows ``case,class,metric,value`` plus ``mean``/``std`` aggregate rows per class and metric."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["case", "class", "metric", "value"])
    pooled = {}
    for case, rep in reports.items():
        rows = [(k, "dice", v) for k, v in rep.dice.items()]
        rows += [(k, "hd", v) for k, v in rep.hausdorff.items()]
        rows += [(k, "hd95", v) for k, v in rep.hausdorff95.items()]
        rows += [("mean_fg", "dice", rep.mean_dice), ("fg", "hd", rep.foreground_hausdorff)]
        for k, metric, v in rows:
            w.writerow([case, k, metric, _fmt(v)])
            pooled.setdefault((str(k), metric), []).append(v)
    for (k, metric), vals in pooled.items():
        vals = np.array([v for v in vals if v is not None and np.isfinite(v)])
        mean = vals.mean() if vals.size else float("nan")
        std = vals.std() if vals.size else float("nan")
        w.writerow(["mean", k, metric, _fmt(mean)])
        w.writerow(["std", k, metric, _fmt(std)])
    return buf.getvalue()
