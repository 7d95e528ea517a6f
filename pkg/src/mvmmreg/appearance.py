"""Appearance weight maps: static per-voxel realizations of p(A | S).

Each map lives on the subject's own grid and is sampled at warped coordinates
during registration. Four variants are provided: a binary ROI mask, a
per-class Gaussian intensity model, and Gibbs weights ``exp(-E)`` with E the
negative local NCC or negative local ECC between the gradient-norm maps of
appearance and anatomy.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (
    Grid,
    LabelVolume,
    ScalarVolume,
    gradient_magnitude_array,
    label_boundary_array,
)

VARIANTS = ("Mask", "MOG", "NCC", "ECC")


@dataclass(frozen=True)
class AppearanceVariant:
    tag: str = "NCC"
    patch_radius: int = 3
    bins: int = 8
    roi_dilation_radius: int = 6

    def __post_init__(self):
        if self.tag not in VARIANTS:
            raise ValueError(f"unknown appearance variant {self.tag!r}; expected one of {VARIANTS}")
        if self.patch_radius < 1:
            raise ValueError("patch_radius must be >= 1")
        if self.bins < 2:
            raise ValueError("bins must be >= 2")
        if self.roi_dilation_radius < 1:
            raise ValueError("roi_dilation_radius must be >= 1")


@dataclass(frozen=True)
class WeightMap:
    grid: Grid
    weights: np.ndarray

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape != self.grid.dims:
            raise ValueError(f"weights shape {w.shape} does not match grid {self.grid.dims}")
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("weights must lie in [0, 1]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def minmax_normalize(raw: np.ndarray) -> np.ndarray:
    """Map to [0, 1]; a constant map carries no preference and becomes all ones."""
    lo, hi = float(raw.min()), float(raw.max())
    if hi - lo <= 1e-12 * max(abs(hi), abs(lo), 1e-300):
        return np.ones_like(raw, dtype=float)
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


def roi_band(labels: LabelVolume, radius: int) -> np.ndarray:
    """Voxels within Chebyshev ``radius`` of a positive label-boundary response."""
    edge = label_boundary_array(labels.labels, labels.n_classes, labels.grid.spacing) > 0
    return ndimage.maximum_filter(edge, size=2 * radius + 1, mode="constant", cval=False)


def _box_sum(arr, radius):
    arr = np.asarray(arr, dtype=float)
    size = 2 * radius + 1
    return ndimage.uniform_filter(arr, size=size, mode="constant", cval=0.0) * size ** arr.ndim


def local_ncc(a, b, radius: int) -> np.ndarray:
    """Patchwise normalized cross-correlation over cubic windows (truncated at borders).

    Patches where either signal is constant get ncc = 0.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = _box_sum(np.ones_like(a), radius)
    ma = _box_sum(a, radius) / n
    mb = _box_sum(b, radius) / n
    va = _box_sum(a * a, radius) / n - ma * ma
    vb = _box_sum(b * b, radius) / n - mb * mb
    cov = _box_sum(a * b, radius) / n - ma * mb
    tol_a = 1e-10 * max(float(np.mean(a * a)), 1e-300)
    tol_b = 1e-10 * max(float(np.mean(b * b)), 1e-300)
    ok = (va > tol_a) & (vb > tol_b)
    ncc = np.zeros_like(a)
    ncc[ok] = cov[ok] / np.sqrt(va[ok] * vb[ok])
    return np.clip(ncc, -1.0, 1.0)


def quantize(x, bins: int) -> np.ndarray:
    """Equal-width bin index over the global range of ``x``."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        return np.zeros(x.shape, dtype=np.intp)
    q = np.floor((x - lo) / (hi - lo) * bins).astype(np.intp)
    return np.clip(q, 0, bins - 1)


def ecc_from_counts(counts: np.ndarray) -> np.ndarray:
    """Entropy correlation coefficient ``2 I / (H_A + H_B)`` from joint counts.

    ``counts`` has shape ``(..., bins_a, bins_b)``; returns shape ``(...)``.
    """
    counts = np.asarray(counts, dtype=float)
    total = counts.sum(axis=(-2, -1))

    def entropy(c, axes):
        p = c / np.expand_dims(total, axes)
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
        return terms.sum(axis=axes)

    h_a = entropy(counts.sum(axis=-1), (-1,))
    h_b = entropy(counts.sum(axis=-2), (-1,))
    h_ab = entropy(counts, (-2, -1))
    denom = h_a + h_b
    mi = denom - h_ab
    out = np.zeros_like(denom)
    ok = denom > 1e-12
    out[ok] = 2.0 * mi[ok] / denom[ok]
    return np.clip(out, 0.0, 1.0)


def local_ecc(a, b, radius: int, bins: int) -> np.ndarray:
    qa = quantize(a, bins)
    qb = quantize(b, bins)
    counts = np.empty(qa.shape + (bins, bins))
    for i in range(bins):
        ai = qa == i
        for j in range(bins):
            counts[..., i, j] = _box_sum(ai & (qb == j), radius)
    # box sums of indicators are integers up to float round-off
    return ecc_from_counts(np.round(counts))


def _gradient_maps(image: ScalarVolume, labels: LabelVolume):
    g_a = gradient_magnitude_array(image.values, image.grid.spacing)
    g_s = label_boundary_array(labels.labels, labels.n_classes, labels.grid.spacing)
    return g_a, g_s


def appearance_mask(image: ScalarVolume, labels: LabelVolume, radius: int) -> WeightMap:
    if radius < 1:
        raise ValueError("radius must be >= 1")
    return WeightMap(labels.grid, roi_band(labels, radius).astype(float))


def appearance_mog(image: ScalarVolume, labels: LabelVolume) -> WeightMap:
    """Per-class Gaussian intensity likelihood, min-max normalized, not ROI-masked."""
    a = image.values
    s = labels.labels
    floor = 1e-3 * (float(a.max() - a.min()) or 1.0)
    raw = np.zeros_like(a)
    for k in np.unique(s):
        sel = s == k
        if sel.sum() < 2:
            raise ValueError(f"class {k} has fewer than 2 voxels; cannot fit its intensity model")
        mu = a[sel].mean()
        sd = max(a[sel].std(), floor)
        raw[sel] = np.exp(-0.5 * ((a[sel] - mu) / sd) ** 2) / (sd * np.sqrt(2 * np.pi))
    return WeightMap(labels.grid, minmax_normalize(raw))


def appearance_ncc(image: ScalarVolume, labels: LabelVolume, variant: AppearanceVariant) -> WeightMap:
    g_a, g_s = _gradient_maps(image, labels)
    raw = np.exp(local_ncc(g_a, g_s, variant.patch_radius))
    w = minmax_normalize(raw) * roi_band(labels, variant.roi_dilation_radius)
    return WeightMap(labels.grid, w)


def appearance_ecc(image: ScalarVolume, labels: LabelVolume, variant: AppearanceVariant) -> WeightMap:
    g_a, g_s = _gradient_maps(image, labels)
    raw = np.exp(local_ecc(g_a, g_s, variant.patch_radius, variant.bins))
    w = minmax_normalize(raw) * roi_band(labels, variant.roi_dilation_radius)
    return WeightMap(labels.grid, w)


def compute_weight_map(image: ScalarVolume, labels: LabelVolume, variant: AppearanceVariant) -> WeightMap:
    if not image.grid.compatible(labels.grid):
        raise ValueError("appearance and labels must share a grid")
    if variant.tag == "Mask":
        return appearance_mask(image, labels, variant.roi_dilation_radius)
    if variant.tag == "MOG":
        return appearance_mog(image, labels)
    if variant.tag == "NCC":
        return appearance_ncc(image, labels, variant)
    return appearance_ecc(image, labels, variant)
