"""Multivariate mixture model likelihood, voxel posteriors and label fusion.

For a group of subjects warped into a common space by ``y_i = x + u_i(x)``
the negative log-likelihood is evaluated in its factored form

    nll = -mean_x [ sum_i log(w_i(y_i) + eps) + log(sum_k c_k prod_i p_ik(y_i) + eps) ]

i.e. the negative log-likelihood per common-space voxel, where ``w_i`` is subject i's appearance weight map and ``p_ik`` its smoothed
one-hot labels. The appearance product does not depend on the class and is
pulled out of the mixture sum.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .appearance import AppearanceVariant, WeightMap, compute_weight_map
from .geometry import (
    DisplacementField,
    Grid,
    LabelVolume,
    ProbLabelVolume,
    ScalarVolume,
    index_mesh,
    interpolate,
    smooth_labels,
)


@dataclass(frozen=True)
class MvmmConfig:
    """Model hyperparameters.

    ``class_weights`` is the flat spatial prior c_k; ``None`` means uniform
    over ``n_classes``.
    """

    n_classes: int = 4
    class_weights: tuple = None
    sigma_s: float = 1.0
    appearance: AppearanceVariant = field(default_factory=AppearanceVariant)
    lam: float = 0.5
    eps: float = 1e-12

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.class_weights is not None:
            c = tuple(float(v) for v in self.class_weights)
            if len(c) != self.n_classes:
                raise ValueError(f"need {self.n_classes} class weights, got {len(c)}")
            if min(c) < 0 or abs(sum(c) - 1.0) > 1e-9:
                raise ValueError(f"class weights must be non-negative and sum to 1, got {c}")
            object.__setattr__(self, "class_weights", c)
        if isinstance(self.appearance, dict):
            object.__setattr__(self, "appearance", AppearanceVariant(**self.appearance))
        if not self.sigma_s > 0:
            raise ValueError("sigma_s must be positive")
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not self.eps > 0:
            raise ValueError("eps must be positive")

    @property
    def prior(self) -> np.ndarray:
        if self.class_weights is None:
            return np.full(self.n_classes, 1.0 / self.n_classes)
        return np.array(self.class_weights)


@dataclass(frozen=True)
class Subject:
    """Appearance/anatomy pair with its cached smoothed labels and weight map.

    A subject without labels (an unsegmented target) carries uniform class
    distributions and unit weights, so it contributes nothing to the likelihood.
    """

    appearance: ScalarVolume
    labels: LabelVolume | None
    smoothed_labels: ProbLabelVolume
    weight_map: WeightMap

    def __post_init__(self):
        grid = self.appearance.grid
        others = [self.smoothed_labels.grid, self.weight_map.grid]
        if self.labels is not None:
            others.append(self.labels.grid)
        if any(not grid.compatible(g) for g in others):
            raise ValueError("subject volumes must share one grid")

    @property
    def grid(self) -> Grid:
        return self.appearance.grid

    @classmethod
    def build(cls, appearance: ScalarVolume, labels: LabelVolume, cfg: MvmmConfig) -> "Subject":
        if labels.n_classes != cfg.n_classes:
            labels = LabelVolume(labels.grid, labels.labels, cfg.n_classes)
        return cls(appearance, labels, smooth_labels(labels, cfg.sigma_s),
                   compute_weight_map(appearance, labels, cfg.appearance))

    @classmethod
    def unlabeled(cls, appearance: ScalarVolume, cfg: MvmmConfig) -> "Subject":
        grid = appearance.grid
        probs = np.full(grid.dims + (cfg.n_classes,), 1.0 / cfg.n_classes)
        return cls(appearance, None, ProbLabelVolume(grid, probs), WeightMap(grid, np.ones(grid.dims)))


@dataclass
class SubjectGroup:
    """N_I subjects plus their displacement fields on the common grid.

    ``fixed[i]`` freezes subject i at the identity transform.
    """

    subjects: list
    common_grid: Grid
    disps: list = None
    fixed: list = None

    def __post_init__(self):
        if len(self.subjects) < 1:
            raise ValueError("a subject group needs at least one subject")
        n = len(self.subjects)
        if self.disps is None:
            self.disps = [DisplacementField.zeros(self.common_grid) for _ in range(n)]
        if self.fixed is None:
            self.fixed = [False] * n
        self.disps = list(self.disps)
        self.fixed = [bool(f) for f in self.fixed]
        if len(self.disps) != n or len(self.fixed) != n:
            raise ValueError("need one displacement field and one fixed flag per subject")
        for d in self.disps:
            if d.grid.dims != self.common_grid.dims:
                raise ValueError("all displacement fields must live on the common grid")
        for i, f in enumerate(self.fixed):
            if f and np.any(self.disps[i].vectors != 0):
                raise ValueError(f"subject {i} is fixed but has a non-identity displacement")
        k = {s.smoothed_labels.n_classes for s in self.subjects}
        if len(k) != 1:
            raise ValueError("subjects disagree on the number of classes")

    @classmethod
    def pairwise(cls, fixed: Subject, moving: Subject, common_grid: Grid = None) -> "SubjectGroup":
        """Two-subject group whose first transform is the identity."""
        return cls([fixed, moving], common_grid or fixed.grid, fixed=[True, False])

    @property
    def n_subjects(self) -> int:
        return len(self.subjects)

    def arrays(self):
        """``(probs, weights, displacements)`` as plain arrays."""
        probs = [s.smoothed_labels.probs for s in self.subjects]
        weights = [s.weight_map.weights for s in self.subjects]
        disps = [d.vectors for d in self.disps]
        return probs, weights, disps


# --------------------------------------------------------------------------
# array kernels shared with the optimizer


def voxel_consensus(probs_at_x, cfg: MvmmConfig) -> float:
    """Mixture term ``sum_k c_k prod_i p_i(k)`` at one voxel."""
    probs_at_x = [np.asarray(p, dtype=float) for p in probs_at_x]
    for p in probs_at_x:
        if abs(p.sum() - 1.0) > 1e-6:
            raise ValueError("each class distribution must sum to 1")
    return float(np.sum(cfg.prior * np.prod(probs_at_x, axis=0)))


def _sample_all(probs, weights, disps, grad):
    dims = disps[0].shape[:-1]
    nd = len(dims)
    mesh = index_mesh(dims)
    out = []
    for p, w, u in zip(probs, weights, disps):
        y = mesh + u
        if grad:
            wv, wg = interpolate(w, y, grad=True)
            pv, pg = interpolate(p, y, spatial_ndim=nd, grad=True)
            out.append((wv, wg, pv, pg))
        else:
            out.append((interpolate(w, y), None, interpolate(p, y, spatial_ndim=nd), None))
    return out


def nll_and_grad(probs, weights, disps, prior, eps, grad=True, need=None):
    """Factored negative log-likelihood and its gradient w.r.t. each displacement.

    ``need`` masks which subjects get a gradient (others get ``None``).
    """
    n = len(probs)
    need = [True] * n if need is None else need
    samples = _sample_all(probs, weights, disps, grad)
    app = sum(np.log(s[0] + eps) for s in samples)
    full = np.prod([s[2] for s in samples], axis=0)
    cons = full @ prior
    n_vox = cons.size
    value = -float(np.sum(app) + np.sum(np.log(cons + eps))) / n_vox
    if not grad:
        return value, None
    grads = []
    for i in range(n):
        if not need[i]:
            grads.append(None)
            continue
        wv, wg, pv, pg = samples[i]
        others = np.ones_like(pv)
        for j in range(n):
            if j != i:
                others = others * samples[j][2]
        # pg: dims + (d, K)
        dcons = np.einsum("...ak,...k->...a", pg, others * prior)
        g = wg / (wv + eps)[..., None] + dcons / (cons + eps)[..., None]
        grads.append(-g / n_vox)
    return value, grads


def log_posterior_array(prob_maps, prior, eps) -> np.ndarray:
    """Unnormalized log posterior ``log c_k + sum_i log(p_ik + eps)``.

    The per-factor floor lets voxels where subjects disagree outright be
    decided by how many subjects support each class.
    """
    with np.errstate(divide="ignore"):
        logc = np.log(prior)
    out = np.broadcast_to(logc, prob_maps[0].shape).copy()
    for p in prob_maps:
        out += np.log(p + eps)
    return out


def posterior_array(prob_maps, prior, eps) -> np.ndarray:
    logp = log_posterior_array(prob_maps, prior, eps)
    top = np.max(logp, axis=-1, keepdims=True)
    bad = ~np.isfinite(top[..., 0])
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(logp - top)
    s = e.sum(axis=-1, keepdims=True)
    post = e / np.where(s > 0, s, 1.0)
    if np.any(bad):
        post[bad] = prior
    return post


def fuse_prob_maps(prob_maps, prior, eps) -> np.ndarray:
    """Per-voxel argmax of the posterior; ties go to the smallest class index."""
    return np.argmax(log_posterior_array(prob_maps, prior, eps), axis=-1)


# --------------------------------------------------------------------------
# group-level operations


def nll(group: SubjectGroup, cfg: MvmmConfig) -> float:
    probs, weights, disps = group.arrays()
    value, _ = nll_and_grad(probs, weights, disps, cfg.prior, cfg.eps, grad=False)
    return value


def warped_prob_maps(group: SubjectGroup, subjects=None) -> list:
    idx = range(group.n_subjects) if subjects is None else subjects
    nd = group.common_grid.ndim
    mesh = group.common_grid.index_mesh()
    return [interpolate(group.subjects[i].smoothed_labels.probs, mesh + group.disps[i].vectors,
                        spatial_ndim=nd) for i in idx]


def posterior(group: SubjectGroup, cfg: MvmmConfig, x=None, subjects=None):
    """Class posterior at common-space voxel ``x`` (or the whole grid if ``x`` is None).

    Appearance weights are constant in k and cancel in the normalization.
    """
    maps = warped_prob_maps(group, subjects)
    post = posterior_array(maps, cfg.prior, cfg.eps)
    if x is None:
        return ProbLabelVolume(group.common_grid, post)
    return post[tuple(int(v) for v in x)]


def fuse_labels(group: SubjectGroup, cfg: MvmmConfig, subjects=None) -> LabelVolume:
    labels = fuse_prob_maps(warped_prob_maps(group, subjects), cfg.prior, cfg.eps)
    return LabelVolume(group.common_grid, labels, cfg.n_classes)


def majority_vote(warped_labels) -> LabelVolume:
    """Per-voxel modal label, ties to the smallest class index."""
    warped_labels = list(warped_labels)
    if not warped_labels:
        raise ValueError("majority vote needs at least one labelmap")
    grid = warped_labels[0].grid
    if any(not grid.compatible(lv.grid) for lv in warped_labels):
        raise ValueError("all labelmaps must share one grid")
    n_classes = max(lv.n_classes for lv in warped_labels)
    votes = sum((lv.labels[..., None] == np.arange(n_classes)).astype(np.int64) for lv in warped_labels)
    return LabelVolume(grid, np.argmax(votes, axis=-1), n_classes)
