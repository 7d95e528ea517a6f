"""Bending-energy regularization, total loss and the coarse-to-fine optimizer.

Displacement values are optimized directly, level by level, with Adam-style
moment estimates and a triangular cyclical learning rate.
"""
from __future__ import annotations

import itertools
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DisplacementField,
    downsample2_array,
    upsample2_array,
)
from .mvmm import MvmmConfig, Subject, SubjectGroup, nll_and_grad

log = logging.getLogger(__name__)


class RegistrationDiverged(RuntimeError):
    """Raised when the loss or its gradient stops being finite."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class OptimConfig:
    levels: int = 3
    iters_per_level: int = 200
    lr_min: float = 0.01
    lr_max: float = 0.1
    cycle_len: int = 20
    beta1: float = 0.9
    beta2: float = 0.999
    step_size: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.iters_per_level < 0:
            raise ValueError("iters_per_level must be >= 0")
        if not 0 < self.lr_min <= self.lr_max:
            raise ValueError("need 0 < lr_min <= lr_max")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.cycle_len < 1:
            raise ValueError("cycle_len must be >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("moment decay rates must lie in (0, 1)")


@dataclass
class RegistrationResult:
    disps: dict
    loss_trace: list
    initial_loss: tuple
    final_loss: tuple
    wall_time: float = 0.0

    def trace_csv(self) -> str:
        lines = ["iter,level,nll,bending,total,lr"]
        for row in self.loss_trace:
            lines.append("{:d},{:d},{!r},{!r},{!r},{!r}".format(*row))
        return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# bending energy


def _interior(shape, nd, offsets=None):
    """Slice selecting interior voxels shifted by ``offsets`` (one per axis)."""
    offsets = offsets or (0,) * nd
    return tuple(slice(1 + o, n - 1 + o) for n, o in zip(shape[:nd], offsets))


_MIXED = ((1, 1, 1.0), (1, -1, -1.0), (-1, 1, -1.0), (-1, -1, 1.0))


def _stencils(nd):
    """Central second-difference stencils as ``(weight, [(offsets, coef), ...])``.

    The energy density is ``sum weight * D**2`` over the stencils.
    """
    for a in range(nd):
        taps = []
        for step, coef in ((1, 1.0), (0, -2.0), (-1, 1.0)):
            off = [0] * nd
            off[a] = step
            taps.append((off, coef))
        yield 1.0, taps
    for a, b in itertools.combinations(range(nd), 2):
        taps = []
        for sa, sb, coef in _MIXED:
            off = [0] * nd
            off[a], off[b] = sa, sb
            taps.append((off, 0.25 * coef))
        yield 2.0, taps


def _apply(u, nd, taps):
    return sum(c * u[_interior(u.shape, nd, off)] for off, c in taps)


def _check_bending_dims(shape, nd):
    if any(n < 3 for n in shape[:nd]):
        raise ValueError(f"bending energy needs at least 3 voxels per axis, got {shape[:nd]}")


def bending_energy_array(u) -> float:
    """Mean over interior voxels and components of the squared second derivatives.

    ``u`` has shape ``dims + (ncomp,)`` with any number of spatial axes.
    """
    u = np.asarray(u, dtype=float)
    nd = u.ndim - 1
    _check_bending_dims(u.shape, nd)
    count = np.prod([n - 2 for n in u.shape[:nd]]) * u.shape[-1]
    total = 0.0
    for weight, taps in _stencils(nd):
        d = _apply(u, nd, taps)
        total += weight * np.sum(d * d)
    return float(total / count)


def bending_gradient_array(u) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    nd = u.ndim - 1
    _check_bending_dims(u.shape, nd)
    count = np.prod([n - 2 for n in u.shape[:nd]]) * u.shape[-1]
    g = np.zeros_like(u)
    for weight, taps in _stencils(nd):
        r = 2.0 * weight * _apply(u, nd, taps) / count
        for off, c in taps:
            g[_interior(u.shape, nd, off)] += c * r
    return g


def bending_energy(disp: DisplacementField) -> float:
    return bending_energy_array(disp.vectors)


# --------------------------------------------------------------------------
# total loss


def _loss_arrays(probs, weights, disps, fixed, prior, eps, lam, grad):
    need = [not f for f in fixed]
    value, grads = nll_and_grad(probs, weights, disps, prior, eps, grad=grad, need=need)
    bend = sum(bending_energy_array(u) for u, f in zip(disps, fixed) if not f)
    total = value + lam * bend
    if not grad:
        return total, value, bend, None
    out = []
    for u, f, g in zip(disps, fixed, grads):
        if f:
            out.append(np.zeros_like(u))
        else:
            out.append(g + lam * bending_gradient_array(u) if lam else g)
    return total, value, bend, out


def total_loss(group: SubjectGroup, cfg: MvmmConfig, lam: float = None):
    """Return ``(total, nll, bending)`` with bending summed over non-fixed subjects."""
    lam = cfg.lam if lam is None else lam
    if lam < 0:
        raise ValueError("lam must be >= 0")
    probs, weights, disps = group.arrays()
    total, value, bend, _ = _loss_arrays(probs, weights, disps, group.fixed, cfg.prior, cfg.eps,
                                         lam, grad=False)
    return total, value, bend


def loss_gradient(group: SubjectGroup, cfg: MvmmConfig, lam: float = None) -> list:
    """Exact gradient of the total loss w.r.t. every displacement component."""
    lam = cfg.lam if lam is None else lam
    probs, weights, disps = group.arrays()
    _, _, _, grads = _loss_arrays(probs, weights, disps, group.fixed, cfg.prior, cfg.eps, lam,
                                  grad=True)
    return grads


# --------------------------------------------------------------------------
# optimization


def cyclical_lr(it: int, cfg: OptimConfig) -> float:
    """Triangular schedule starting at lr_min, peaking at lr_max mid-cycle."""
    phase = (it % cfg.cycle_len) / cfg.cycle_len
    tri = 1.0 - abs(2.0 * phase - 1.0)
    return cfg.lr_min + (cfg.lr_max - cfg.lr_min) * tri


def _level_arrays(subject: Subject, level: int):
    nd = subject.grid.ndim
    probs = np.asarray(subject.smoothed_labels.probs)
    weights = np.asarray(subject.weight_map.weights)
    for _ in range(level):
        probs = downsample2_array(probs, nd)
        weights = downsample2_array(weights, nd)
    return probs / probs.sum(axis=-1, keepdims=True), weights


def _level_dims(dims, level):
    for _ in range(level):
        dims = tuple(-(-d // 2) for d in dims)
    return dims


def register(group: SubjectGroup, cfg: MvmmConfig, opt: OptimConfig = None) -> RegistrationResult:
    """Coarse-to-fine minimization of the total loss over the group's free fields.

    The group's displacement fields are replaced by the result.
    """
    opt = opt or OptimConfig()
    start = time.perf_counter()
    nd = group.common_grid.ndim
    prior, eps, lam = cfg.prior, cfg.eps, cfg.lam
    fixed = group.fixed
    init_disps = [np.asarray(d.vectors) for d in group.disps]
    initial = total_loss(group, cfg)
    if not np.isfinite(initial[0]):
        raise RegistrationDiverged(f"initial loss is not finite: {initial}", [])

    dims_per_level = [_level_dims(group.common_grid.dims, lv) for lv in range(opt.levels)]
    trace = []
    it = 0
    disps = None
    for level in range(opt.levels - 1, -1, -1):
        dims = dims_per_level[level]
        if disps is None:
            disps = []
            for u in init_disps:
                for _ in range(level):
                    u = 0.5 * downsample2_array(u, nd)
                disps.append(u)
        else:
            disps = [2.0 * upsample2_array(u, dims, nd) for u in disps]
        disps = [np.zeros_like(u) if f else u for u, f in zip(disps, fixed)]
        arrays = [_level_arrays(s, level) for s in group.subjects]
        probs = [a[0] for a in arrays]
        weights = [a[1] for a in arrays]
        m = [np.zeros_like(u) for u in disps]
        v = [np.zeros_like(u) for u in disps]
        for step in range(opt.iters_per_level):
            total, value, bend, grads = _loss_arrays(probs, weights, disps, fixed, prior, eps, lam,
                                                     grad=True)
            lr = opt.step_size * cyclical_lr(step, opt)
            trace.append((it, level, value, bend, total, lr))
            if not np.isfinite(total) or not all(np.all(np.isfinite(g)) for g in grads):
                raise RegistrationDiverged(
                    f"non-finite loss at iteration {it} (level {level}): total={total}", trace)
            t = step + 1
            for i, g in enumerate(grads):
                if fixed[i]:
                    continue
                m[i] = opt.beta1 * m[i] + (1 - opt.beta1) * g
                v[i] = opt.beta2 * v[i] + (1 - opt.beta2) * g * g
                mhat = m[i] / (1 - opt.beta1 ** t)
                vhat = v[i] / (1 - opt.beta2 ** t)
                disps[i] = disps[i] - lr * mhat / (np.sqrt(vhat) + 1e-8)
            it += 1
        log.debug("level %d done: total=%.6g", level, trace[-1][4] if trace else float("nan"))

    group.disps = [DisplacementField(group.common_grid, u) for u in disps]
    final = total_loss(group, cfg)
    if not np.isfinite(final[0]):
        raise RegistrationDiverged(f"final loss is not finite: {final}", trace)
    result = RegistrationResult(
        disps={i: group.disps[i] for i in range(group.n_subjects) if not fixed[i]},
        loss_trace=trace,
        initial_loss=initial,
        final_loss=final,
        wall_time=time.perf_counter() - start,
    )
    log.info("registration: total %.6g -> %.6g in %.1fs", initial[0], final[0], result.wall_time)
    return result


def register_pair(fixed: Subject, moving: Subject, cfg: MvmmConfig, opt: OptimConfig = None,
                  common_grid=None) -> RegistrationResult:
    """Pairwise registration: a two-subject group with the first transform frozen."""
    group = SubjectGroup.pairwise(fixed, moving, common_grid)
    return register(group, cfg, opt)
