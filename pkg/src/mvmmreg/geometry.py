"""Regular grids, volumes and the sampling/filtering primitives built on them.

Arrays are indexed ``arr[i0, i1, (i2)]`` with axis 0 the x axis. Vector-valued
volumes carry their components in a trailing axis. Coordinates are in voxel
units of the grid being sampled.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage


def _frozen(arr, dtype):
    out = np.array(arr, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Grid:
    """Axis-aligned sampling lattice with 2 or 3 axes."""

    dims: tuple
    spacing: tuple = None
    origin: tuple = None

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grids have 2 or 3 axes, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise ValueError(f"every dim must be >= 1, got {dims}")
        spacing = (1.0,) * len(dims) if self.spacing is None else tuple(float(s) for s in self.spacing)
        origin = (0.0,) * len(dims) if self.origin is None else tuple(float(o) for o in self.origin)
        if len(spacing) != len(dims) or len(origin) != len(dims):
            raise ValueError("dims, spacing and origin must have one entry per axis")
        if any(not s > 0 for s in spacing):
            raise ValueError(f"spacing must be positive, got {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return int(np.prod(self.dims))

    def compatible(self, other: "Grid") -> bool:
        return self.dims == other.dims

    def index_mesh(self) -> np.ndarray:
        """Voxel index coordinates, shape ``dims + (ndim,)``."""
        return index_mesh(self.dims)

    def downsampled(self) -> "Grid":
        dims = tuple(-(-d // 2) for d in self.dims)
        spacing = tuple(2 * s for s in self.spacing)
        origin = tuple(o + 0.5 * s for o, s in zip(self.origin, self.spacing))
        return Grid(dims, spacing, origin)

    def upsampled(self, dims=None) -> "Grid":
        dims = tuple(2 * d for d in self.dims) if dims is None else tuple(dims)
        spacing = tuple(s / 2 for s in self.spacing)
        origin = tuple(o - 0.5 * s for o, s in zip(self.origin, spacing))
        return Grid(dims, spacing, origin)


def index_mesh(dims) -> np.ndarray:
    axes = [np.arange(d, dtype=float) for d in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


@dataclass(frozen=True)
class ScalarVolume:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values, float)
        if values.shape != self.grid.dims:
            raise ValueError(f"values shape {values.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(values)):
            raise ValueError("scalar volume contains non-finite values")
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class LabelVolume:
    """Hard segmentation with labels in ``range(n_classes)``; 0 is background."""

    grid: Grid
    labels: np.ndarray
    n_classes: int = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.shape != self.grid.dims:
            raise ValueError(f"labels shape {labels.shape} does not match grid {self.grid.dims}")
        if labels.size and not np.all(labels == np.round(labels)):
            raise ValueError("labels must be integers")
        labels = _frozen(labels, np.int64)
        n_classes = int(labels.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if labels.min() < 0 or labels.max() >= n_classes:
            raise ValueError(f"labels outside label set 0..{n_classes - 1}")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "n_classes", n_classes)

    def one_hot(self) -> np.ndarray:
        return one_hot(self.labels, self.n_classes)


@dataclass(frozen=True)
class ProbLabelVolume:
    """Per-voxel class distributions, shape ``dims + (n_classes,)``."""

    grid: Grid
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs, float)
        if probs.shape[:-1] != self.grid.dims or probs.ndim != self.grid.ndim + 1:
            raise ValueError(f"probs shape {probs.shape} does not match grid {self.grid.dims}")
        if np.any(probs < -1e-12) or np.any(probs > 1 + 1e-12):
            raise ValueError("probabilities must lie in [0, 1]")
        if not np.allclose(probs.sum(axis=-1), 1.0, rtol=0, atol=1e-6):
            raise ValueError("class probabilities must sum to 1 at every voxel")
        object.__setattr__(self, "probs", probs)

    @property
    def n_classes(self) -> int:
        return self.probs.shape[-1]

    def argmax(self) -> LabelVolume:
        return LabelVolume(self.grid, np.argmax(self.probs, axis=-1), self.n_classes)


@dataclass(frozen=True)
class DisplacementField:
    """Realization of ``phi(x) = x + u(x)``; vectors in common-grid voxels."""

    grid: Grid
    vectors: np.ndarray

    def __post_init__(self):
        vectors = _frozen(self.vectors, float)
        if vectors.shape != self.grid.dims + (self.grid.ndim,):
            raise ValueError(f"vectors shape {vectors.shape} does not match grid {self.grid.dims}")
        if not np.all(np.isfinite(vectors)):
            raise ValueError("displacement field contains non-finite values")
        object.__setattr__(self, "vectors", vectors)

    @classmethod
    def zeros(cls, grid: Grid) -> "DisplacementField":
        return cls(grid, np.zeros(grid.dims + (grid.ndim,)))

    def coords(self) -> np.ndarray:
        return self.grid.index_mesh() + self.vectors


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    return (np.asarray(labels)[..., None] == np.arange(n_classes)).astype(float)


# --------------------------------------------------------------------------
# multilinear sampling


def interpolate(arr, coords, spatial_ndim=None, grad=False):
    """Multilinear interpolation of ``arr`` at ``coords`` with clamping.

    Parameters
    ----------
    arr : ndarray, shape ``dims + chans``
    coords : ndarray, shape ``(..., d)`` in voxel units
    spatial_ndim : int, optional
        Number of leading spatial axes of ``arr`` (defaults to ``coords.shape[-1]``).
    grad : bool
        Also return the derivative with respect to each coordinate.

    Returns
    -------
    values : ndarray, shape ``coords.shape[:-1] + chans``
    grads : ndarray, shape ``coords.shape[:-1] + (d,) + chans``, only if ``grad``

    Notes
    -----
    The derivative is zero along axes where the coordinate was clamped, and
    one-sided (right cell) on interior knots.
    """
    arr = np.asarray(arr, dtype=float)
    coords = np.asarray(coords, dtype=float)
    d = coords.shape[-1] if spatial_ndim is None else spatial_ndim
    if coords.shape[-1] != d:
        raise ValueError("coordinate dimension does not match the sampled array")
    dims = arr.shape[:d]
    chans = arr.shape[d:]

    lo, t, inside = [], [], []
    for a in range(d):
        n = dims[a]
        c = coords[..., a]
        cc = np.clip(c, 0.0, n - 1)
        i0 = np.minimum(np.floor(cc).astype(np.intp), max(n - 2, 0))
        lo.append(i0)
        t.append(cc - i0)
        inside.append((c >= 0.0) & (c <= n - 1))
    hi = [np.minimum(lo[a] + 1, dims[a] - 1) for a in range(d)]

    def expand(w):
        return w.reshape(w.shape + (1,) * len(chans))

    values = 0.0
    grads = [0.0] * d if grad else None
    for corner in itertools.product((0, 1), repeat=d):
        idx = tuple(hi[a] if corner[a] else lo[a] for a in range(d))
        v = arr[idx]
        fac = [t[a] if corner[a] else 1.0 - t[a] for a in range(d)]
        w = np.prod(fac, axis=0) if d > 1 else fac[0]
        values = values + expand(w) * v
        if grad:
            for a in range(d):
                dw = np.ones_like(t[0]) if corner[a] else -np.ones_like(t[0])
                for b in range(d):
                    if b != a:
                        dw = dw * fac[b]
                grads[a] = grads[a] + expand(dw * inside[a]) * v
    values = np.broadcast_to(values, coords.shape[:-1] + chans).copy()
    if not grad:
        return values
    grads = np.stack([np.broadcast_to(g, coords.shape[:-1] + chans) for g in grads],
                     axis=coords.ndim - 1)
    return values, grads


def sample_trilinear(vol: ScalarVolume, coords) -> float:
    """Value of ``vol`` at one point, clamping out-of-grid coordinates."""
    coords = np.asarray(coords, dtype=float).reshape(-1)
    if coords.shape[0] != vol.grid.ndim:
        raise ValueError(f"expected {vol.grid.ndim} coordinates, got {coords.shape[0]}")
    if not np.all(np.isfinite(coords)):
        raise ValueError(f"non-finite sampling coordinates {coords}")
    return float(interpolate(vol.values, coords[None, :])[0])


def warp_scalar(vol: ScalarVolume, disp: DisplacementField) -> ScalarVolume:
    return ScalarVolume(disp.grid, interpolate(vol.values, disp.coords()))


def warp_problabels(pl: ProbLabelVolume, disp: DisplacementField) -> ProbLabelVolume:
    probs = interpolate(pl.probs, disp.coords(), spatial_ndim=pl.grid.ndim)
    return ProbLabelVolume(disp.grid, probs)


def warp_labels(lv: LabelVolume, disp: DisplacementField) -> LabelVolume:
    """Warp a hard labelmap: linear interpolation of the one-hot channels, then argmax."""
    probs = interpolate(lv.one_hot(), disp.coords(), spatial_ndim=lv.grid.ndim)
    return LabelVolume(disp.grid, np.argmax(probs, axis=-1), lv.n_classes)


# --------------------------------------------------------------------------
# filtering


def gaussian_kernel(sigma: float) -> np.ndarray:
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def gaussian_filter_array(arr, sigma: float, spatial_ndim=None) -> np.ndarray:
    """Separable Gaussian smoothing with border taps renormalized.

    Only the leading ``spatial_ndim`` axes are filtered (default: all).
    """
    k = gaussian_kernel(sigma)
    out = np.asarray(arr, dtype=float)
    nd = out.ndim if spatial_ndim is None else spatial_ndim
    for axis in range(nd):
        n = out.shape[axis]
        num = ndimage.correlate1d(out, k, axis=axis, mode="constant", cval=0.0)
        den = ndimage.correlate1d(np.ones(n), k, mode="constant", cval=0.0)
        shape = [1] * out.ndim
        shape[axis] = n
        out = num / den.reshape(shape)
    return out


def gaussian_filter(vol: ScalarVolume, sigma: float) -> ScalarVolume:
    return ScalarVolume(vol.grid, gaussian_filter_array(vol.values, sigma))


def smooth_label_array(labels, n_classes: int, sigma: float) -> np.ndarray:
    labels = np.asarray(labels)
    return gaussian_filter_array(one_hot(labels, n_classes), sigma, spatial_ndim=labels.ndim)


SIGMA_FLOOR = 0.1


def smooth_labels(lv: LabelVolume, sigma_s: float) -> ProbLabelVolume:
    """Gaussian-weighted local label frequencies, one channel per class.

    Positive widths below ``SIGMA_FLOOR`` are raised to it (the kernel is then
    a delta to within 1e-20).
    """
    if not sigma_s > 0:
        raise ValueError(f"sigma_s must be positive, got {sigma_s}")
    sigma_s = max(sigma_s, SIGMA_FLOOR)
    return ProbLabelVolume(lv.grid, smooth_label_array(lv.labels, lv.n_classes, sigma_s))


def gradient_magnitude_array(arr, spacing=None) -> np.ndarray:
    arr = np.asarray(arr, dtype=float)
    spacing = (1.0,) * arr.ndim if spacing is None else spacing
    total = np.zeros_like(arr)
    for axis, h in enumerate(spacing):
        # a single-voxel axis carries no variation
        if arr.shape[axis] > 1:
            total += np.gradient(arr, h, axis=axis, edge_order=1) ** 2
    return np.sqrt(total)


def gradient_magnitude(vol: ScalarVolume) -> ScalarVolume:
    return ScalarVolume(vol.grid, gradient_magnitude_array(vol.values, vol.grid.spacing))


def label_boundary_array(labels, n_classes: int, spacing=None) -> np.ndarray:
    """Sum over classes of the gradient norm of each one-hot channel."""
    labels = np.asarray(labels)
    oh = one_hot(labels, n_classes)
    return sum(gradient_magnitude_array(oh[..., k], spacing) for k in range(n_classes))


def label_boundary_map(lv: LabelVolume) -> ScalarVolume:
    return ScalarVolume(lv.grid, label_boundary_array(lv.labels, lv.n_classes, lv.grid.spacing))


# --------------------------------------------------------------------------
# pyramid resampling


def downsample2_array(arr, spatial_ndim=None) -> np.ndarray:
    """2-voxel block averaging per spatial axis; odd tails average what exists."""
    out = np.asarray(arr, dtype=float)
    nd = out.ndim if spatial_ndim is None else spatial_ndim
    for axis in range(nd):
        a = np.take(out, np.arange(0, out.shape[axis], 2), axis=axis)
        b = np.take(out, np.arange(1, out.shape[axis], 2), axis=axis)
        m = b.shape[axis]
        head = (np.take(a, np.arange(m), axis=axis) + b) / 2
        out = np.concatenate([head, np.take(a, np.arange(m, a.shape[axis]), axis=axis)], axis=axis)
    return out


def upsample2_array(arr, dims=None, spatial_ndim=None) -> np.ndarray:
    """Multilinear upsampling; fine voxel ``j`` sits at coarse coordinate ``(j - 0.5) / 2``."""
    arr = np.asarray(arr, dtype=float)
    nd = arr.ndim if spatial_ndim is None else spatial_ndim
    dims = tuple(2 * n for n in arr.shape[:nd]) if dims is None else tuple(dims)
    coords = (index_mesh(dims) - 0.5) / 2
    return interpolate(arr, coords, spatial_ndim=nd)


def resample_to(vol, factor: str, dims=None):
    """Downsample (``"down2"``) or upsample (``"up2"``) any volume type by two.

    ``dims`` optionally fixes the upsampled grid size (to undo odd-size ceils).
    Displacement vectors are scaled with the grid.
    """
    if factor not in ("down2", "up2"):
        raise ValueError(f"factor must be 'down2' or 'up2', got {factor!r}")
    down = factor == "down2"
    grid = vol.grid.downsampled() if down else vol.grid.upsampled(dims)
    nd = vol.grid.ndim

    def go(a):
        return downsample2_array(a, nd) if down else upsample2_array(a, grid.dims, nd)

    if isinstance(vol, ScalarVolume):
        return ScalarVolume(grid, go(vol.values))
    if isinstance(vol, ProbLabelVolume):
        probs = go(vol.probs)
        return ProbLabelVolume(grid, probs / probs.sum(axis=-1, keepdims=True))
    if isinstance(vol, LabelVolume):
        probs = go(vol.one_hot())
        return LabelVolume(grid, np.argmax(probs, axis=-1), vol.n_classes)
    if isinstance(vol, DisplacementField):
        scale = 0.5 if down else 2.0
        return DisplacementField(grid, scale * go(vol.vectors))
    raise TypeError(f"cannot resample {type(vol).__name__}")
