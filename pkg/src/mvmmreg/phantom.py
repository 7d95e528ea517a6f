"""Seeded synthetic "cardiac" phantoms with known labels and deformations.

The anatomy is a blood-pool disk (label 1) wrapped in a myocardium ring
(label 2) with an adjacent lobe (label 3) on background (label 0). Modalities
remap the same anatomy to different, possibly order-reversed intensities.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    DisplacementField,
    Grid,
    LabelVolume,
    ScalarVolume,
    gaussian_filter_array,
    index_mesh,
    interpolate,
    warp_labels,
)
from .mvmm import MvmmConfig, Subject, SubjectGroup

MODALITIES = {
    # background, blood pool, myocardium, lobe
    "mr": (0.05, 0.85, 0.35, 0.60),
    "ct": (0.55, 0.15, 0.90, 0.30),
    "lge": (0.20, 0.70, 0.10, 0.45),
}


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple = (128, 128)
    n_classes: int = 4
    intensities: tuple = MODALITIES["mr"]
    bias_amplitude: float = 0.0
    noise_std: float = 0.0
    sigma_d: float = 20.0
    max_disp: float = 6.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        if isinstance(self.intensities, str):
            object.__setattr__(self, "intensities", MODALITIES[self.intensities])
        object.__setattr__(self, "intensities", tuple(float(v) for v in self.intensities))
        if self.n_classes != 4:
            raise ValueError("the phantom anatomy has exactly 4 classes")
        if len(self.intensities) != self.n_classes:
            raise ValueError("need one intensity per class")
        if self.noise_std < 0 or self.bias_amplitude < 0 or self.max_disp < 0:
            raise ValueError("noise, bias and warp magnitudes must be non-negative")
        if not self.sigma_d > 0:
            raise ValueError("sigma_d must be positive")
        thinnest = anatomy_params(self.dims, self.seed)["thinnest"]
        if not self.max_disp < thinnest:
            raise ValueError(f"max_disp {self.max_disp} must stay below the thinnest structure "
                             f"width {thinnest:.2f}")

    @property
    def grid(self) -> Grid:
        return Grid(self.dims)


def _rng(*key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in key]))


def anatomy_params(dims, seed) -> dict:
    rng = _rng(seed, 0)
    size = min(dims[:2])
    nd = len(dims)
    center = np.array(dims, dtype=float) / 2 - 0.5 + rng.uniform(-0.03, 0.03, nd) * size
    r_pool = size * 0.10 * (1 + rng.uniform(-0.06, 0.06))
    thick = size * 0.06 * (1 + rng.uniform(-0.06, 0.06))
    angle = rng.uniform(-0.4, 0.4)
    lobe_axes = np.array([0.08, 0.16]) * size * (1 + rng.uniform(-0.06, 0.06, 2))
    r_out = r_pool + thick
    lobe_center = center.copy()
    lobe_center[:2] += (r_out + 0.6 * lobe_axes[0]) * np.array([math.cos(angle), math.sin(angle)])
    return {
        "center": center, "r_pool": r_pool, "r_out": r_out, "angle": angle,
        "lobe_center": lobe_center, "lobe_axes": lobe_axes,
        # the lobe's visible part is at least as wide as the ring
        "thinnest": min(thick, 2 * r_pool, 0.9 * lobe_axes[0]),
    }


def base_anatomy(dims, seed) -> np.ndarray:
    p = anatomy_params(dims, seed)
    x = index_mesh(dims)
    r = np.linalg.norm(x - p["center"], axis=-1)
    rel = x - p["lobe_center"]
    c, s = math.cos(p["angle"]), math.sin(p["angle"])
    a = rel[..., 0] * c + rel[..., 1] * s
    b = -rel[..., 0] * s + rel[..., 1] * c
    q = (a / p["lobe_axes"][0]) ** 2 + (b / p["lobe_axes"][1]) ** 2
    if len(dims) == 3:
        q = q + (rel[..., 2] / p["lobe_axes"][0]) ** 2
    labels = np.zeros(dims, dtype=np.int64)
    labels[q <= 1] = 3
    labels[r <= p["r_out"]] = 2
    labels[r <= p["r_pool"]] = 1
    return labels


def smooth_noise(dims, sigma, rng) -> np.ndarray:
    return gaussian_filter_array(rng.standard_normal(tuple(dims)), sigma)


def render(labels: np.ndarray, spec: PhantomSpec, rng: np.random.Generator) -> np.ndarray:
    """Class lookup, times a smooth multiplicative bias, plus Gaussian noise."""
    img = np.asarray(spec.intensities)[labels]
    bias = smooth_noise(labels.shape, max(labels.shape) / 4, rng)
    peak = np.abs(bias).max()
    if spec.bias_amplitude > 0 and peak > 0:
        img = img * (1 + spec.bias_amplitude * bias / peak)
    if spec.noise_std > 0:
        img = img + spec.noise_std * rng.standard_normal(labels.shape)
    return img


def make_phantom(spec: PhantomSpec) -> tuple:
    """Return ``(appearance, labels)`` volumes for one phantom subject."""
    grid = spec.grid
    labels = base_anatomy(spec.dims, spec.seed)
    img = render(labels, spec, _rng(spec.seed, 1))
    return ScalarVolume(grid, img), LabelVolume(grid, labels, spec.n_classes)


def random_smooth_warp(grid: Grid, sigma_d: float, max_disp: float, seed) -> DisplacementField:
    """Smoothed white noise rescaled so the largest component magnitude is ``max_disp``."""
    if not sigma_d > 0:
        raise ValueError("sigma_d must be positive")
    if max_disp == 0:
        return DisplacementField.zeros(grid)
    key = seed if isinstance(seed, (tuple, list)) else (seed,)
    rng = _rng(*key, 2)
    noise = rng.standard_normal(grid.dims + (grid.ndim,))
    field = gaussian_filter_array(noise, sigma_d, spatial_ndim=grid.ndim)
    return DisplacementField(grid, field * (max_disp / np.abs(field).max()))


def compose(first: DisplacementField, second: DisplacementField) -> DisplacementField:
    """Field of ``x -> phi_second(phi_first(x))``."""
    coords = first.coords()
    u = first.vectors + interpolate(second.vectors, coords, spatial_ndim=second.grid.ndim)
    return DisplacementField(first.grid, u)


def invert(disp: DisplacementField, iters: int = 60) -> DisplacementField:
    """Fixed-point inverse: ``v(x) = -u(x + v(x))``."""
    mesh = disp.grid.index_mesh()
    v = -np.asarray(disp.vectors)
    for _ in range(iters):
        v = -interpolate(disp.vectors, mesh + v, spatial_ndim=disp.grid.ndim)
    return DisplacementField(disp.grid, v)


@dataclass
class RegistrationCase:
    """Subjects warped from one base anatomy.

    ``truth[i]`` maps base (common) coordinates into subject i's space.
    """

    group: SubjectGroup
    truth: list
    base_labels: LabelVolume
    specs: list = field(default_factory=list)

    def truth_relative_to(self, ref: int) -> list:
        """True fields when subject ``ref``'s space is taken as the common space."""
        to_base = invert(self.truth[ref])
        return [DisplacementField.zeros(self.truth[ref].grid) if i == ref else compose(to_base, t)
                for i, t in enumerate(self.truth)]


def make_registration_case(specs, seed: int, cfg: MvmmConfig = None, max_disp=None,
                           sigma_d=None) -> RegistrationCase:
    """One base anatomy, an independent random warp and a modality per subject.

    ``max_disp`` may be a scalar or one value per subject (defaults to each
    spec's own ``max_disp``). Appearance is rendered after warping so
    intensities stay label-consistent.
    """
    specs = list(specs)
    if len(specs) < 2:
        raise ValueError("a registration case needs at least 2 subjects")
    cfg = cfg or MvmmConfig(n_classes=specs[0].n_classes)
    dims = specs[0].dims
    if any(s.dims != dims for s in specs):
        raise ValueError("all phantom specs in a case must share dims")
    grid = Grid(dims)
    if max_disp is None:
        mags = [s.max_disp for s in specs]
    elif np.ndim(max_disp) == 0:
        mags = [float(max_disp)] * len(specs)
    else:
        mags = [float(m) for m in max_disp]
    sigmas = [s.sigma_d for s in specs] if sigma_d is None else [float(sigma_d)] * len(specs)
    base = LabelVolume(grid, base_anatomy(dims, seed), specs[0].n_classes)
    subjects, truth = [], []
    for i, spec in enumerate(specs):
        # subject -> base, so the subject anatomy is the base pulled back through it
        to_base = random_smooth_warp(grid, sigmas[i], mags[i], (seed, i))
        labels = warp_labels(base, to_base)
        img = ScalarVolume(grid, render(labels.labels, spec, _rng(seed, i, 3)))
        subjects.append(Subject.build(img, labels, cfg))
        truth.append(invert(to_base))
    return RegistrationCase(SubjectGroup(subjects, grid), truth, base, specs)
