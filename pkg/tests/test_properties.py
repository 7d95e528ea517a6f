"""Randomized invariants checked with hypothesis."""
import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mvmmreg import io as mio
from mvmmreg.appearance import AppearanceVariant, appearance_ncc, compute_weight_map
from mvmmreg.geometry import (
    DisplacementField,
    Grid,
    LabelVolume,
    ScalarVolume,
    smooth_labels,
    warp_scalar,
)
from mvmmreg.metrics import dice, hausdorff
from mvmmreg.mvmm import MvmmConfig, posterior_array, voxel_consensus
from mvmmreg.optim import OptimConfig, bending_energy_array, cyclical_lr

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

dims2 = st.tuples(st.integers(3, 9), st.integers(3, 9))


@st.composite
def label_maps(draw, n_classes=st.integers(2, 4)):
    k = draw(n_classes)
    shape = draw(dims2)
    labels = draw(arrays(np.int64, shape, elements=st.integers(0, k - 1)))
    return LabelVolume(Grid(shape), labels, k)


@st.composite
def distributions(draw, n, k):
    raw = draw(arrays(np.float64, (n, k), elements=st.floats(0.01, 1.0)))
    return raw / raw.sum(axis=1, keepdims=True)


@SETTINGS
@given(label_maps(), st.floats(0.05, 3.0))
def test_smoothed_labels_are_distributions(lv, sigma):
    p = smooth_labels(lv, sigma).probs
    assert np.all(p >= 0) and np.all(p <= 1 + 1e-12)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


@SETTINGS
@given(label_maps())
def test_tiny_sigma_recovers_labels(lv):
    assert np.array_equal(smooth_labels(lv, 0.1).argmax().labels, lv.labels)


@SETTINGS
@given(dims2, arrays(np.float64, (2, 2), elements=st.floats(-2, 2)), arrays(np.float64, 2, elements=st.floats(-5, 5)))
def test_bending_zero_on_affine(shape, m, b):
    mesh = np.stack(np.meshgrid(*[np.arange(n, dtype=float) for n in shape], indexing="ij"), axis=-1)
    assert abs(bending_energy_array(mesh @ m.T + b)) < 1e-10


@SETTINGS
@given(dims2, st.data())
def test_bending_translation_invariant(shape, data):
    u = data.draw(arrays(np.float64, shape + (2,), elements=st.floats(-3, 3)))
    shift = data.draw(arrays(np.float64, 2, elements=st.floats(-10, 10)))
    a, b = bending_energy_array(u), bending_energy_array(u + shift)
    assert abs(a - b) <= 1e-9 * max(1.0, a)


@SETTINGS
@given(st.integers(1, 4), st.integers(2, 5), st.data())
def test_consensus_bounds(n, k, data):
    probs = data.draw(distributions(n, k))
    value = voxel_consensus(list(probs), MvmmConfig(n_classes=k))
    assert 0 < value <= 1 + 1e-12


@SETTINGS
@given(st.integers(1, 4), st.integers(2, 4), st.data())
def test_posterior_normalized_and_symmetric(n, k, data):
    maps = [data.draw(distributions(6, k)).reshape(2, 3, k) for _ in range(n)]
    prior = np.full(k, 1.0 / k)
    post = posterior_array(maps, prior, 1e-12)
    np.testing.assert_allclose(post.sum(axis=-1), 1.0, atol=1e-6)
    order = data.draw(st.permutations(range(n)))
    np.testing.assert_allclose(posterior_array([maps[i] for i in order], prior, 1e-12), post, atol=1e-12)


@SETTINGS
@given(label_maps(), label_maps())
def test_dice_symmetric_and_bounded(a, b):
    if a.grid.dims != b.grid.dims:
        b = LabelVolume(a.grid, np.resize(b.labels, a.grid.dims), b.n_classes)
    for k in range(1, max(a.n_classes, b.n_classes)):
        d = dice(a, b, k)
        assert 0 <= d <= 1 and d == dice(b, a, k)


@SETTINGS
@given(label_maps(st.just(2)), st.data())
def test_hausdorff_symmetric(a, data):
    labels = data.draw(arrays(np.int64, a.grid.dims, elements=st.integers(0, 1)))
    b = LabelVolume(a.grid, labels, 2)
    if (a.labels == 1).any() and (b.labels == 1).any():
        h = hausdorff(a, b, 1)
        assert h >= 0 and h == hausdorff(b, a, 1)
        assert hausdorff(a, a, 1) == 0


@SETTINGS
@given(dims2, st.floats(-4, 4), st.data())
def test_constant_volume_warp_invariant(shape, c, data):
    u = data.draw(arrays(np.float64, shape + (2,), elements=st.floats(-6, 6)))
    grid = Grid(shape)
    out = warp_scalar(ScalarVolume(grid, np.full(shape, c)), DisplacementField(grid, u))
    np.testing.assert_allclose(out.values, c, atol=1e-12)


@SETTINGS
@given(st.integers(0, 500), st.floats(0.001, 0.05), st.floats(1.0, 5.0), st.integers(1, 40))
def test_cyclical_lr_bounds(it, lo, ratio, cycle):
    opt = OptimConfig(lr_min=lo, lr_max=lo * ratio, cycle_len=cycle)
    lr = cyclical_lr(it, opt)
    assert lo - 1e-15 <= lr <= lo * ratio + 1e-15
    assert lr == cyclical_lr(it + cycle, opt)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 20.0), st.floats(-5, 5))
def test_ncc_affine_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    grid = Grid((14, 14))
    labels = np.zeros((14, 14), int)
    labels[4:10, 3:11] = 1
    lv = LabelVolume(grid, labels, 2)
    img = rng.random((14, 14)) + labels
    v = AppearanceVariant("NCC", patch_radius=2, roi_dilation_radius=4)
    w1 = appearance_ncc(ScalarVolume(grid, img), lv, v).weights
    w2 = appearance_ncc(ScalarVolume(grid, a * img + b), lv, v).weights
    np.testing.assert_allclose(w1, w2, atol=1e-6)


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(["Mask", "MOG", "NCC", "ECC"]), st.integers(0, 10_000))
def test_weights_in_unit_interval(tag, seed):
    rng = np.random.default_rng(seed)
    grid = Grid((12, 12))
    labels = np.zeros((12, 12), int)
    labels[3:9, 2:8] = 1
    labels[5:7, 4:6] = 2
    img = rng.normal(size=(12, 12)) * 0.1 + labels
    w = compute_weight_map(ScalarVolume(grid, img), LabelVolume(grid, labels, 3), AppearanceVariant(tag)).weights
    assert np.all(w >= 0) and np.all(w <= 1)


@settings(max_examples=20, deadline=None, suppress_health_check=[HealthCheck.function_scoped_fixture])
@given(dims2, st.data())
def test_mvr_roundtrip(tmp_path, shape, data):
    vals = data.draw(arrays(np.float32, shape, elements=st.floats(-1e6, 1e6, width=32)))
    mio.save_volume(tmp_path / "v", ScalarVolume(Grid(shape), vals.astype(float)))
    assert np.array_equal(mio.load_volume(tmp_path / "v").values, vals.astype(float))
