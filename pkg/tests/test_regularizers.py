import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smr.regularizers import NlmParams, TvParams, nlm_filter, tv_descent_step, tv_gradient, tv_value

small = arrays(np.float64, (6, 5), elements=st.floats(-5, 5, allow_subnormal=False))


def test_tv_value_step_edge():
    img = np.zeros((4, 4))
    img[:, 2:] = 1.0
    assert tv_value(img, eps=1e-12) == pytest.approx(4.0, abs=1e-9)


def test_tv_gradient_fd(rng):
    f = rng.random((7, 6))
    g = tv_gradient(f, eps=0.1)
    h = 1e-6
    for idx in [(0, 0), (3, 2), (6, 5), (2, 5)]:
        e = np.zeros_like(f)
        e[idx] = h
        fd = (tv_value(f + e, 0.1) - tv_value(f - e, 0.1)) / (2 * h)
        assert g[idx] == pytest.approx(fd, rel=1e-6, abs=1e-8)


@settings(max_examples=60, deadline=None)
@given(small, st.floats(0.001, 2.0))
def test_tv_descent_never_increases(f, xi):
    out = tv_descent_step(f, TvParams(xi=xi, smoothing_eps=1e-3))
    assert tv_value(out, 1e-3) <= tv_value(f, 1e-3) + 1e-12


def test_tv_zero_xi_is_identity(rng):
    f = rng.random((8, 8))
    out = tv_descent_step(f, TvParams(xi=0.0))
    assert out.tobytes() == f.tobytes() and out is not f


def test_tv_params_validation():
    with pytest.raises(ValueError):
        TvParams(xi=-1)
    with pytest.raises(ValueError):
        TvParams(smoothing_eps=0)


def test_nlm_constant_and_denoise(rng):
    c = np.full((20, 20), 3.0)
    np.testing.assert_allclose(nlm_filter(c, NlmParams()), c, rtol=1e-15)
    clean = np.zeros((40, 40))
    clean[10:30, 10:30] = 1.0
    noisy = clean + rng.normal(0, 0.1, clean.shape)
    out = nlm_filter(noisy, NlmParams(h_scale=4))
    assert np.sqrt(np.mean((out - clean) ** 2)) < 0.6 * np.sqrt(np.mean((noisy - clean) ** 2))


def test_nlm_matches_direct_loop(rng):
    f = rng.random((9, 8))
    p = NlmParams(patch_radius=1, window_radius=2, h=0.7)
    pad = np.pad(f, 3, mode="reflect")
    out = np.zeros_like(f)
    for i in range(9):
        for j in range(8):
            ci, cj = i + 3, j + 3
            ref = pad[ci - 1:ci + 2, cj - 1:cj + 2]
            num = den = 0.0
            for di in range(-2, 3):
                for dj in range(-2, 3):
                    q = pad[ci + di - 1:ci + di + 2, cj + dj - 1:cj + dj + 2]
                    w = np.exp(-np.sum((ref - q) ** 2) / 0.49)
                    num += w * pad[ci + di, cj + dj]
                    den += w
            out[i, j] = num / den
    np.testing.assert_allclose(nlm_filter(f, p), out, rtol=1e-12)


def test_nlm_params_validation():
    with pytest.raises(ValueError):
        NlmParams(patch_radius=3, window_radius=2)
    with pytest.raises(ValueError):
        NlmParams(h=0)


def test_tv_constant_floor_and_symmetry(rng):
    assert tv_value(np.full((5, 7), 2.0), eps=1e-3) == pytest.approx(35e-3, rel=1e-12)
    f = rng.random((6, 6))
    assert tv_value(f.T, 1e-8) == pytest.approx(tv_value(f, 1e-8), rel=1e-12)
    assert tv_value(f, 1e-3) > 36e-3


def test_tv_descent_constant_unchanged():
    c = np.full((8, 8), 0.7)
    assert np.array_equal(tv_descent_step(c, TvParams(xi=1.0)), c)


def test_tv_descent_strictly_decreases_noisy_step(rng):
    f = np.zeros((16, 16))
    f[:, 8:] = 1.0
    f += rng.normal(0, 0.05, f.shape)
    out = tv_descent_step(f, TvParams(xi=0.1))
    assert tv_value(out) < tv_value(f)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (9, 9), elements=st.floats(-2, 3, allow_subnormal=False)), st.floats(0.05, 5.0))
def test_nlm_convex_combination(f, h):
    out = nlm_filter(f, NlmParams(patch_radius=1, window_radius=2, h=h))
    assert out.min() >= f.min() - 1e-12 and out.max() <= f.max() + 1e-12


def test_nlm_two_region_means():
    f = np.zeros((24, 24))
    f[:, 12:] = 1.0
    out = nlm_filter(f, NlmParams(h=0.3))
    assert out[:, :10].mean() == pytest.approx(0.0, abs=0.01)
    assert out[:, 14:].mean() == pytest.approx(1.0, rel=0.01)


def test_nlm_small_h_is_identity(rng):
    f = rng.random((10, 10))
    np.testing.assert_allclose(nlm_filter(f, NlmParams(h=1e-3)), f, atol=1e-12)
