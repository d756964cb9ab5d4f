import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BACKENDS
from smr.bm3d_frame import (Bm3dParams, analysis, block_match, estimate_sigma, haar_matrix, hard_threshold,
                            reference_positions, shrink, shrink_with_spectrum, synthesis)

PARAMS = Bm3dParams()


def test_haar_orthonormal():
    for n in (1, 2, 4, 8, 16):
        H = haar_matrix(n)
        np.testing.assert_allclose(H @ H.T, np.eye(n), atol=1e-15)
    np.testing.assert_allclose(haar_matrix(2), np.array([[1, 1], [1, -1]]) / np.sqrt(2))


def test_reference_positions_cover_border():
    assert reference_positions(64, 8, 3)[-1] == 56
    assert reference_positions(8, 8, 3).tolist() == [0]


def test_params_validation():
    with pytest.raises(ValueError):
        Bm3dParams(max_group_size=12)
    with pytest.raises(ValueError):
        Bm3dParams(search_window=4)
    with pytest.raises(ValueError):
        Bm3dParams(reference_step=0)


def test_round_trip_and_parseval(rng):
    for _ in range(10):
        img = rng.random((64, 64))
        plan = block_match(img, PARAMS)
        assert np.max(np.abs(shrink(img, 0.0, PARAMS) - img)) <= 1e-10
        spec = analysis(img, plan)
        B = PARAMS.block_size
        for g, k in enumerate(plan.counts):
            r, c = plan.coords[g, :k, 0], plan.coords[g, :k, 1]
            energy = sum(np.sum(img[a:a + B, b:b + B] ** 2) for a, b in zip(r, c))
            assert abs(np.sum(spec.coeffs[g, :k] ** 2) - energy) <= 1e-10 * energy


def test_group_structure(rng):
    img = rng.random((40, 48))
    plan = block_match(img, PARAMS)
    assert np.all((plan.counts >= 1) & (plan.counts <= PARAMS.max_group_size))
    assert all(k & (k - 1) == 0 for k in plan.counts)
    # every group starts with its reference block, matched blocks stay inside the window
    refs = np.stack(np.meshgrid(reference_positions(40, 8, 3), reference_positions(48, 8, 3), indexing="ij"),
                    -1).reshape(-1, 2)
    assert np.array_equal(plan.coords[:, 0], refs)
    half = PARAMS.search_window // 2
    for g, k in enumerate(plan.counts):
        assert np.all(np.abs(plan.coords[g, :k] - refs[g]) <= half)
        assert np.all(plan.coords[g, :k, 0] <= 32) and np.all(plan.coords[g, :k, 1] <= 40)


@pytest.mark.parametrize("backend", BACKENDS)
def test_block_match_backends_identical(rng, backend):
    img = rng.random((48, 48))
    img[10:20, 10:20] = 0.5  # flat patches create distance ties
    a = block_match(img, PARAMS, backend="python")
    b = block_match(img, PARAMS, backend=backend)
    assert np.array_equal(a.counts, b.counts)
    for g, k in enumerate(a.counts):
        assert np.array_equal(a.coords[g, :k], b.coords[g, :k])


def test_threshold_keeps_large_coefficients(rng):
    img = rng.random((32, 32))
    plan = block_match(img, PARAMS)
    spec = analysis(img, plan)
    th = hard_threshold(spec, 0.04)
    kept = th.coeffs != 0
    assert np.all(np.abs(spec.coeffs[kept]) >= 0.2)
    assert np.all(np.abs(spec.coeffs[~kept]) < 0.2)
    assert th.nonzero_count() == int(th.retained.sum())


def test_huge_tau_gives_zero(rng):
    img = rng.random((32, 32))
    assert not shrink(img, 1e9, PARAMS).any()


def test_shrink_denoises_constant_image(rng):
    clean = np.full((64, 64), 1.0)
    clean[20:44, 20:44] = 2.0
    noisy = clean + rng.normal(0, 0.1, clean.shape)
    sigma = estimate_sigma(noisy)
    assert sigma == pytest.approx(0.1, rel=0.15)
    out = shrink(noisy, (2.7 * sigma) ** 2, PARAMS)
    assert np.sqrt(np.mean((out - clean) ** 2)) < 0.5 * np.sqrt(np.mean((noisy - clean) ** 2))


def test_shrink_with_spectrum_consistent(rng):
    img = rng.random((32, 32))
    g, spec, plan = shrink_with_spectrum(img, 0.01, PARAMS)
    assert np.array_equal(g, synthesis(spec, plan))


def test_errors(rng):
    with pytest.raises(ValueError):
        block_match(np.zeros((4, 4)), PARAMS)
    plan = block_match(rng.random((16, 16)), PARAMS)
    with pytest.raises(ValueError):
        analysis(np.zeros((16, 17)), plan)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from([8, 16, 24]), st.sampled_from([2, 4, 8]))
def test_round_trip_property(seed, size, group):
    img = np.random.default_rng(seed).normal(size=(size, size + 8))
    p = Bm3dParams(block_size=4, max_group_size=group, search_window=9, reference_step=2)
    assert np.max(np.abs(shrink(img, 0.0, p) - img)) <= 1e-10
