import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smr.decomposition import linearize_all
from smr.metrics import MetricsReport, bmfmr_objective, decomposition_objective, psnr, rmse, ssim
from smr.phantom import MaterialMaps

images = arrays(np.float64, (6, 7), elements=st.floats(0, 10, allow_subnormal=False))


def test_rmse_offset_exact():
    f = np.full((16, 16), 0.25)
    assert abs(rmse(f + 0.5, f) - 0.5) <= 1e-15


def test_psnr_20db():
    ref = np.zeros((10, 10))
    ref[0, 0] = 1.0
    f = ref + 0.1
    assert abs(psnr(f, ref) - 20.0) <= 1e-12
    assert psnr(ref, ref) == math.inf


def test_ssim_constants_hand_computed():
    f_star = np.array([[0.0, 1.0], [2.0, 3.0]])
    f = np.array([[0.0, 1.0], [2.0, 4.0]])
    e1, e2 = (0.01 * 3) ** 2, (0.03 * 3) ** 2
    cf, cs = 7 / 4, 6 / 4
    vf = np.mean((f - cf) ** 2)
    vs = np.mean((f_star - cs) ** 2)
    cov = np.mean((f - cf) * (f_star - cs))
    expected = (2 * cf * cs + e1) * (2 * cov + e2) / ((cf ** 2 + cs ** 2 + e1) * (vf + vs + e2))
    assert ssim(f, f_star) == pytest.approx(expected, rel=1e-14)


def test_ssim_zero_reference():
    z = np.zeros((4, 4))
    assert ssim(z, z) == 1.0
    assert ssim(z + 1, z) == 0.0


def test_shape_mismatch():
    with pytest.raises(ValueError):
        rmse(np.zeros((2, 2)), np.zeros((2, 3)))


@settings(max_examples=100, deadline=None)
@given(images)
def test_ssim_self_is_one(f):
    assert ssim(f, f) == 1.0


@settings(max_examples=100, deadline=None)
@given(images, images)
def test_ssim_bounded_and_symmetric_rmse(f, g):
    assert ssim(f, g) <= 1.0 + 1e-12
    assert rmse(f, g) == rmse(g, f)
    assert rmse(f, g) >= 0


def test_report_rows():
    truth = MaterialMaps(np.ones((3, 4, 4)))
    rep = MetricsReport.compare(MaterialMaps(np.ones((3, 4, 4)) * 1.1), truth)
    rows = list(rep.rows())
    assert [r["material"] for r in rows] == ["m0", "m1", "m2"]
    assert rows[0]["rmse"] == pytest.approx(0.1)


def test_decomposition_objective_matches_hand(model, basis, rng):
    L = 5
    P_prev = rng.uniform(0, [2, 20, 0.05], (L, 3)).T
    P = P_prev + rng.normal(0, 0.1, P_prev.shape)
    F_proj = P_prev + rng.normal(0, 0.1, P_prev.shape)
    Q = rng.normal(0, 1, (model.n_bins, L))
    lins = linearize_all(model, basis, P_prev)
    total = 0.0
    for l in range(L):
        r = lins.S[l] * (Q[:, l] - lins.q[l]) + lins.Theta[l] @ (P[:, l] - P_prev[:, l])
        total += r @ r + 0.3 * np.sum((F_proj[:, l] - P[:, l]) ** 2)
    assert decomposition_objective(P, P_prev, lins, Q, F_proj, 0.3) == pytest.approx(total, rel=1e-13)


def test_bmfmr_objective_terms(small_A, rng):
    f = rng.random(small_A.image_shape)
    p = rng.random(small_A.n_rays)
    base = bmfmr_objective(f, f, np.zeros_like(f), p, small_A, 0.5, 0.0, None)
    r = small_A.matrix @ f.ravel() - p
    assert base == pytest.approx(r @ r, rel=1e-14)
    g = np.zeros_like(f)
    assert bmfmr_objective(f, g, g, p, small_A, 0.5, 0.0, None) == pytest.approx(r @ r + 0.5 * np.sum(f ** 2))
