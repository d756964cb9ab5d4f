import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import BACKENDS
from smr._backend import get_kernels
from smr.errors import ConfigError
from smr.geometry import (ScanGeometry, back_project, build_geometry, build_system_matrix,
                          fbp_reconstruct, forward_project)


def trace(sx, sy, ex, ey, nx, ny, px, backend=None):
    kern = get_kernels(backend)
    xmin, ymin = -nx * px / 2.0, -ny * px / 2.0
    indptr, idx, data = kern.trace_rays(np.array([sx]), np.array([sy]), np.array([ex]), np.array([ey]),
                                        nx, ny, xmin, ymin, px, 1)
    return idx, data


def box_chord(sx, sy, ex, ey, half_w, half_h):
    """Chord of the segment through [-w, w] x [-h, h] by dense sampling."""
    t = (np.arange(1_000_000) + 0.5) / 1_000_000
    x = sx + t * (ex - sx)
    y = sy + t * (ey - sy)
    inside = (np.abs(x) <= half_w) & (np.abs(y) <= half_h)
    return inside.mean() * np.hypot(ex - sx, ey - sy)


def test_build_geometry_reference_numbers():
    g = build_geometry(dict(sdd=180, sod=132, cells=512, pitch=0.1, views=640, img=512, px=0.075))
    assert g.n_rays == 327680
    assert g.n_pixels == 512 * 512
    angles = g.view_angles
    assert angles[0] == 0.0 and angles[-1] < 2 * np.pi
    np.testing.assert_allclose(np.diff(angles), 2 * np.pi / 640)


def test_physical_scanner_fov():
    g = build_geometry(dict(sdd=440.50, sod=182.68, cells=512, pitch=0.4, views=360, img=256, px=0.3))
    assert g.fov_radius_mm == pytest.approx(41.3, abs=0.1)


@pytest.mark.parametrize("cfg, key", [
    (dict(sdd=100, sod=100, cells=8, pitch=1, views=4, img=8, px=1), None),
    (dict(sod=100, cells=8, pitch=1, views=4, img=8, px=1), "sdd"),
    (dict(sdd=200, sod=100, cells=8, pitch=-1, views=4, img=8, px=1), "pitch"),
    (dict(sdd=200, sod=100, cells=8, pitch=1, views=4, px=1), "img"),
])
def test_build_geometry_errors(cfg, key):
    with pytest.raises(ConfigError) as err:
        build_geometry(cfg)
    if key:
        assert key in str(err.value)


def test_img_string_forms():
    base = dict(sdd=180, sod=132, cells=8, pitch=1, views=4, px=1)
    assert build_geometry({**base, "img": "32x16"}).image_shape == (16, 32)
    assert build_geometry({**base, "img": "24"}).image_shape == (24, 24)


@pytest.mark.parametrize("backend", BACKENDS)
def test_axis_aligned_chord(backend):
    idx, data = trace(-10.0, 0.2, 10.0, 0.2, 3, 3, 1.0, backend)
    assert data.sum() == pytest.approx(3.0, abs=1e-12)
    assert sorted(idx) == [3, 4, 5]


@pytest.mark.parametrize("backend", BACKENDS)
def test_oblique_chord_dense_oracle(backend):
    sx, sy, ex, ey = -3.0, -1.7, 2.5, 2.9
    idx, data = trace(sx, sy, ex, ey, 2, 2, 1.0, backend)
    assert data.sum() == pytest.approx(box_chord(sx, sy, ex, ey, 1.0, 1.0), abs=1e-5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_missing_ray_empty_row(backend):
    idx, data = trace(-10.0, 5.0, 10.0, 5.0, 3, 3, 1.0, backend)
    assert idx.size == 0 and data.size == 0


def test_chord_conservation_random_rays():
    rng = np.random.default_rng(7)
    nx, ny, px = 17, 11, 0.7
    hw, hh = nx * px / 2, ny * px / 2
    kern = get_kernels()
    n = 1000
    ang = rng.uniform(0, 2 * np.pi, n)
    off = rng.uniform(-0.9, 0.9, n) * min(hw, hh)
    d = np.stack([np.cos(ang), np.sin(ang)], 1)
    nrm = np.stack([-d[:, 1], d[:, 0]], 1)
    s = off[:, None] * nrm - 50 * d
    e = off[:, None] * nrm + 50 * d
    indptr, idx, data = kern.trace_rays(s[:, 0].copy(), s[:, 1].copy(), e[:, 0].copy(), e[:, 1].copy(),
                                        nx, ny, -hw, -hh, px, 1)
    sums = np.add.reduceat(data, indptr[:-1]) if data.size else np.zeros(n)
    # analytic slab intersection of each full line with the box
    for l in range(n):
        t0, t1 = -np.inf, np.inf
        for k, half in ((0, hw), (1, hh)):
            if d[l, k] != 0:
                a, b = sorted(((-half - s[l, k]) / d[l, k], (half - s[l, k]) / d[l, k]))
                t0, t1 = max(t0, a), min(t1, b)
        chord = max(0.0, t1 - t0)
        assert abs(sums[l] - chord) <= 1e-9
    assert np.all(data >= 0)


@pytest.mark.parametrize("backend", BACKENDS)
def test_backends_bit_identical(small_geometry, backend):
    a = build_system_matrix(small_geometry, backend=backend).matrix
    b = build_system_matrix(small_geometry, backend="python").matrix
    assert np.array_equal(a.indptr, b.indptr)
    assert np.array_equal(a.indices, b.indices)
    assert np.array_equal(a.data, b.data)


def test_determinism(small_geometry, small_A):
    again = build_system_matrix(small_geometry)
    assert np.array_equal(again.matrix.data, small_A.matrix.data)
    assert np.array_equal(again.matrix.indices, small_A.matrix.indices)


def test_zero_and_disk_projection(small_geometry, small_A):
    assert not forward_project(small_A, np.zeros((64, 64))).any()
    g = small_geometry
    x = (np.arange(64) + 0.5 - 32) * g.pixel_pitch_mm
    X, Y = np.meshgrid(x, x)
    radius = 10.0
    p = forward_project(small_A, (X ** 2 + Y ** 2 <= radius ** 2).astype(float))
    # central cell pair straddles the center; the largest value is the diameter
    assert abs(p.max() - 2 * radius) <= 2 * g.pixel_pitch_mm


def test_adjoint(small_A):
    rng = np.random.default_rng(0)
    for _ in range(20):
        f = rng.random((64, 64))
        p = rng.random(small_A.n_rays)
        lhs = forward_project(small_A, f) @ p
        rhs = np.sum(f * back_project(small_A, p))
        assert abs(lhs - rhs) <= 1e-10 * np.linalg.norm(forward_project(small_A, f)) * np.linalg.norm(p)


@settings(max_examples=25, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2 ** 31))
def test_linearity(alpha, beta, seed):
    g = ScanGeometry(180, 132, 32, 0.4, 12, 16, 16, 0.5)
    A = _matrix_cache(g)
    rng = np.random.default_rng(seed)
    f, h = rng.random((2, 16, 16))
    lhs = forward_project(A, alpha * f + beta * h)
    rhs = alpha * forward_project(A, f) + beta * forward_project(A, h)
    scale = max(1.0, np.abs(rhs).max())
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * scale


_CACHE = {}


def _matrix_cache(g):
    if g not in _CACHE:
        _CACHE[g] = build_system_matrix(g)
    return _CACHE[g]


def test_size_mismatch(small_A):
    with pytest.raises(ValueError):
        forward_project(small_A, np.zeros((10, 10)))
    with pytest.raises(ValueError):
        back_project(small_A, np.zeros(7))


def test_single_ray_backprojection_support(small_A):
    p = np.zeros(small_A.n_rays)
    ray = small_A.n_rays // 3 + 64
    p[ray] = 1.0
    img = back_project(small_A, p).ravel()
    idx, _ = small_A.row(ray)
    assert set(np.flatnonzero(img)) == set(idx)


def test_fbp_disk_round_trip(small_geometry, small_A):
    g = small_geometry
    x = (np.arange(64) + 0.5 - 32) * g.pixel_pitch_mm
    X, Y = np.meshgrid(x, x)
    disk = (X ** 2 + Y ** 2 <= 10.0 ** 2).astype(float)
    sino = forward_project(small_A, disk).reshape(g.n_views, g.n_detector_cells)
    rec = fbp_reconstruct(g, sino)
    interior = X ** 2 + Y ** 2 <= 8.0 ** 2
    assert rec[interior].mean() == pytest.approx(1.0, rel=0.05)
    assert not fbp_reconstruct(g, np.zeros_like(sino)).any()


def test_fbp_impulse_concentrates_on_ray(small_geometry, small_A):
    g = small_geometry
    sino = np.zeros((g.n_views, g.n_detector_cells))
    sino[10, 64] = 1.0
    rec = fbp_reconstruct(g, sino)
    support = back_project(small_A, sino.ravel()) > 0
    energy = rec ** 2
    assert energy[support].sum() > 0.5 * energy.sum()


def test_fbp_shape_check(small_geometry):
    with pytest.raises(ValueError):
        fbp_reconstruct(small_geometry, np.zeros((3, 3)))
