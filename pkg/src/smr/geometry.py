"""Fan-beam scan geometry, ray-driven system matrix and FBP.

Coordinates are in mm with the rotation center at the origin.  Image arrays
are indexed ``img[iy, ix]`` with ``iy`` increasing along +y; the flattened
pixel index is ``iy * J1 + ix``.  Ray ``l = view * n_cells + cell``.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ._backend import get_kernels, n_threads
from .errors import ConfigError


@dataclass(frozen=True)
class ScanGeometry:
    source_to_detector_mm: float
    source_to_center_mm: float
    n_detector_cells: int
    cell_pitch_mm: float
    n_views: int
    image_width: int
    image_height: int
    pixel_pitch_mm: float

    def __post_init__(self):
        if not self.source_to_detector_mm > self.source_to_center_mm > 0:
            raise ConfigError("sdd must exceed sod and both must be positive")
        for name in ("n_detector_cells", "n_views", "image_width", "image_height"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("cell_pitch_mm", "pixel_pitch_mm"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")

    @property
    def view_angles(self):
        return np.arange(self.n_views) * (2.0 * np.pi / self.n_views)

    @property
    def n_rays(self):
        return self.n_views * self.n_detector_cells

    @property
    def n_pixels(self):
        return self.image_width * self.image_height

    @property
    def image_shape(self):
        return (self.image_height, self.image_width)

    @property
    def cell_offsets(self):
        """Cell-center positions along the detector, mm."""
        n = self.n_detector_cells
        return (np.arange(n) - (n - 1) / 2.0) * self.cell_pitch_mm

    @property
    def fov_radius_mm(self):
        half = self.n_detector_cells * self.cell_pitch_mm / 2.0
        return self.source_to_center_mm * np.sin(np.arctan(half / self.source_to_detector_mm))

    def ray_endpoints(self):
        """Source and detector-cell positions for every ray, each (L, 2)."""
        theta = self.view_angles
        c, s = np.cos(theta), np.sin(theta)
        sod, sdd = self.source_to_center_mm, self.source_to_detector_mm
        src = np.stack([sod * c, sod * s], axis=1)
        det0 = -(sdd - sod) * np.stack([c, s], axis=1)
        e_u = np.stack([-s, c], axis=1)
        u = self.cell_offsets
        dst = det0[:, None, :] + u[None, :, None] * e_u[:, None, :]
        src = np.repeat(src, self.n_detector_cells, axis=0)
        return src, dst.reshape(-1, 2)


_GEOMETRY_KEYS = {
    "sdd": "source_to_detector_mm",
    "sod": "source_to_center_mm",
    "cells": "n_detector_cells",
    "pitch": "cell_pitch_mm",
    "views": "n_views",
    "px": "pixel_pitch_mm",
}


def build_geometry(config):
    """Build a ScanGeometry from a mapping of short keys.

    Required keys: ``sdd, sod, cells, pitch, views, img, px``; ``img`` is a
    single size or a ``(J1, J2)`` pair.
    """
    kwargs = {}
    for key, name in _GEOMETRY_KEYS.items():
        if key not in config:
            raise ConfigError(f"geometry: missing key '{key}'")
        try:
            value = float(config[key])
        except (TypeError, ValueError):
            raise ConfigError(f"geometry: '{key}' is not numeric: {config[key]!r}") from None
        if not value > 0:
            raise ConfigError(f"geometry: '{key}' must be positive, got {config[key]!r}")
        kwargs[name] = value
    if "img" not in config:
        raise ConfigError("geometry: missing key 'img'")
    img = config["img"]
    if isinstance(img, str):
        img = [v for v in img.replace("x", ",").split(",") if v.strip()]
    if np.ndim(img) == 0:
        img = (img, img)
    if len(img) == 1:
        img = (img[0], img[0])
    if len(img) != 2:
        raise ConfigError(f"geometry: 'img' must be one size or a pair, got {config['img']!r}")
    try:
        j1, j2 = (int(float(v)) for v in img)
    except ValueError:
        raise ConfigError(f"geometry: 'img' is not numeric: {config['img']!r}") from None
    if j1 < 1 or j2 < 1:
        raise ConfigError(f"geometry: 'img' must be positive, got {config['img']!r}")
    for name in ("n_detector_cells", "n_views"):
        if kwargs[name] != int(kwargs[name]):
            raise ConfigError(f"geometry: '{name}' must be an integer")
        kwargs[name] = int(kwargs[name])
    return ScanGeometry(image_width=j1, image_height=j2, **kwargs)


@dataclass(frozen=True, eq=False)
class SystemMatrix:
    """Sparse L x J matrix of ray/pixel intersection lengths (mm), stored by rows."""

    matrix: sp.csr_matrix
    image_shape: tuple
    transpose: sp.csr_matrix = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "transpose", self.matrix.T.tocsr())

    @property
    def n_rays(self):
        return self.matrix.shape[0]

    @property
    def n_pixels(self):
        return self.matrix.shape[1]

    def row(self, ray):
        start, stop = self.matrix.indptr[ray], self.matrix.indptr[ray + 1]
        return self.matrix.indices[start:stop], self.matrix.data[start:stop]

    @cached_property
    def row_sums(self):
        return np.asarray(self.matrix.sum(axis=1)).ravel()

    @cached_property
    def col_sums(self):
        return np.asarray(self.matrix.sum(axis=0)).ravel()

    @cached_property
    def inv_row_sums(self):
        """1 / row sums, 0 for rays that miss the grid."""
        s = self.row_sums
        return np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)

    @cached_property
    def inv_col_sums(self):
        s = self.col_sums
        return np.divide(1.0, s, out=np.zeros_like(s), where=s > 0)


def build_system_matrix(g, backend=None):
    """Exact (Siddon-style) intersection lengths, one row per detector cell and view."""
    src, dst = g.ray_endpoints()
    kern = get_kernels(backend)
    nx, ny, px = g.image_width, g.image_height, g.pixel_pitch_mm
    indptr, indices, data = kern.trace_rays(
        np.ascontiguousarray(src[:, 0]), np.ascontiguousarray(src[:, 1]),
        np.ascontiguousarray(dst[:, 0]), np.ascontiguousarray(dst[:, 1]),
        nx, ny, -nx * px / 2.0, -ny * px / 2.0, px, n_threads(),
    )
    mat = sp.csr_matrix((data, indices, indptr), shape=(g.n_rays, g.n_pixels))
    return SystemMatrix(mat, g.image_shape)


def forward_project(A, f):
    """Line integrals of one image (J2, J1) -> (L,), or a stack (N, J2, J1) -> (N, L)."""
    f = np.asarray(f, dtype=np.float64)
    if f.ndim == 1 or f.ndim == 2:
        if f.size != A.n_pixels:
            raise ValueError(f"image has {f.size} pixels, system matrix expects {A.n_pixels}")
        return A.matrix @ f.ravel()
    if f[0].size != A.n_pixels:
        raise ValueError(f"images have {f[0].size} pixels, system matrix expects {A.n_pixels}")
    return np.stack([A.matrix @ plane.ravel() for plane in f])


def back_project(A, p):
    """Transpose action: sinogram (L,) -> image (J2, J1), or (N, L) -> (N, J2, J1)."""
    p = np.asarray(p, dtype=np.float64)
    if p.shape[-1] != A.n_rays:
        raise ValueError(f"sinogram has {p.shape[-1]} rays, system matrix expects {A.n_rays}")
    if p.ndim == 1:
        return (A.transpose @ p).reshape(A.image_shape)
    return np.stack([(A.transpose @ row).reshape(A.image_shape) for row in p])


def ramp_kernel(n, spacing):
    """Spatial-domain ramp (Ram-Lak) filter taps for offsets -(n-1)..(n-1)."""
    k = np.arange(-(n - 1), n)
    h = np.zeros(k.shape)
    h[k == 0] = 1.0 / (4.0 * spacing ** 2)
    odd = (k % 2) == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    return h


def fbp_reconstruct(g, sinogram):
    """Flat-detector fan-beam FBP over a full rotation.

    ``sinogram`` holds line integrals shaped (n_views, n_cells); returns the
    attenuation image (J2, J1) in the same units per mm.
    """
    sino = np.asarray(sinogram, dtype=np.float64)
    if sino.shape != (g.n_views, g.n_detector_cells):
        raise ValueError(
            f"sinogram shape {sino.shape} does not match geometry "
            f"({g.n_views}, {g.n_detector_cells})")
    D = g.source_to_center_mm
    mag = g.source_to_detector_mm / D
    a = g.cell_pitch_mm / mag                   # cell spacing on the virtual detector through the center
    u = g.cell_offsets / mag
    weighted = sino * (D / np.sqrt(D ** 2 + u ** 2))
    n = g.n_detector_cells
    h = 0.5 * ramp_kernel(n, a)
    nfft = int(2 ** np.ceil(np.log2(3 * n)))
    H = np.fft.rfft(np.concatenate([h[n - 1:], np.zeros(nfft - 2 * n + 1), h[:n - 1]]))
    filtered = np.fft.irfft(np.fft.rfft(weighted, nfft, axis=1) * H, nfft, axis=1)[:, :n] * a

    ny, nx = g.image_shape
    px = g.pixel_pitch_mm
    x = (np.arange(nx) + 0.5 - nx / 2.0) * px
    y = (np.arange(ny) + 0.5 - ny / 2.0) * px
    X, Y = np.meshgrid(x, y)
    image = np.zeros((ny, nx))
    dtheta = 2.0 * np.pi / g.n_views
    for view, theta in enumerate(g.view_angles):
        c, s = np.cos(theta), np.sin(theta)
        dist = D - (X * c + Y * s)
        uv = D * (-X * s + Y * c) / dist
        pos = (uv - u[0]) / a
        image += np.interp(pos, np.arange(n), filtered[view], left=0.0, right=0.0) * (D / dist) ** 2
    return image * dtheta
