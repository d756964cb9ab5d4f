"""Procedural material phantoms and raw map loading.

Region centers and radii are in pixels, measured from the image center with
+x to the right and +y along increasing row index.
"""
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .io import read_image, write_image

DEFAULT_MATERIALS = ("bone", "water", "iodine")


@dataclass(frozen=True, eq=False)
class MaterialMaps:
    """Stack of per-material fraction images, shape (N, J2, J1)."""

    data: np.ndarray
    names: tuple = None

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[None]
        if data.ndim != 3:
            raise DataError(f"material maps must be (N, J2, J1), got shape {data.shape}")
        names = tuple(self.names) if self.names is not None else tuple(f"m{n}" for n in range(data.shape[0]))
        if len(names) != data.shape[0]:
            raise DataError(f"{len(names)} names for {data.shape[0]} material planes")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "names", names)

    @property
    def n_materials(self):
        return self.data.shape[0]

    @property
    def shape(self):
        return self.data.shape[1:]

    def __getitem__(self, key):
        if isinstance(key, str):
            key = self.names.index(key)
        return self.data[key]


def _region_mask(J1, J2, center, radius, angle=0.0):
    x = np.arange(J1) + 0.5 - J1 / 2.0
    y = np.arange(J2) + 0.5 - J2 / 2.0
    X, Y = np.meshgrid(x - center[0], y - center[1])
    a, b = (radius, radius) if np.ndim(radius) == 0 else radius
    if not (a > 0 and b > 0):
        raise DataError(f"region radius must be positive, got {radius!r}")
    c, s = np.cos(angle), np.sin(angle)
    u, v = X * c + Y * s, -X * s + Y * c
    return (u / a) ** 2 + (v / b) ** 2 <= 1.0


def make_disk_phantom(J1, J2, regions, n_materials=None, names=None):
    """Paint regions in list order; later ones overwrite earlier ones in their material's plane.

    Each region is ``(center, radius, material_index, fraction)`` with an
    optional fifth element (rotation in radians) for ellipses given as
    ``radius=(a, b)``.
    """
    if n_materials is None:
        n_materials = len(names) if names is not None else len(DEFAULT_MATERIALS)
    if names is None:
        names = DEFAULT_MATERIALS if n_materials == len(DEFAULT_MATERIALS) else None
    data = np.zeros((n_materials, J2, J1))
    for region in regions:
        center, radius, index, fraction = region[:4]
        angle = region[4] if len(region) > 4 else 0.0
        if not 0 <= index < n_materials:
            raise DataError(f"material index {index} out of range for {n_materials} materials")
        if fraction < 0:
            raise DataError(f"fraction must be nonnegative, got {fraction}")
        data[index][_region_mask(J1, J2, center, radius, angle)] = fraction
    return MaterialMaps(data, names)


def desk_regions(size=256):
    """Chest-like layout: water body, low-density lungs, bony ring, iodine vessels."""
    k = size / 256.0
    B, W, I = 0, 1, 2
    regions = [
        ((0, 0), (110 * k, 95 * k), W, 1.0),
        ((-45 * k, 10 * k), (30 * k, 45 * k), W, 0.3, 0.15),
        ((45 * k, 10 * k), (30 * k, 45 * k), W, 0.3, -0.15),
    ]
    for cx, cy, r in [(-40, 25, 2.5), (-52, -5, 2.0), (-35, -12, 1.5), (48, 30, 2.5), (38, -8, 2.0), (55, 0, 1.5)]:
        regions.append(((cx * k, cy * k), r * k, W, 1.0))
    # spine ring with marrow, sternum, ribs
    regions += [
        ((0, -60 * k), 20 * k, W, 0.0),
        ((0, -60 * k), 12 * k, W, 1.0),
        ((0, -60 * k), 20 * k, B, 1.0),
        ((0, -60 * k), 12 * k, B, 0.0),
        ((0, 75 * k), 8 * k, W, 0.0),
        ((0, 75 * k), 8 * k, B, 1.0),
    ]
    for cx, cy in [(-88, -40), (88, -40), (-95, 20), (95, 20), (-70, 62), (70, 62)]:
        regions.append(((cx * k, cy * k), 5 * k, W, 0.0))
        regions.append(((cx * k, cy * k), 5 * k, B, 1.0))
    for (cx, cy), frac in zip([(-60, -55), (60, -55), (0, 40)], (0.012, 0.008, 0.004)):
        regions.append(((cx * k, cy * k), 9 * k, I, frac))
    return regions


def desk_phantom(size=256):
    return make_disk_phantom(size, size, desk_regions(size))


def three_disk_phantom(size=64):
    """Water disk holding one bone insert and one iodine insert."""
    k = size / 64.0
    regions = [
        ((0, 0), 24 * k, 1, 1.0),
        ((-10 * k, 0), 7 * k, 1, 0.0),
        ((-10 * k, 0), 7 * k, 0, 1.0),
        ((10 * k, 0), 7 * k, 2, 0.012),
    ]
    return make_disk_phantom(size, size, regions)


def load_maps(path, N=None, J1=None, J2=None, names=None):
    """Read a raw stack and check its dimensions and sign."""
    expect = None if N is None else (N, J1, J2)
    data = read_image(path, expect)
    if np.any(~np.isfinite(data)):
        raise DataError(f"{path}: non-finite values in material maps")
    neg = int(np.count_nonzero(data < 0))
    if neg:
        raise DataError(f"{path}: {neg} negative values in material maps")
    if names is None and data.shape[0] == len(DEFAULT_MATERIALS):
        names = DEFAULT_MATERIALS
    return MaterialMaps(data, names)


def write_maps(path, maps):
    write_image(path, maps.data)
