"""Energy sampling, binned spectra, basis attenuation and the polychromatic forward model.

Per-sample weights ``sw[m, i] = s_m(E_i) * dE_i`` are what every sum over
energy uses, so the per-bin normalization reads ``sw[m].sum() == 1``.
"""
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .errors import DataError
from .geometry import forward_project

EXP_FLOOR = -700.0


def data_path(name):
    """Path of a data file shipped with the package."""
    return Path(str(resources.files("smr") / "data" / name))


def read_table(path):
    """Two-column whitespace table with ``#`` comments -> (x, y)."""
    try:
        arr = np.loadtxt(path, comments="#", ndmin=2, dtype=np.float64)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"malformed table {path}: {exc}") from exc
    if arr.shape[0] == 0 or arr.shape[1] != 2:
        raise DataError(f"{path}: expected two columns, got shape {arr.shape}")
    return arr[:, 0].copy(), arr[:, 1].copy()


def _trapezoid_widths(energies):
    if len(energies) == 1:
        return np.ones(1)
    gaps = np.diff(energies)
    widths = np.empty(len(energies))
    widths[0] = gaps[0] / 2.0
    widths[-1] = gaps[-1] / 2.0
    widths[1:-1] = (gaps[:-1] + gaps[1:]) / 2.0
    return widths


@dataclass(frozen=True, eq=False)
class EnergyGrid:
    """Energy samples E_i (keV) with quadrature widths dE_i.

    Widths default to trapezoid weights, so a flat weight integrates to the
    exact span of the grid.
    """

    energies: np.ndarray
    delta: np.ndarray = None

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=np.float64).ravel()
        if e.size == 0 or np.any(np.diff(e) <= 0):
            raise DataError("energy samples must be strictly ascending")
        d = _trapezoid_widths(e) if self.delta is None else np.asarray(self.delta, dtype=np.float64).ravel()
        if d.shape != e.shape or np.any(d <= 0):
            raise DataError("energy widths must be positive, one per sample")
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "delta", d)

    def __len__(self):
        return self.energies.size

    @classmethod
    def uniform(cls, e_min, e_max, n):
        return cls(np.linspace(e_min, e_max, n))


def bin_masks(energies, bin_edges):
    """Boolean (M, I) membership: ``lo <= E < hi``, the last bin closed on the right."""
    edges = np.asarray(bin_edges, dtype=np.float64)
    masks = (energies[None, :] >= edges[:-1, None]) & (energies[None, :] < edges[1:, None])
    masks[-1] |= energies == edges[-1]
    return masks


@dataclass(frozen=True, eq=False)
class SpectralModel:
    grid: EnergyGrid
    bin_edges: np.ndarray
    s: np.ndarray
    incident_flux: np.ndarray
    sw: np.ndarray = field(init=False, repr=False)
    band_lo: np.ndarray = field(init=False, repr=False)
    band_hi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=np.float64)
        s = np.asarray(self.s, dtype=np.float64)
        flux = np.broadcast_to(np.asarray(self.incident_flux, dtype=np.float64), (edges.size - 1,)).copy()
        if s.shape != (edges.size - 1, len(self.grid)):
            raise DataError(f"spectrum shape {s.shape} does not match {edges.size - 1} bins x {len(self.grid)} samples")
        if np.any(s < 0):
            raise DataError("spectrum values must be nonnegative")
        if np.any(flux <= 0):
            raise DataError("incident flux must be positive")
        sw = s * self.grid.delta[None, :]
        lo = np.zeros(s.shape[0], dtype=np.int64)
        hi = np.zeros(s.shape[0], dtype=np.int64)
        for m, row in enumerate(sw):
            nz = np.flatnonzero(row)
            if nz.size:
                lo[m], hi[m] = nz[0], nz[-1] + 1
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "incident_flux", flux)
        object.__setattr__(self, "sw", sw)
        object.__setattr__(self, "band_lo", lo)
        object.__setattr__(self, "band_hi", hi)

    @property
    def n_bins(self):
        return self.s.shape[0]


def make_spectral_model(energies, weights, bin_edges, incident_flux=1e5, delta=None):
    """Split a relative spectrum into bins, each renormalized to unit integral."""
    grid = EnergyGrid(energies, delta)
    weights = np.asarray(weights, dtype=np.float64).ravel()
    if weights.shape != grid.energies.shape:
        raise DataError("one weight per energy sample is required")
    if np.any(weights < 0):
        raise DataError("spectrum weights must be nonnegative")
    edges = np.asarray(bin_edges, dtype=np.float64).ravel()
    if edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise DataError("bin edges must be strictly ascending with at least two values")
    if edges[0] < grid.energies[0] or edges[-1] > grid.energies[-1]:
        raise DataError(
            f"bin edges [{edges[0]}, {edges[-1]}] exceed the energy grid "
            f"[{grid.energies[0]}, {grid.energies[-1]}]")
    masks = bin_masks(grid.energies, edges)
    s = np.where(masks, weights[None, :], 0.0)
    totals = (s * grid.delta).sum(axis=1)
    for m, total in enumerate(totals):
        if total <= 0:
            raise DataError(f"bin {m} [{edges[m]}, {edges[m + 1]}) has zero total weight")
    return SpectralModel(grid, edges, s / totals[:, None], incident_flux)


def bin_fractions(energies, weights, bin_edges, delta=None):
    """Share of the total spectral weight falling in each bin."""
    grid = EnergyGrid(energies, delta)
    w = np.asarray(weights, dtype=np.float64) * grid.delta
    per_bin = np.where(bin_masks(grid.energies, bin_edges), w[None, :], 0.0).sum(axis=1)
    return per_bin / w.sum()


def load_spectrum(path, bin_edges, incident_flux=1e5, photons_per_ray=None):
    """Read a ``energy_keV weight`` table and bin it.

    ``incident_flux`` gives photons per ray for each bin (or one value for
    all); ``photons_per_ray`` instead splits a total over the bins in
    proportion to the spectrum.
    """
    energies, weights = read_table(path)
    if np.any(np.diff(energies) <= 0):
        raise DataError(f"{path}: energies must be strictly ascending")
    if photons_per_ray is not None:
        incident_flux = photons_per_ray * bin_fractions(energies, weights, bin_edges)
    return make_spectral_model(energies, weights, bin_edges, incident_flux)


@dataclass(frozen=True, eq=False)
class BasisAttenuation:
    """phi[n, i]: attenuation of material n at E_i, 1/mm per unit fraction."""

    phi: np.ndarray
    names: tuple

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=np.float64))
        if np.any(~np.isfinite(phi)) or np.any(phi <= 0):
            raise DataError("basis attenuation values must be positive")
        names = tuple(self.names)
        if len(names) != phi.shape[0]:
            raise DataError(f"{len(names)} names for {phi.shape[0]} materials")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "names", names)

    @property
    def n_materials(self):
        return self.phi.shape[0]


def loglog_interp(x, xp, fp):
    """Piecewise log-log interpolation.

    ``xp`` may repeat a value (absorption edge); queries at or above a repeated
    node take the upper branch.  Nodes are reproduced exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    xp = np.asarray(xp, dtype=np.float64)
    fp = np.asarray(fp, dtype=np.float64)
    j = np.clip(np.searchsorted(xp, x, side="right") - 1, 0, xp.size - 2)
    x0, x1, f0, f1 = xp[j], xp[j + 1], fp[j], fp[j + 1]
    t = np.log(x / x0) / np.log(x1 / x0)
    out = np.exp(np.log(f0) + t * (np.log(f1) - np.log(f0)))
    out = np.where((t == 0) | (f0 == f1), f0, out)
    return np.where(x == x1, f1, out)


def load_basis_attenuation(paths, grid, names=None):
    """Interpolate one attenuation table per material onto ``grid``."""
    if isinstance(paths, (str, Path)):
        paths = [paths]
    paths = list(paths)
    if names is None:
        names = [Path(p).stem.replace("attenuation_", "") for p in paths]
    rows = []
    for path in paths:
        energies, values = read_table(path)
        if np.any(values <= 0):
            raise DataError(f"{path}: attenuation values must be positive")
        if np.any(np.diff(energies) < 0) or np.any(energies <= 0):
            raise DataError(f"{path}: energies must be positive and non-decreasing")
        if energies.size < 2:
            raise DataError(f"{path}: at least two rows are needed")
        if grid.energies[0] < energies[0] or grid.energies[-1] > energies[-1]:
            raise DataError(
                f"{path}: table covers [{energies[0]}, {energies[-1]}] keV, grid needs "
                f"[{grid.energies[0]}, {grid.energies[-1]}] keV")
        rows.append(loglog_interp(grid.energies, energies, values))
    return BasisAttenuation(np.array(rows), names)


def kramers_spectrum(kvp=50.0, e_min=16.0, n_samples=341, filter_mm_al=1.0):
    """Filtered Kramers-law spectrum ``(kVp - E)/E * exp(-mu_Al(E) t)``, peak-normalized."""
    energies = np.linspace(e_min, kvp, n_samples)
    e_al, mu_al = read_table(data_path("attenuation_aluminum.txt"))
    weights = np.maximum(kvp - energies, 0.0) / energies
    weights *= np.exp(-loglog_interp(energies, e_al, mu_al) * filter_mm_al)
    return energies, weights / weights.max()


def _exp_attenuation(basis, P, band=slice(None)):
    x = -(np.asarray(P, dtype=np.float64).T @ basis.phi[:, band])
    return np.where(x < EXP_FLOOR, 0.0, np.exp(np.maximum(x, EXP_FLOOR)))


def transmit(model, basis, p_col, m):
    """Normalized transmitted intensity S of bin ``m`` for one ray."""
    e = _exp_attenuation(basis, np.asarray(p_col, dtype=np.float64).reshape(-1, 1))[0]
    return float(np.dot(model.sw[m], e))


def transmission(model, basis, P, chunk=8192):
    """S for every bin and ray: (N, L) line integrals -> (M, L)."""
    P = np.atleast_2d(np.asarray(P, dtype=np.float64))
    if P.shape[0] != basis.n_materials:
        raise ValueError(f"P has {P.shape[0]} rows, basis has {basis.n_materials} materials")
    L = P.shape[1]
    S = np.empty((model.n_bins, L))
    for start in range(0, L, chunk):
        cols = slice(start, min(start + chunk, L))
        for m in range(model.n_bins):
            band = slice(model.band_lo[m], model.band_hi[m])
            S[m, cols] = _exp_attenuation(basis, P[:, cols], band) @ model.sw[m, band]
    return S


def log_forward(model, basis, P):
    """Noiseless log data q = ln S, (M, L)."""
    return np.log(transmission(model, basis, P))


@dataclass(frozen=True, eq=False)
class MeasuredProjections:
    q_bar: np.ndarray
    incident_flux: np.ndarray
    counts: np.ndarray = None

    @property
    def n_bins(self):
        return self.q_bar.shape[0]

    @property
    def n_rays(self):
        return self.q_bar.shape[1]


def simulate_measurements(maps, A, model, basis, seed=None, noise=True):
    """Photon-counting measurements of ``maps`` with Poisson noise.

    Counts below one are clamped to one before the logarithm.  With
    ``noise=False`` the returned data is exactly ``log_forward(A maps)``.
    """
    data = maps.data if hasattr(maps, "data") else np.asarray(maps)
    P = forward_project(A, data)
    if noise:
        S = transmission(model, basis, P)
        expected = model.incident_flux[:, None] * S
        rng = np.random.default_rng(seed)
        counts = rng.poisson(expected)
        q_bar = np.log(np.maximum(counts, 1) / model.incident_flux[:, None])
        return MeasuredProjections(q_bar, model.incident_flux, counts)
    return MeasuredProjections(log_forward(model, basis, P), model.incident_flux)
