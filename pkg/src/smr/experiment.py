"""Experiment orchestration shared by the CLI and the acceptance tests."""
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

from . import __version__
from ._backend import BACKEND
from .errors import ConfigError
from .geometry import build_system_matrix
from .io import write_convergence, write_image, write_manifest, write_pgm
from .phantom import DEFAULT_MATERIALS, desk_phantom, load_maps, three_disk_phantom
from .solvers import reconstruct
from .spectral import load_basis_attenuation, load_spectrum, simulate_measurements

log = logging.getLogger(__name__)


@dataclass(eq=False)
class Experiment:
    config: object
    geometry: object
    A: object
    model: object
    basis: object


def setup(cfg, A=None):
    """Load the spectrum and basis tables and build the system matrix."""
    model = load_spectrum(cfg.spectrum_path, cfg.bin_edges, cfg.incident_flux, cfg.photons_per_ray)
    basis = load_basis_attenuation(cfg.material_paths, model.grid, cfg.material_names)
    if A is None:
        log.info("building system matrix for %s", cfg.geometry)
        A = build_system_matrix(cfg.geometry)
    return Experiment(cfg, cfg.geometry, A, model, basis)


def make_truth(cfg):
    kind = cfg.phantom.get("kind", "desk")
    J2, J1 = cfg.geometry.image_shape
    if kind == "file":
        return load_maps(cfg.phantom["path"], len(cfg.material_names), J1, J2, cfg.material_names)
    if J1 != J2:
        raise ConfigError(f"procedural phantoms need a square image, got {J1}x{J2}")
    if tuple(cfg.material_names) != DEFAULT_MATERIALS:
        raise ConfigError(f"procedural phantoms use materials {', '.join(DEFAULT_MATERIALS)}")
    return desk_phantom(J1) if kind == "desk" else three_disk_phantom(J1)


def simulate(exp, truth):
    cfg = exp.config
    return simulate_measurements(truth, exp.A, exp.model, exp.basis, seed=cfg.seed, noise=cfg.noise)


def run(exp, q_bar, truth=None):
    return reconstruct(q_bar, exp.A, exp.model, exp.basis, exp.config.solver, truth=truth, geometry=exp.geometry)


def manifest(cfg, **extra):
    solver = asdict(cfg.solver)
    return {
        "version": __version__,
        "backend": BACKEND,
        "seed": cfg.seed,
        "noise": cfg.noise,
        "config": cfg.source,
        "solver": solver,
        **extra,
    }


def write_reconstruction(out_dir, maps, diag, cfg):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_image(out / "maps.smr", maps.data)
    write_convergence(out / "convergence.csv", diag.rows)
    if diag.decomposition:
        with open(out / "decomposition.csv", "w") as fh:
            fh.write("iteration,objective\n")
            for k, value in enumerate(diag.decomposition, start=1):
                fh.write(f"{k},{value!r}\n")
    for n, name in enumerate(maps.names):
        write_pgm(out / f"{name}.pgm", maps.data[n], cfg.windows.get(name))
    write_manifest(out / "manifest.json", manifest(cfg, command="reconstruct", materials=list(maps.names)))


def final_metrics(diag):
    last = max(r["iteration"] for r in diag.rows)
    return [r for r in diag.rows if r["iteration"] == last]

