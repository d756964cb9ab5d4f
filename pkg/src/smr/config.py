"""INI experiment configuration.

Sections: ``[geometry]``, ``[spectrum]``, ``[materials]``, ``[phantom]``,
``[solver]``, ``[run]`` and optional ``[display]``.  Per-method overrides
go in ``[solver.<method>]`` and apply when that method is selected.  Paths are relative to
the config file; a ``builtin:`` prefix names a file shipped in ``smr/data``.
See ``configs/`` for complete examples.
"""
import configparser
from dataclasses import dataclass, field, replace
from pathlib import Path

from .bm3d_frame import Bm3dParams
from .errors import ConfigError
from .geometry import ScanGeometry, build_geometry
from .regularizers import NlmParams, TvParams
from .solvers import METHODS, SolverConfig
from .spectral import data_path

# PGM display windows; configs override them in [display]
DEFAULT_WINDOWS = {"bone": (0.012, 0.1), "water": (0.35, 0.80), "iodine": (0.011, 0.012)}


@dataclass(frozen=True)
class ExperimentConfig:
    geometry: ScanGeometry
    spectrum_path: Path
    bin_edges: tuple
    incident_flux: tuple
    material_names: tuple
    material_paths: tuple
    phantom: dict
    solver: SolverConfig
    seed: int = None
    noise: bool = True
    output: Path = Path("out")
    windows: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)
    photons_per_ray: float = None

    def with_overrides(self, method=None, seed=None, noise=None, iterations=None, output=None, windows=None):
        solver = self.solver
        if method is not None:
            check_method(method)
            solver = solver_from_sections(self.source, len(self.material_names), method)
        if iterations is not None:
            if iterations < 1:
                raise ConfigError("--iterations must be >= 1")
            solver = replace(solver, max_iterations=iterations)
        cfg = replace(
            self, solver=solver,
            seed=self.seed if seed is None else seed,
            noise=self.noise if noise is None else noise,
            output=self.output if output is None else Path(output),
            windows={**self.windows, **(windows or {})},
        )
        if cfg.noise and cfg.seed is None:
            raise ConfigError("a seed is required when noise is on")
        return cfg


def _floats(text, key):
    try:
        return tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise ConfigError(f"'{key}': expected numbers, got {text!r}") from None


def _resolve(text, base, key):
    text = text.strip()
    path = data_path(text[len("builtin:"):]) if text.startswith("builtin:") else (base / text)
    if not path.exists():
        raise ConfigError(f"'{key}': file not found: {path}")
    return path


def _get(section, key, cast=str, default=None, required=False):
    if key not in section:
        if required:
            raise ConfigError(f"[{section.name}]: missing key '{key}'")
        return default
    raw = section[key]
    try:
        return cast(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] '{key}': invalid value {raw!r}") from None


def _bool(text):
    value = text.strip().lower()
    if value in ("on", "true", "yes", "1"):
        return True
    if value in ("off", "false", "no", "0"):
        return False
    raise ValueError(text)


def _section(parser, name):
    if not parser.has_section(name):
        raise ConfigError(f"missing section [{name}]")
    return parser[name]


def load_config(path):
    path = Path(path)
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config {path}: {exc.message.splitlines()[0]}") from None
    return parse_config(parser, path.parent)


def parse_config(parser, base=Path(".")):
    base = Path(base)
    geometry = build_geometry(dict(_section(parser, "geometry")))

    spec = _section(parser, "spectrum")
    spectrum_path = _resolve(_get(spec, "path", required=True), base, "spectrum.path")
    edges = _floats(_get(spec, "bin_edges", required=True), "bin_edges")
    if len(edges) < 2:
        raise ConfigError("'bin_edges': at least two edges are required")
    if "photons_per_ray" in spec and "incident_flux" in spec:
        raise ConfigError("[spectrum]: give either 'photons_per_ray' or 'incident_flux', not both")
    photons = _get(spec, "photons_per_ray", float)
    if photons is not None and not photons > 0:
        raise ConfigError("'photons_per_ray' must be positive")
    flux = _floats(_get(spec, "incident_flux", default="1e5"), "incident_flux")
    if len(flux) not in (1, len(edges) - 1) or min(flux) <= 0:
        raise ConfigError("'incident_flux': one positive value, or one per bin")

    mats = _section(parser, "materials")
    names = tuple(v.strip() for v in _get(mats, "names", required=True).split(",") if v.strip())
    paths = tuple(_resolve(v, base, "materials.paths")
                  for v in _get(mats, "paths", required=True).split(",") if v.strip())
    if len(names) != len(paths):
        raise ConfigError(f"[materials]: {len(names)} names but {len(paths)} paths")

    phantom = dict(parser["phantom"]) if parser.has_section("phantom") else {"kind": "desk"}
    kind = phantom.get("kind", "desk")
    if kind not in ("desk", "three-disk", "file"):
        raise ConfigError(f"[phantom] 'kind': expected desk, three-disk or file, got {kind!r}")
    if kind == "file":
        phantom["path"] = str(_resolve(phantom.get("path", ""), base, "phantom.path"))

    source = {s: dict(parser[s]) for s in parser.sections()}
    solver = solver_from_sections(source, len(names))

    run = parser["run"] if parser.has_section("run") else {}
    seed = _get(run, "seed", int) if run else None
    noise = _get(run, "noise", _bool, True) if run else True
    output = Path(_get(run, "output", default="out")) if run else Path("out")
    if not output.is_absolute():
        output = base / output
    if noise and seed is None:
        raise ConfigError("[run]: 'seed' is required when noise is on")

    windows = dict(DEFAULT_WINDOWS)
    if parser.has_section("display"):
        for key, value in parser["display"].items():
            windows[key] = parse_window(value, f"[display] '{key}'")

    return ExperimentConfig(geometry, spectrum_path, edges, flux, names, paths, phantom, solver,
                            seed, noise, output, windows, source, photons)


def parse_window(text, where):
    lo_hi = _floats(text, where)
    if len(lo_hi) != 2 or not lo_hi[1] > lo_hi[0]:
        raise ConfigError(f"{where}: expected 'lo, hi' with hi > lo, got {text!r}")
    return lo_hi


def check_method(method):
    if method not in METHODS:
        raise ConfigError(f"unknown method {method!r}; valid methods: {', '.join(METHODS)}")


def solver_from_sections(source, n_materials, method=None):
    """Build the solver from ``[solver]`` overlaid with ``[solver.<method>]``."""
    if "solver" not in source and method is None:
        return _solver(None, n_materials)
    keys = dict(source.get("solver", {}))
    method = (method or keys.get("method", "msart")).strip()
    check_method(method)
    keys.update(source.get(f"solver.{method}", {}))
    keys["method"] = method
    merged = configparser.ConfigParser()
    merged.read_dict({"solver": keys})
    return _solver(merged["solver"], n_materials)


def _solver(sec, n_materials):
    try:
        return _build_solver(sec, n_materials)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[solver]: {exc}") from None


def _build_solver(sec, n_materials):
    if sec is None:
        return SolverConfig().for_materials(n_materials) if n_materials == 3 else SolverConfig(
            gamma=(0.0,) * n_materials, tau=(0.0,) * n_materials, xi=(0.0,) * n_materials)
    method = _get(sec, "method", default="msart").strip()
    check_method(method)

    def per_mat(key, default):
        if key not in sec:
            if default is not None and len(default) != n_materials:
                return (0.0,) * n_materials
            return default
        values = _floats(sec[key], key)
        if len(values) not in (1, n_materials):
            raise ConfigError(f"[solver] '{key}': expected 1 or {n_materials} values")
        return values if len(values) > 1 else values * n_materials

    base = SolverConfig()
    bm3d = Bm3dParams(
        block_size=_get(sec, "bm3d_block", int, 8),
        max_group_size=_get(sec, "bm3d_group", int, 16),
        search_window=_get(sec, "bm3d_window", int, 39),
        reference_step=_get(sec, "bm3d_step", int, 3),
    )
    tv = TvParams(
        smoothing_eps=_get(sec, "tv_eps", float, 1e-8),
        n_inner_steps=_get(sec, "tv_inner_steps", int, 10),
        step_size=_get(sec, "tv_step", float, 0.2),
    )
    nlm_h = _get(sec, "nlm_h", float, None)
    nlm = NlmParams(
        patch_radius=_get(sec, "nlm_patch", int, 2),
        window_radius=_get(sec, "nlm_window", int, 5),
        h=nlm_h,
        h_scale=_get(sec, "nlm_h_scale", float, 10.0),
    )
    return SolverConfig(
        method=method,
        beta1=_get(sec, "beta1", float, base.beta1),
        beta2=_get(sec, "beta2", float, base.beta2),
        lam=_get(sec, "lam", float, base.lam),
        gamma=per_mat("gamma", base.gamma),
        tau=per_mat("tau", base.tau),
        sigma=per_mat("sigma", None),
        xi=per_mat("xi", (0.0,) * n_materials),
        max_iterations=_get(sec, "max_iterations", int, base.max_iterations),
        bm3d=bm3d, tv=tv, nlm=nlm,
    )
