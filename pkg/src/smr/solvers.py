"""Outer reconstruction loops.

Every iterative method alternates one decomposition sweep over all rays
with one image update per material.  After the image update the material
sinogram P is re-synchronized to the projections of the new maps, so each
decomposition starts from (and is coupled to) A F.

The image update is a SART step: the sinogram residual is normalized by the
ray lengths and the back projection by the pixel weights, which keeps the
relaxation factor beta2 unitless.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from .bm3d_frame import Bm3dParams, shrink_with_spectrum
from .decomposition import decompose_step
from .geometry import back_project, fbp_reconstruct, forward_project
from .metrics import psnr, rmse, ssim
from .phantom import MaterialMaps
from .regularizers import NlmParams, TvParams, nlm_filter, tv_descent_step

METHODS = ("msart", "tvmr", "nlmmr", "bmfmr", "fbp-direct")

TABLE_GAMMA = (0.03, 0.01, 0.001)
TABLE_TAU = (0.1, 0.55, 0.05)


def _per_material(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=np.float64), (n,)) if np.ndim(value) == 0 else np.asarray(value, dtype=np.float64)
    if arr.shape != (n,):
        raise ValueError(f"{name} needs one value per material ({n}), got {len(arr)}")
    return tuple(float(v) for v in arr)


@dataclass(frozen=True)
class SolverConfig:
    method: str = "msart"
    beta1: float = 0.2
    beta2: float = 0.2
    lam: float = 0.002
    gamma: tuple = TABLE_GAMMA
    tau: tuple = TABLE_TAU
    sigma: tuple = None
    xi: tuple = (0.0, 0.0, 0.0)
    max_iterations: int = 40
    bm3d: Bm3dParams = field(default_factory=Bm3dParams)
    tv: TvParams = field(default_factory=TvParams)
    nlm: NlmParams = field(default_factory=NlmParams)

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; valid: {', '.join(METHODS)}")
        for name in ("beta1", "beta2"):
            if not 0 < getattr(self, name) < 2:
                raise ValueError(f"{name} must lie in (0, 2)")
        if not self.lam > 0:
            raise ValueError("lam must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        for name in ("gamma", "tau", "xi"):
            if np.any(np.asarray(getattr(self, name)) < 0):
                raise ValueError(f"{name} values must be nonnegative")

    def for_materials(self, n):
        """Copy with per-material tuples expanded to length n."""
        sigma = None if self.sigma is None else _per_material(self.sigma, n, "sigma")
        return replace(self, gamma=_per_material(self.gamma, n, "gamma"), tau=_per_material(self.tau, n, "tau"),
                       xi=_per_material(self.xi, n, "xi"), sigma=sigma)


@dataclass
class SolverState:
    F: np.ndarray
    P: np.ndarray
    G: np.ndarray
    T: np.ndarray
    k: int = 0

    @classmethod
    def zeros(cls, n_materials, image_shape, n_rays):
        shape = (n_materials,) + tuple(image_shape)
        return cls(np.zeros(shape), np.zeros((n_materials, n_rays)), np.zeros(shape), np.zeros(shape))


@dataclass
class Diagnostics:
    """Per-iteration rows (iteration, material, rmse, psnr, ssim, objective) and the decomposition objective."""

    names: tuple
    rows: list = field(default_factory=list)
    decomposition: list = field(default_factory=list)
    state: SolverState = None

    def series(self, key, material):
        return np.array([r[key] for r in self.rows if r["material"] == material])


def positive(F):
    """Elementwise max with 0; adding 0.0 turns -0.0 into +0.0 so stored maps are sign-normalized."""
    return np.maximum(F, 0.0) + 0.0


def sart_direction(A, residual):
    """V^-1 A^T W^-1 residual for one sinogram (L,) or a stack (N, L)."""
    return back_project(A, residual * A.inv_row_sums) * A.inv_col_sums.reshape(A.image_shape)


def msart_image_step(F, P_new, A, beta2, AF=None):
    """SART step of every material toward P_new, then the positivity clamp."""
    F = np.asarray(F, dtype=np.float64)
    if AF is None:
        AF = forward_project(A, F)
    if np.shape(P_new) != np.shape(AF):
        raise ValueError(f"P_new shape {np.shape(P_new)} does not match projections {np.shape(AF)}")
    return positive(F - beta2 * sart_direction(A, AF - P_new))


def bmfmr_image_step(f_n, P_row, g_n, t_n, A, beta2, gamma_n, Af=None):
    """SART half step, then the coupling correction toward g + t (no clamp)."""
    f_n = np.asarray(f_n, dtype=np.float64)
    if Af is None:
        Af = forward_project(A, f_n)
    if np.shape(P_row) != np.shape(Af):
        raise ValueError(f"P_row shape {np.shape(P_row)} does not match projections {np.shape(Af)}")
    f_half = f_n - beta2 * sart_direction(A, Af - P_row)
    return f_half - gamma_n * (f_n - g_n - t_n)


def _record(diag, k, F, truth, objectives):
    for n, name in enumerate(diag.names):
        row = {"iteration": k, "material": name, "rmse": None, "psnr": None, "ssim": None,
               "objective": objectives[n]}
        if truth is not None:
            row["rmse"] = rmse(F[n], truth.data[n])
            row["psnr"] = psnr(F[n], truth.data[n])
            row["ssim"] = ssim(F[n], truth.data[n])
        diag.rows.append(row)


def _names(basis, truth):
    return tuple(truth.names) if truth is not None else tuple(basis.names)


def _iterate(Q_bar, A, model, basis, cfg, truth, material_update, callback=None):
    """Shared outer loop; ``material_update(state, P_new, AF)`` returns the per-material objective extras."""
    Q_bar = np.asarray(Q_bar, dtype=np.float64)
    N = basis.n_materials
    cfg = cfg.for_materials(N)
    state = SolverState.zeros(N, A.image_shape, A.n_rays)
    diag = Diagnostics(_names(basis, truth))
    AF = np.zeros((N, A.n_rays))
    for k in range(1, cfg.max_iterations + 1):
        state.P = AF
        P_new, y = decompose_step(state.P, Q_bar, model, basis, cfg.beta1, cfg.lam, with_objective=True)
        diag.decomposition.append(float(y.sum()))
        extras = material_update(state, P_new, AF, cfg)
        state.F = positive(state.F)
        state.k = k
        AF = forward_project(A, state.F)
        resid = AF - P_new
        objectives = [float(resid[n] @ resid[n]) + extras[n] for n in range(N)]
        _record(diag, k, state.F, truth, objectives)
        if callback is not None:
            callback(state, diag)
    state.P = AF
    diag.state = state
    return MaterialMaps(state.F.copy(), diag.names), diag


def run_msart(Q_bar, A, model, basis, cfg, truth=None, callback=None):
    def update(state, P_new, AF, cfg):
        state.F = msart_image_step(state.F, P_new, A, cfg.beta2, AF)
        return [0.0] * len(state.F)
    return _iterate(Q_bar, A, model, basis, cfg, truth, update, callback)


def run_tvmr(Q_bar, A, model, basis, cfg, truth=None, callback=None):
    def update(state, P_new, AF, cfg):
        F = msart_image_step(state.F, P_new, A, cfg.beta2, AF)
        for n in range(len(F)):
            F[n] = tv_descent_step(F[n], replace(cfg.tv, xi=cfg.xi[n]))
        state.F = F
        return [0.0] * len(F)
    return _iterate(Q_bar, A, model, basis, cfg, truth, update, callback)


def run_nlmmr(Q_bar, A, model, basis, cfg, truth=None, callback=None):
    def update(state, P_new, AF, cfg):
        F = msart_image_step(state.F, P_new, A, cfg.beta2, AF)
        for n in range(len(F)):
            F[n] = nlm_filter(F[n], cfg.nlm)
        state.F = F
        return [0.0] * len(F)
    return _iterate(Q_bar, A, model, basis, cfg, truth, update, callback)


def run_bmfmr(Q_bar, A, model, basis, cfg, truth=None, callback=None):
    def update(state, P_new, AF, cfg):
        extras = []
        F = np.empty_like(state.F)
        for n in range(len(F)):
            f1 = bmfmr_image_step(state.F[n], P_new[n], state.G[n], state.T[n], A, cfg.beta2, cfg.gamma[n], AF[n])
            params = cfg.bm3d if cfg.sigma is None else replace(cfg.bm3d, sigma=cfg.sigma[n])
            g, spec, _ = shrink_with_spectrum(f1 - state.T[n], cfg.tau[n], params)
            t = state.T[n] - (f1 - g)
            F[n], state.G[n], state.T[n] = f1, g, t
            extras.append((cfg.gamma[n], cfg.tau[n] * spec.nonzero_count()))
        state.F = F
        # coupling uses the clamped maps, matching what the next iteration sees
        Fc = positive(F)
        return [gam * float(np.sum((Fc[n] - state.G[n] - state.T[n]) ** 2)) + l0
                for n, (gam, l0) in enumerate(extras)]
    return _iterate(Q_bar, A, model, basis, cfg, truth, update, callback)


def effective_attenuation(model, basis):
    """Bin-averaged basis attenuation, (M, N)."""
    return model.sw @ basis.phi.T


def run_fbp_direct(Q_bar, A, geometry, model, basis, truth=None, max_condition=1e8):
    """FBP of every bin, then a per-pixel least-squares material split."""
    Q_bar = np.asarray(Q_bar, dtype=np.float64)
    M, N = model.n_bins, basis.n_materials
    if M < N:
        raise ValueError(f"need at least as many bins ({M}) as materials ({N})")
    phi_bar = effective_attenuation(model, basis)
    cond = np.linalg.cond(phi_bar)
    if not np.isfinite(cond) or cond > max_condition:
        raise ValueError(f"bin-averaged basis matrix is ill-conditioned (condition number {cond:.3g})")
    shape = (geometry.n_views, geometry.n_detector_cells)
    mu = np.stack([fbp_reconstruct(geometry, -Q_bar[m].reshape(shape)) for m in range(M)])
    coef, *_ = np.linalg.lstsq(phi_bar, mu.reshape(M, -1), rcond=None)
    F = positive(coef.reshape((N,) + tuple(geometry.image_shape)))
    diag = Diagnostics(_names(basis, truth))
    _record(diag, 1, F, truth, [None] * N)
    return MaterialMaps(F, diag.names), diag


def reconstruct(Q_bar, A, model, basis, cfg, truth=None, geometry=None, callback=None):
    """Dispatch on ``cfg.method``."""
    if cfg.method == "fbp-direct":
        if geometry is None:
            raise ValueError("fbp-direct needs the scan geometry")
        return run_fbp_direct(Q_bar, A, geometry, model, basis, truth)
    runner = {"msart": run_msart, "tvmr": run_tvmr, "nlmmr": run_nlmmr, "bmfmr": run_bmfmr}[cfg.method]
    return runner(Q_bar, A, model, basis, cfg, truth, callback)
