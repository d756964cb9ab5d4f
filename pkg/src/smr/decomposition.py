"""Per-ray Taylor-linearized decomposition of multi-bin log data into material line integrals.

For one ray with line integrals ``p`` (N,) and the current estimate ``p_k``,
the model is linearized as ``q(p) ~ q_k - (Theta / S)(p - p_k)``.  The
S-weighted residual ``S (q_bar - q(p)) = r + Theta (p - p_k)`` with
``r = S (q_bar - q_k)`` is what the update minimizes, together with the
coupling term ``lam * ||anchor - p||^2`` that ties P to the projections of
the current material maps.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import minimize

from ._backend import get_kernels, n_threads
from .spectral import EXP_FLOOR


@dataclass(frozen=True, eq=False)
class RayLinearization:
    """Theta (..., M, N), S (..., M) and q = ln S (..., M) at the expansion point.

    A leading ray axis is allowed; ``linearize`` produces single rays.
    """

    Theta: np.ndarray
    S: np.ndarray
    q: np.ndarray

    def __getitem__(self, ray):
        return RayLinearization(self.Theta[ray], self.S[ray], self.q[ray])


def _weighted_exp(model, basis, P):
    # (L, I) attenuation factors times (M, I) spectral weights -> (L, M, I)
    x = -(P.T @ basis.phi)
    e = np.where(x < EXP_FLOOR, 0.0, np.exp(np.maximum(x, EXP_FLOOR)))
    return model.sw[None, :, :] * e[:, None, :]


def linearize(model, basis, p_col):
    """Theta, S and q for one ray at ``p_col``."""
    p = np.asarray(p_col, dtype=np.float64).reshape(-1, 1)
    w = _weighted_exp(model, basis, p)[0]
    S = w.sum(axis=1)
    return RayLinearization(w @ basis.phi.T, S, np.log(S))


def linearize_all(model, basis, P, chunk=4096):
    """Batched ``linearize`` over the columns of P (N, L); leading axis is the ray."""
    P = np.asarray(P, dtype=np.float64)
    N, L = P.shape
    M = model.n_bins
    Theta = np.empty((L, M, N))
    S = np.empty((L, M))
    for start in range(0, L, chunk):
        cols = slice(start, min(start + chunk, L))
        w = _weighted_exp(model, basis, P[:, cols])
        S[cols] = w.sum(axis=2)
        Theta[cols] = w @ basis.phi.T
    return RayLinearization(Theta, S, np.log(S))


def normal_matrix(lin, lam):
    N = lin.Theta.shape[-1]
    return lin.Theta.T @ lin.Theta + lam * np.eye(N)


def update_ray(p_col, lin, q_bar, beta1, lam, anchor=None):
    """One relaxed regularized Gauss-Newton step for a single ray.

    ``anchor`` is the coupling target (the ray's projection of the current
    maps); it defaults to ``p_col`` itself, which makes the coupling
    gradient vanish.
    """
    p = np.asarray(p_col, dtype=np.float64)
    anchor = p if anchor is None else np.asarray(anchor, dtype=np.float64)
    r = lin.S * (np.asarray(q_bar, dtype=np.float64) - lin.q)
    grad = lin.Theta.T @ r + lam * (p - anchor)
    d = cho_solve(cho_factor(normal_matrix(lin, lam)), grad)
    return p - beta1 * d


def decompose_step(P, Q_bar, model, basis, beta1, lam, anchor=None, with_objective=False,
                   backend=None):
    """Update every ray of P (N, L) once against data Q_bar (M, L).

    Returns the new P, or ``(P_new, y)`` with the per-ray linearized
    objective at the new point when ``with_objective`` is set.
    """
    P = np.ascontiguousarray(P, dtype=np.float64)
    Q_bar = np.ascontiguousarray(Q_bar, dtype=np.float64)
    if P.ndim != 2 or Q_bar.ndim != 2 or P.shape[1] != Q_bar.shape[1]:
        raise ValueError(f"P {P.shape} and Q_bar {Q_bar.shape} must share the ray axis")
    if P.shape[0] != basis.n_materials or Q_bar.shape[0] != model.n_bins:
        raise ValueError(
            f"expected P with {basis.n_materials} rows and Q_bar with {model.n_bins} rows, "
            f"got {P.shape[0]} and {Q_bar.shape[0]}")
    anchor = P if anchor is None else np.ascontiguousarray(anchor, dtype=np.float64)
    if anchor.shape != P.shape:
        raise ValueError(f"anchor shape {anchor.shape} does not match P {P.shape}")
    P_out = np.empty_like(P)
    y = np.empty(P.shape[1])
    kern = get_kernels(backend)
    kern.decompose_rays(P, Q_bar, anchor, np.ascontiguousarray(basis.phi), np.ascontiguousarray(model.sw),
                        model.band_lo, model.band_hi, float(beta1), float(lam), P_out, y, n_threads())
    return (P_out, y) if with_objective else P_out


def ray_objective(p, lin, q_bar, p_prev, f_proj, lam):
    """Linearized objective Y of a single ray, evaluated at ``p``."""
    p = np.asarray(p, dtype=np.float64)
    resid = lin.S * (np.asarray(q_bar) - lin.q) + lin.Theta @ (p - np.asarray(p_prev))
    return float(resid @ resid + lam * np.sum((np.asarray(f_proj) - p) ** 2))


def brute_force_minimize_Y(lin, q_bar, P_prev, F_proj, lam, grid=None):
    """Exhaustive grid search over a box, refined by Powell's conjugate-direction search.

    Only evaluates the objective; never uses its gradient or normal equations.
    ``grid = (lo, hi, n)`` with per-dimension bounds; the default box is
    centered on ``P_prev`` with half-width ``max(1, 2|P_prev|)``.
    """
    p_prev = np.asarray(P_prev, dtype=np.float64)
    N = p_prev.size
    if grid is None:
        half = np.maximum(1.0, 2.0 * np.abs(p_prev))
        grid = (p_prev - half, p_prev + half, 201)
    lo, hi, n = grid
    lo = np.broadcast_to(np.asarray(lo, dtype=np.float64), (N,))
    hi = np.broadcast_to(np.asarray(hi, dtype=np.float64), (N,))
    axes = [np.linspace(lo[k], hi[k], int(n)) for k in range(N)]
    points = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, N)

    base = lin.S * (np.asarray(q_bar) - lin.q)
    resid = base[None, :] + (points - p_prev) @ lin.Theta.T
    values = np.sum(resid ** 2, axis=1) + lam * np.sum((np.asarray(F_proj) - points) ** 2, axis=1)
    start = points[np.argmin(values)]

    res = minimize(ray_objective, start, args=(lin, q_bar, p_prev, F_proj, lam), method="Powell",
                   bounds=list(zip(lo, hi)), options={"xtol": 1e-12, "ftol": 1e-16, "maxiter": 100000})
    return res.x if res.fun <= values.min() else start
