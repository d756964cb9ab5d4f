"""Image quality metrics and objective evaluation."""
import math
from dataclasses import dataclass, field

import numpy as np

from .geometry import forward_project


def _pair(f, f_star):
    f = np.asarray(f, dtype=np.float64)
    f_star = np.asarray(f_star, dtype=np.float64)
    if f.shape != f_star.shape:
        raise ValueError(f"shape mismatch: {f.shape} vs {f_star.shape}")
    return f, f_star


def rmse(f, f_star):
    f, f_star = _pair(f, f_star)
    return math.sqrt(float(np.mean((f - f_star) ** 2)))


def psnr(f, f_star):
    """20 log10(max(reference) / rmse); +inf for identical images."""
    err = rmse(f, f_star)
    if err == 0:
        return math.inf
    return 20.0 * math.log10(float(np.max(f_star)) / err)


def ssim(f, f_star, e1=None, e2=None):
    """Whole-image SSIM; constants default to (0.01 max)^2 and (0.03 max)^2 of the reference."""
    f, f_star = _pair(f, f_star)
    peak = float(np.max(np.abs(f_star)))
    e1 = (0.01 * peak) ** 2 if e1 is None else e1
    e2 = (0.03 * peak) ** 2 if e2 is None else e2
    if peak == 0 and e1 == 0 and e2 == 0:
        return 1.0 if not np.any(f) else 0.0
    if np.array_equal(f, f_star):
        return 1.0
    cf, cs = f.mean(), f_star.mean()
    df, ds = f - cf, f_star - cs
    vf, vs, cov = np.mean(df * df), np.mean(ds * ds), np.mean(df * ds)
    den = (cf ** 2 + cs ** 2 + e1) * (vf + vs + e2)
    if den == 0:
        # every statistic underflowed and the images are not identical
        return 0.0
    return float((2 * cf * cs + e1) * (2 * cov + e2) / den)


def decomposition_objective(P, P_prev, lins, Q_bar, F_proj, lam):
    """Sum over rays of the linearized decomposition objective.

    ``lins`` is a batched RayLinearization (leading ray axis) taken at P_prev;
    P, P_prev, F_proj are (N, L) and Q_bar is (M, L).
    """
    P, P_prev, F_proj, Q_bar = (np.asarray(a, dtype=np.float64) for a in (P, P_prev, F_proj, Q_bar))
    if not (P.shape == P_prev.shape == F_proj.shape) or Q_bar.shape[1] != P.shape[1]:
        raise ValueError("P, P_prev, F_proj and Q_bar shapes disagree")
    if lins.Theta.shape[0] != P.shape[1]:
        raise ValueError("one linearization per ray is required")
    resid = lins.S * (Q_bar.T - lins.q) + np.einsum("lmn,nl->lm", lins.Theta, P - P_prev)
    return float(np.sum(resid ** 2) + lam * np.sum((F_proj - P) ** 2))


def bmfmr_objective(f_n, g_n, t_n, P_row, A, gamma_n, tau_n, spectrum_of_g):
    """Data misfit + coupling + tau times the coefficient count of g's spectrum."""
    f_n, g_n, t_n = (np.asarray(a, dtype=np.float64) for a in (f_n, g_n, t_n))
    if not f_n.shape == g_n.shape == t_n.shape:
        raise ValueError("f, g and t must share one shape")
    resid = forward_project(A, f_n) - np.asarray(P_row, dtype=np.float64)
    nonzero = 0 if spectrum_of_g is None else spectrum_of_g.nonzero_count()
    return float(resid @ resid + gamma_n * np.sum((f_n - g_n - t_n) ** 2) + tau_n * nonzero)


@dataclass
class MetricsReport:
    names: tuple
    rmse: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)

    @classmethod
    def compare(cls, maps, truth):
        rep = cls(tuple(truth.names))
        for n in range(truth.n_materials):
            rep.rmse.append(rmse(maps.data[n], truth.data[n]))
            rep.psnr.append(psnr(maps.data[n], truth.data[n]))
            rep.ssim.append(ssim(maps.data[n], truth.data[n]))
        return rep

    def rows(self):
        for n, name in enumerate(self.names):
            yield {"material": name, "rmse": self.rmse[n], "psnr": self.psnr[n], "ssim": self.ssim[n]}
