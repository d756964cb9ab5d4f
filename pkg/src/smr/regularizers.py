"""Smoothed total variation descent and non-local means filtering."""
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .bm3d_frame import estimate_sigma


@dataclass(frozen=True)
class TvParams:
    xi: float = 0.0
    smoothing_eps: float = 1e-8
    n_inner_steps: int = 10
    step_size: float = 0.2

    def __post_init__(self):
        if self.xi < 0:
            raise ValueError("xi must be nonnegative")
        if not self.smoothing_eps > 0:
            raise ValueError("smoothing_eps must be positive")
        if self.n_inner_steps < 0 or not self.step_size > 0:
            raise ValueError("n_inner_steps must be >= 0 and step_size positive")


@dataclass(frozen=True)
class NlmParams:
    patch_radius: int = 2
    window_radius: int = 5
    h: float = None
    h_scale: float = 10.0

    def __post_init__(self):
        if not self.window_radius >= self.patch_radius >= 1:
            raise ValueError("need window_radius >= patch_radius >= 1")
        if self.h is not None and not self.h > 0:
            raise ValueError("h must be positive")

    def filtering_h(self, image):
        return self.h if self.h is not None else self.h_scale * estimate_sigma(image)


def _grad(f):
    gx = np.zeros_like(f)
    gy = np.zeros_like(f)
    gx[:, :-1] = f[:, 1:] - f[:, :-1]
    gy[:-1, :] = f[1:, :] - f[:-1, :]
    return gx, gy


def tv_value(image, eps=1e-8):
    gx, gy = _grad(np.asarray(image, dtype=np.float64))
    return float(np.sqrt(gx ** 2 + gy ** 2 + eps ** 2).sum())


def tv_gradient(image, eps=1e-8):
    """Gradient of ``tv_value`` (negative divergence of the normalized gradient field)."""
    gx, gy = _grad(np.asarray(image, dtype=np.float64))
    mag = np.sqrt(gx ** 2 + gy ** 2 + eps ** 2)
    nx, ny = gx / mag, gy / mag
    out = np.zeros_like(nx)
    out[:, :-1] -= nx[:, :-1]
    out[:, 1:] += nx[:, :-1]
    out[:-1, :] -= ny[:-1, :]
    out[1:, :] += ny[:-1, :]
    return out


def tv_descent_step(image, params):
    """``n_inner_steps`` normalized gradient steps on TV with backtracking.

    Each step length is ``xi * step_size`` times the RMS-normalized gradient
    direction; it is halved until TV does not increase, so the result never
    has larger TV than the input.
    """
    f = np.array(image, dtype=np.float64)
    if params.xi == 0 or params.n_inner_steps == 0:
        return f
    eps = params.smoothing_eps
    value = tv_value(f, eps)
    for _ in range(params.n_inner_steps):
        g = tv_gradient(f, eps)
        norm = np.sqrt(np.mean(g ** 2))
        if norm == 0:
            break
        step = params.xi * params.step_size / norm
        for _ in range(30):
            trial = f - step * g
            trial_value = tv_value(trial, eps)
            if trial_value <= value:
                f, value = trial, trial_value
                break
            step /= 2.0
        else:
            break
    return f


def nlm_filter(image, params):
    """Non-local means over square patches, reflect padding at the borders."""
    f = np.asarray(image, dtype=np.float64)
    h = params.filtering_h(f)
    if h == 0:
        return f.copy()
    pr, wr = params.patch_radius, params.window_radius
    pad = np.pad(f, pr + wr, mode="reflect")
    H, W = f.shape
    num = np.zeros_like(f)
    den = np.zeros_like(f)
    core = pad[wr:wr + H + 2 * pr, wr:wr + W + 2 * pr]
    k = 2 * pr + 1
    # one pass per window offset; patch distances from box sums of squared differences
    for dy in range(-wr, wr + 1):
        for dx in range(-wr, wr + 1):
            shifted = pad[wr + dy:wr + dy + H + 2 * pr, wr + dx:wr + dx + W + 2 * pr]
            d2 = sliding_window_view((core - shifted) ** 2, (k, k)).sum(axis=(2, 3))
            w = np.exp(-d2 / h ** 2)
            num += w * shifted[pr:pr + H, pr:pr + W]
            den += w
    return num / den
