"""Block-matching 3-D frame: grouping, separable DCT/Haar analysis, weighted synthesis.

The analysis operator stacks matched blocks, applies an orthonormal 2-D DCT-II
to every block and an orthonormal 1-D Haar transform across the stack.  The
synthesis operator inverts both and averages overlapping block estimates
with per-group weights.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy.fft import dctn, idctn

from ._backend import get_kernels, n_threads

# Ratio of the reference toolbox's hard-threshold matching distance (3000 on
# 8-bit images with sigma=35 noise) to sigma^2.
MATCH_SCALE = 3000.0 / 35.0 ** 2


@dataclass(frozen=True)
class Bm3dParams:
    block_size: int = 8
    max_group_size: int = 16
    search_window: int = 39
    reference_step: int = 3
    match_threshold: float = None
    sigma: float = None

    def __post_init__(self):
        if self.block_size < 2:
            raise ValueError("block_size must be >= 2")
        g = self.max_group_size
        if g < 1 or g & (g - 1):
            raise ValueError("max_group_size must be a power of 2")
        if self.search_window < self.block_size:
            raise ValueError("search_window must be >= block_size")
        if self.reference_step < 1:
            raise ValueError("reference_step must be >= 1")

    def threshold_for(self, image):
        """Matching distance: explicit value, else scaled from sigma (estimated if unset)."""
        if self.match_threshold is not None:
            return float(self.match_threshold)
        sigma = estimate_sigma(image) if self.sigma is None else self.sigma
        return MATCH_SCALE * sigma ** 2 * self.block_size ** 2


@dataclass(frozen=True, eq=False)
class GroupPlan:
    """coords (G, K, 2) block corners (row, col); counts (G,) active blocks per group."""

    coords: np.ndarray
    counts: np.ndarray
    image_shape: tuple
    block_size: int


@dataclass(frozen=True, eq=False)
class GroupSpectrum:
    """coeffs (G, K, B, B); rows past ``counts[g]`` are unused padding.

    ``retained`` is None until thresholding, then the per-group count of
    kept coefficients (drives the aggregation weights).
    """

    coeffs: np.ndarray
    counts: np.ndarray
    retained: np.ndarray = None

    def nonzero_count(self):
        return int(sum(np.count_nonzero(self.coeffs[g, :k]) for g, k in enumerate(self.counts)))


def reference_positions(length, block, step):
    pos = list(range(0, length - block + 1, step))
    if pos[-1] != length - block:
        pos.append(length - block)
    return np.array(pos, dtype=np.int64)


def block_match(image, params, backend=None):
    img = np.ascontiguousarray(image, dtype=np.float64)
    B = params.block_size
    if img.shape[0] < B or img.shape[1] < B:
        raise ValueError(f"image {img.shape} smaller than block size {B}")
    ry = reference_positions(img.shape[0], B, params.reference_step)
    rx = reference_positions(img.shape[1], B, params.reference_step)
    refs = np.ascontiguousarray(np.stack(np.meshgrid(ry, rx, indexing="ij"), axis=-1).reshape(-1, 2))
    kern = get_kernels(backend)
    coords, counts = kern.block_match(img, refs, B, params.search_window, params.threshold_for(img),
                                      params.max_group_size, n_threads())
    return GroupPlan(coords, counts, img.shape, B)


def haar_matrix(n):
    """Orthonormal Haar transform matrix of size n (a power of 2)."""
    H = np.array([[1.0]])
    while H.shape[0] < n:
        k = H.shape[0]
        H = np.vstack([np.kron(H, [1.0, 1.0]), np.kron(np.eye(k), [1.0, -1.0])]) / np.sqrt(2.0)
    return H


def _gather(img, plan):
    B = plan.block_size
    off = np.arange(B)
    rows = plan.coords[..., 0][..., None, None] + off[:, None]
    cols = plan.coords[..., 1][..., None, None] + off[None, :]
    return img[rows, cols]


def _by_size(counts):
    for k in np.unique(counts):
        yield int(k), np.flatnonzero(counts == k)


def analysis(image, plan):
    img = np.asarray(image, dtype=np.float64)
    if img.shape != tuple(plan.image_shape):
        raise ValueError(f"image {img.shape} does not match plan {plan.image_shape}")
    blocks = dctn(_gather(img, plan), type=2, norm="ortho", axes=(2, 3))
    coeffs = np.zeros_like(blocks)
    for k, idx in _by_size(plan.counts):
        coeffs[idx, :k] = np.einsum("ij,gjab->giab", haar_matrix(k), blocks[idx, :k])
    return GroupSpectrum(coeffs, plan.counts.copy())


def hard_threshold(spec, tau):
    """Zero coefficients with magnitude below sqrt(tau)."""
    coeffs = np.where(np.abs(spec.coeffs) >= np.sqrt(tau), spec.coeffs, 0.0)
    retained = np.array([np.count_nonzero(coeffs[g, :k]) for g, k in enumerate(spec.counts)], dtype=np.int64)
    return GroupSpectrum(coeffs, spec.counts, retained)


def synthesis(spec, plan, image_shape=None):
    shape = tuple(plan.image_shape if image_shape is None else image_shape)
    if shape != tuple(plan.image_shape) or spec.coeffs.shape[0] != plan.coords.shape[0]:
        raise ValueError("spectrum, plan and image size disagree")
    blocks = np.zeros_like(spec.coeffs)
    for k, idx in _by_size(spec.counts):
        blocks[idx, :k] = np.einsum("ji,gjab->giab", haar_matrix(k), spec.coeffs[idx, :k])
    blocks = idctn(blocks, type=2, norm="ortho", axes=(2, 3))

    if spec.retained is None:
        weights = np.ones(len(spec.counts))
    else:
        weights = 1.0 / (1.0 + spec.retained)
    B = plan.block_size
    off = np.arange(B)
    rows = plan.coords[..., 0][..., None, None] + off[:, None]
    cols = plan.coords[..., 1][..., None, None] + off[None, :]
    flat = np.broadcast_to(rows * shape[1] + cols, blocks.shape)
    active = np.arange(blocks.shape[1])[None, :] < spec.counts[:, None]
    w = np.broadcast_to((weights[:, None] * active)[..., None, None], blocks.shape)
    size = shape[0] * shape[1]
    # bincount sums in index order, so the result does not depend on threading
    num = np.bincount(flat.ravel(), weights=(w * blocks).ravel(), minlength=size)
    den = np.bincount(flat.ravel(), weights=w.ravel(), minlength=size)
    out = np.divide(num, den, out=np.zeros(size), where=den > 0)
    return out.reshape(shape)


def shrink(image, tau, params, backend=None):
    """Denoise by grouping on ``image`` itself, hard thresholding and aggregation."""
    plan = block_match(image, params, backend)
    spec = analysis(image, plan)
    if tau > 0:
        spec = hard_threshold(spec, tau)
    return synthesis(spec, plan)


def shrink_with_spectrum(image, tau, params, backend=None):
    """As ``shrink`` but also return the thresholded spectrum and its plan."""
    plan = block_match(image, params, backend)
    spec = hard_threshold(analysis(image, plan), tau)
    return synthesis(spec, plan), spec, plan


def estimate_sigma(image):
    """Noise standard deviation from the MAD of the finest diagonal Haar details."""
    img = np.asarray(image, dtype=np.float64)
    h, w = (img.shape[0] // 2) * 2, (img.shape[1] // 2) * 2
    x = img[:h, :w]
    hh = (x[0::2, 0::2] - x[0::2, 1::2] - x[1::2, 0::2] + x[1::2, 1::2]) / 2.0
    return float(np.median(np.abs(hh)) / 0.6745)


def with_sigma(params, sigma):
    return replace(params, sigma=sigma)
