"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and semantics; used when the extension is not built or when
``SMR_BACKEND=python`` is set.  ``nthreads`` is accepted and ignored.
"""
import numpy as np

BACKEND = "python"


def _trace_one(sx, sy, ex, ey, nx, ny, xmin, ymin, px):
    dx = ex - sx
    dy = ey - sy
    ray_len = np.sqrt(dx * dx + dy * dy)
    if ray_len == 0.0:
        return None
    xmax = xmin + nx * px
    ymax = ymin + ny * px
    amin, amax = 0.0, 1.0
    if dx != 0.0:
        a0, a1 = sorted(((xmin - sx) / dx, (xmax - sx) / dx))
        amin, amax = max(amin, a0), min(amax, a1)
    elif sx < xmin or sx > xmax:
        return None
    if dy != 0.0:
        a0, a1 = sorted(((ymin - sy) / dy, (ymax - sy) / dy))
        amin, amax = max(amin, a0), min(amax, a1)
    elif sy < ymin or sy > ymax:
        return None
    if amax <= amin:
        return None

    parts = [np.array([amin, amax])]
    if dx != 0.0:
        ax = (xmin + np.arange(nx + 1) * px - sx) / dx
        parts.append(ax[(ax > amin) & (ax < amax)])
    if dy != 0.0:
        ay = (ymin + np.arange(ny + 1) * px - sy) / dy
        parts.append(ay[(ay > amin) & (ay < amax)])
    alphas = np.unique(np.concatenate(parts))
    mid = 0.5 * (alphas[:-1] + alphas[1:])
    ix = np.clip(np.floor((sx + mid * dx - xmin) / px).astype(np.int64), 0, nx - 1)
    iy = np.clip(np.floor((sy + mid * dy - ymin) / px).astype(np.int64), 0, ny - 1)
    return (iy * nx + ix).astype(np.int32), np.diff(alphas) * ray_len


def trace_rays(sx, sy, ex, ey, nx, ny, xmin, ymin, px, nthreads=1):
    """Exact grid-intersection lengths for every ray, as CSR arrays."""
    n_rays = len(sx)
    rows_idx, rows_len = [], []
    counts = np.zeros(n_rays, dtype=np.int64)
    for l in range(n_rays):
        row = _trace_one(sx[l], sy[l], ex[l], ey[l], nx, ny, xmin, ymin, px)
        if row is None:
            continue
        rows_idx.append(row[0])
        rows_len.append(row[1])
        counts[l] = len(row[0])
    indptr = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(counts, out=indptr[1:])
    if rows_idx:
        indices = np.concatenate(rows_idx)
        data = np.concatenate(rows_len)
    else:
        indices = np.empty(0, dtype=np.int32)
        data = np.empty(0, dtype=np.float64)
    return indptr, indices, data


def decompose_rays(P, Qbar, anchor, phi, sw, lo, hi, beta1, lam, P_out, y_out,
                   nthreads=1, chunk=4096):
    """One regularized Gauss-Newton update of every column of P."""
    N, L = P.shape
    M = Qbar.shape[0]
    eye = np.eye(N)
    for start in range(0, L, chunk):
        cols = slice(start, min(start + chunk, L))
        p = P[:, cols].T                                   # (l, N)
        S = np.zeros((p.shape[0], M))
        th = np.zeros((p.shape[0], M, N))
        for m in range(M):
            band = slice(lo[m], hi[m])
            x = -(p @ phi[:, band])                        # (l, I_m)
            e = np.where(x < -700.0, 0.0, np.exp(np.maximum(x, -700.0)))
            w = e * sw[m, band]
            S[:, m] = w.sum(axis=1)
            th[:, m, :] = w @ phi[:, band].T
        logS = np.log(np.maximum(S, 1e-300))
        r = S * (Qbar[:, cols].T - logS)
        g = np.einsum("lmn,lm->ln", th, r) + lam * (p - anchor[:, cols].T)
        H = np.einsum("lmn,lmk->lnk", th, th) + lam * eye
        d = np.linalg.solve(H, g[..., None])[..., 0]
        p_new = p - beta1 * d
        resid = r + np.einsum("lmn,ln->lm", th, p_new - p)
        y = (resid ** 2).sum(axis=1) + lam * ((anchor[:, cols].T - p_new) ** 2).sum(axis=1)
        P_out[:, cols] = p_new.T
        y_out[cols] = y


def block_match(img, refs, block, window, threshold, max_group, nthreads=1):
    """Group the most similar blocks around every reference position."""
    H, W = img.shape
    hw = window // 2
    patches = np.lib.stride_tricks.sliding_window_view(img, (block, block))
    G = len(refs)
    coords = np.zeros((G, max_group, 2), dtype=np.int64)
    counts = np.zeros(G, dtype=np.int64)
    for g, (ry, rx) in enumerate(refs):
        y0, y1 = max(0, ry - hw), min(H - block, ry + hw)
        x0, x1 = max(0, rx - hw), min(W - block, rx + hw)
        cand = patches[y0:y1 + 1, x0:x1 + 1]
        ref = patches[ry, rx]
        # accumulate in the same order as the compiled kernel so ties resolve identically
        dist = np.zeros(cand.shape[:2])
        for a in range(block):
            for b in range(block):
                dist += (ref[a, b] - cand[:, :, a, b]) ** 2
        yy, xx = np.meshgrid(np.arange(y0, y1 + 1), np.arange(x0, x1 + 1), indexing="ij")
        dist, yy, xx = dist.ravel(), yy.ravel(), xx.ravel()
        keep = (dist <= threshold) & ~((yy == ry) & (xx == rx))
        dist, yy, xx = dist[keep], yy[keep], xx[keep]
        order = np.argsort(dist, kind="stable")[: max_group - 1]
        size = 1
        while size * 2 <= len(order) + 1 and size * 2 <= max_group:
            size *= 2
        coords[g, 0] = (ry, rx)
        sel = order[: size - 1]
        coords[g, 1:size, 0] = yy[sel]
        coords[g, 1:size, 1] = xx[sel]
        counts[g] = size
    return coords, counts
