# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: ray tracing, per-ray decomposition, block matching.

Every kernel parallelizes over independent outputs (rays or reference
blocks); each output is computed by exactly one thread in a fixed order, so
results do not depend on the thread count.
"""
import numpy as np

from cython.parallel cimport parallel, prange
from libc.math cimport exp, floor, log, sqrt, INFINITY
from libc.stdlib cimport free, malloc

BACKEND = "cython"


cdef inline double _plane_alpha(double origin, double step, Py_ssize_t k,
                                double s, double d) noexcept nogil:
    return (origin + k * step - s) / d


cdef Py_ssize_t _trace(double sx, double sy, double ex, double ey,
                       Py_ssize_t nx, Py_ssize_t ny, double xmin, double ymin,
                       double px, int* idx_out, double* len_out) noexcept nogil:
    cdef double dx = ex - sx
    cdef double dy = ey - sy
    cdef double ray_len = sqrt(dx * dx + dy * dy)
    cdef double xmax = xmin + nx * px
    cdef double ymax = ymin + ny * px
    cdef double amin = 0.0, amax = 1.0, a0, a1
    cdef double ax = INFINITY, ay = INFINITY, a_prev, a_next, mid
    cdef Py_ssize_t kx = 0, ky = 0, sx_step = 0, sy_step = 0, ix, iy, count = 0

    if ray_len == 0.0:
        return 0
    if dx != 0.0:
        a0 = (xmin - sx) / dx
        a1 = (xmax - sx) / dx
        if a0 > a1:
            a0, a1 = a1, a0
        if a0 > amin:
            amin = a0
        if a1 < amax:
            amax = a1
    elif sx < xmin or sx > xmax:
        return 0
    if dy != 0.0:
        a0 = (ymin - sy) / dy
        a1 = (ymax - sy) / dy
        if a0 > a1:
            a0, a1 = a1, a0
        if a0 > amin:
            amin = a0
        if a1 < amax:
            amax = a1
    elif sy < ymin or sy > ymax:
        return 0
    if amax <= amin:
        return 0

    # first x / y plane crossed strictly after amin
    if dx > 0.0:
        sx_step = 1
        kx = <Py_ssize_t>floor((sx + amin * dx - xmin) / px)
        if kx < 0:
            kx = 0
        if kx > nx:
            kx = nx
        while kx > 0 and _plane_alpha(xmin, px, kx - 1, sx, dx) > amin:
            kx -= 1
        while kx <= nx and _plane_alpha(xmin, px, kx, sx, dx) <= amin:
            kx += 1
    elif dx < 0.0:
        sx_step = -1
        kx = <Py_ssize_t>floor((sx + amin * dx - xmin) / px) + 1
        if kx < 0:
            kx = 0
        if kx > nx:
            kx = nx
        while kx < nx and _plane_alpha(xmin, px, kx + 1, sx, dx) > amin:
            kx += 1
        while kx >= 0 and _plane_alpha(xmin, px, kx, sx, dx) <= amin:
            kx -= 1
    if sx_step != 0 and 0 <= kx <= nx:
        ax = _plane_alpha(xmin, px, kx, sx, dx)

    if dy > 0.0:
        sy_step = 1
        ky = <Py_ssize_t>floor((sy + amin * dy - ymin) / px)
        if ky < 0:
            ky = 0
        if ky > ny:
            ky = ny
        while ky > 0 and _plane_alpha(ymin, px, ky - 1, sy, dy) > amin:
            ky -= 1
        while ky <= ny and _plane_alpha(ymin, px, ky, sy, dy) <= amin:
            ky += 1
    elif dy < 0.0:
        sy_step = -1
        ky = <Py_ssize_t>floor((sy + amin * dy - ymin) / px) + 1
        if ky < 0:
            ky = 0
        if ky > ny:
            ky = ny
        while ky < ny and _plane_alpha(ymin, px, ky + 1, sy, dy) > amin:
            ky += 1
        while ky >= 0 and _plane_alpha(ymin, px, ky, sy, dy) <= amin:
            ky -= 1
    if sy_step != 0 and 0 <= ky <= ny:
        ay = _plane_alpha(ymin, px, ky, sy, dy)

    a_prev = amin
    while True:
        a_next = amax
        if ax < a_next:
            a_next = ax
        if ay < a_next:
            a_next = ay
        if a_next > a_prev:
            mid = 0.5 * (a_prev + a_next)
            ix = <Py_ssize_t>floor((sx + mid * dx - xmin) / px)
            iy = <Py_ssize_t>floor((sy + mid * dy - ymin) / px)
            if ix < 0:
                ix = 0
            elif ix >= nx:
                ix = nx - 1
            if iy < 0:
                iy = 0
            elif iy >= ny:
                iy = ny - 1
            if idx_out != NULL:
                idx_out[count] = <int>(iy * nx + ix)
                len_out[count] = (a_next - a_prev) * ray_len
            count += 1
        if a_next >= amax:
            break
        if ax == a_next:
            kx += sx_step
            ax = _plane_alpha(xmin, px, kx, sx, dx) if 0 <= kx <= nx else INFINITY
        if ay == a_next:
            ky += sy_step
            ay = _plane_alpha(ymin, px, ky, sy, dy) if 0 <= ky <= ny else INFINITY
        a_prev = a_next
    return count


def trace_rays(const double[::1] sx, const double[::1] sy,
               const double[::1] ex, const double[::1] ey,
               Py_ssize_t nx, Py_ssize_t ny, double xmin, double ymin, double px,
               int nthreads=1):
    """Exact grid-intersection lengths for every ray, as CSR arrays."""
    cdef Py_ssize_t n_rays = sx.shape[0], l
    counts_arr = np.zeros(n_rays, dtype=np.int64)
    cdef long long[::1] counts = counts_arr
    for l in prange(n_rays, nogil=True, num_threads=nthreads, schedule="static"):
        counts[l] = _trace(sx[l], sy[l], ex[l], ey[l], nx, ny, xmin, ymin, px, NULL, NULL)

    indptr_arr = np.zeros(n_rays + 1, dtype=np.int64)
    np.cumsum(counts_arr, out=indptr_arr[1:])
    nnz = int(indptr_arr[-1])
    indices_arr = np.empty(nnz, dtype=np.int32)
    data_arr = np.empty(nnz, dtype=np.float64)
    cdef long long[::1] indptr = indptr_arr
    cdef int[::1] indices = indices_arr
    cdef double[::1] data = data_arr
    if nnz == 0:
        return indptr_arr, indices_arr, data_arr
    cdef int* idx_base = &indices[0]
    cdef double* len_base = &data[0]
    for l in prange(n_rays, nogil=True, num_threads=nthreads, schedule="static"):
        if counts[l] > 0:
            _trace(sx[l], sy[l], ex[l], ey[l], nx, ny, xmin, ymin, px,
                   idx_base + indptr[l], len_base + indptr[l])
    return indptr_arr, indices_arr, data_arr


cdef void _decompose_one(Py_ssize_t l, const double[:, ::1] P, const double[:, ::1] Qbar,
                         const double[:, ::1] anchor, const double[:, ::1] phi,
                         const double[:, ::1] sw, const long long[::1] lo,
                         const long long[::1] hi, double beta1, double lam,
                         double[:, ::1] P_out, double[::1] y_out, double* buf) noexcept nogil:
    cdef Py_ssize_t N = P.shape[0], M = Qbar.shape[0]
    cdef Py_ssize_t m, n, n2, i, k
    cdef double x, e, w, acc, resid, y
    cdef double* p = buf
    cdef double* S = p + N
    cdef double* r = S + M
    cdef double* th = r + M          # M x N
    cdef double* g = th + M * N
    cdef double* H = g + N           # N x N, overwritten by its Cholesky factor
    cdef double* d = H + N * N

    for n in range(N):
        p[n] = P[n, l]
    for m in range(M):
        S[m] = 0.0
        for n in range(N):
            th[m * N + n] = 0.0
        for i in range(lo[m], hi[m]):
            x = 0.0
            for n in range(N):
                x = x - phi[n, i] * p[n]
            if x < -700.0:
                continue
            e = exp(x)
            w = sw[m, i] * e
            S[m] += w
            for n in range(N):
                th[m * N + n] += phi[n, i] * w
        if S[m] > 1e-300:
            r[m] = S[m] * (Qbar[m, l] - log(S[m]))
        else:
            r[m] = S[m] * (Qbar[m, l] - log(1e-300))

    # gradient of the linearized objective at p; the anchor term vanishes when anchor == p
    for n in range(N):
        acc = 0.0
        for m in range(M):
            acc += th[m * N + n] * r[m]
        g[n] = acc + lam * (p[n] - anchor[n, l])
        for n2 in range(N):
            acc = 0.0
            for m in range(M):
                acc += th[m * N + n] * th[m * N + n2]
            H[n * N + n2] = acc
        H[n * N + n] += lam

    # in-place Cholesky, H = C C^T with C lower triangular
    for n in range(N):
        acc = H[n * N + n]
        for k in range(n):
            acc -= H[n * N + k] * H[n * N + k]
        H[n * N + n] = sqrt(acc)
        for n2 in range(n + 1, N):
            acc = H[n2 * N + n]
            for k in range(n):
                acc -= H[n2 * N + k] * H[n * N + k]
            H[n2 * N + n] = acc / H[n * N + n]
    for n in range(N):
        acc = g[n]
        for k in range(n):
            acc -= H[n * N + k] * d[k]
        d[n] = acc / H[n * N + n]
    for n in range(N - 1, -1, -1):
        acc = d[n]
        for k in range(n + 1, N):
            acc -= H[k * N + n] * d[k]
        d[n] = acc / H[n * N + n]

    for n in range(N):
        P_out[n, l] = p[n] - beta1 * d[n]

    y = 0.0
    for m in range(M):
        resid = r[m]
        for n in range(N):
            resid += th[m * N + n] * (P_out[n, l] - p[n])
        y += resid * resid
    for n in range(N):
        x = anchor[n, l] - P_out[n, l]
        y += lam * x * x
    y_out[l] = y


def decompose_rays(const double[:, ::1] P, const double[:, ::1] Qbar,
                   const double[:, ::1] anchor, const double[:, ::1] phi,
                   const double[:, ::1] sw, const long long[::1] lo,
                   const long long[::1] hi, double beta1, double lam,
                   double[:, ::1] P_out, double[::1] y_out, int nthreads=1):
    """One regularized Gauss-Newton update of every column of P.

    Writes the updated columns into ``P_out`` and the per-ray value of the
    linearized objective at the new point into ``y_out``.
    """
    cdef Py_ssize_t N = P.shape[0], M = Qbar.shape[0], L = P.shape[1], l
    cdef Py_ssize_t bufsize = N + 2 * M + M * N + 2 * N + N * N
    cdef double* buf
    with nogil, parallel(num_threads=nthreads):
        buf = <double*> malloc(sizeof(double) * bufsize)
        for l in prange(L, schedule="static"):
            _decompose_one(l, P, Qbar, anchor, phi, sw, lo, hi, beta1, lam,
                           P_out, y_out, buf)
        free(buf)


cdef void _match_one(Py_ssize_t g, const double[:, ::1] img, Py_ssize_t B, Py_ssize_t hw,
                     double thr, Py_ssize_t kmax, const long long[:, ::1] refs,
                     long long[:, :, ::1] coords, long long[::1] counts,
                     double* best_d, long long* best_y, long long* best_x) noexcept nogil:
    cdef Py_ssize_t H = img.shape[0], W = img.shape[1]
    cdef Py_ssize_t ry = refs[g, 0], rx = refs[g, 1]
    cdef Py_ssize_t y0 = ry - hw, y1 = ry + hw, x0 = rx - hw, x1 = rx + hw
    cdef Py_ssize_t y, x, a, b, j, n_best = 0, cap = kmax - 1, size
    cdef double dist, diff, limit

    if y0 < 0:
        y0 = 0
    if x0 < 0:
        x0 = 0
    if y1 > H - B:
        y1 = H - B
    if x1 > W - B:
        x1 = W - B

    if cap == 0:
        y1 = y0 - 1
    for y in range(y0, y1 + 1):
        for x in range(x0, x1 + 1):
            if y == ry and x == rx:
                continue
            limit = thr
            if n_best == cap and best_d[cap - 1] < limit:
                limit = best_d[cap - 1]
            dist = 0.0
            for a in range(B):
                for b in range(B):
                    diff = img[ry + a, rx + b] - img[y + a, x + b]
                    dist = dist + diff * diff
                if dist > limit:
                    break
            if dist > thr:
                continue
            if n_best == cap and dist >= best_d[cap - 1]:
                continue
            # insertion after all entries with distance <= dist (raster tie-break)
            j = n_best if n_best < cap else cap - 1
            while j > 0 and best_d[j - 1] > dist:
                best_d[j] = best_d[j - 1]
                best_y[j] = best_y[j - 1]
                best_x[j] = best_x[j - 1]
                j -= 1
            best_d[j] = dist
            best_y[j] = y
            best_x[j] = x
            if n_best < cap:
                n_best += 1

    size = 1
    while size * 2 <= n_best + 1 and size * 2 <= kmax:
        size *= 2
    coords[g, 0, 0] = ry
    coords[g, 0, 1] = rx
    for j in range(1, size):
        coords[g, j, 0] = best_y[j - 1]
        coords[g, j, 1] = best_x[j - 1]
    counts[g] = size


def block_match(const double[:, ::1] img, const long long[:, ::1] refs, Py_ssize_t block,
                Py_ssize_t window, double threshold, Py_ssize_t max_group, int nthreads=1):
    """Group the most similar blocks around every reference position."""
    cdef Py_ssize_t G = refs.shape[0], g
    cdef Py_ssize_t hw = window // 2
    coords_arr = np.zeros((G, max_group, 2), dtype=np.int64)
    counts_arr = np.zeros(G, dtype=np.int64)
    cdef long long[:, :, ::1] coords = coords_arr
    cdef long long[::1] counts = counts_arr
    cdef double* best_d
    cdef long long* best_y
    cdef long long* best_x
    with nogil, parallel(num_threads=nthreads):
        best_d = <double*> malloc(sizeof(double) * max_group)
        best_y = <long long*> malloc(sizeof(long long) * max_group)
        best_x = <long long*> malloc(sizeof(long long) * max_group)
        for g in prange(G, schedule="static"):
            _match_one(g, img, block, hw, threshold, max_group, refs, coords, counts,
                       best_d, best_y, best_x)
        free(best_d)
        free(best_y)
        free(best_x)
    return coords_arr, counts_arr
