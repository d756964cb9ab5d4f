"""Time the compiled kernels against the numpy fallback.

Run ``python3 benchmarks/bench_kernels.py [--size 128] [--repeat 3]``.
"""
import argparse
import time

import numpy as np

from smr._backend import get_kernels
from smr.bm3d_frame import Bm3dParams, block_match
from smr.decomposition import decompose_step
from smr.geometry import build_geometry, build_system_matrix, forward_project
from smr.phantom import desk_phantom
from smr.spectral import data_path, load_basis_attenuation, load_spectrum, log_forward

BINS = (16, 22, 25, 28, 31, 34, 37, 41, 50)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    n = args.size
    try:
        get_kernels("cython")
        backends = ["cython", "python"]
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")
        backends = ["python"]

    g = build_geometry(dict(sdd=180, sod=132, cells=n, pitch=51.2 / n, views=n, img=n, px=38.4 / n))
    model = load_spectrum(data_path("spectrum_kramers_50kvp.txt"), BINS)
    basis = load_basis_attenuation([data_path(f"attenuation_{m}.txt") for m in ("bone", "water", "iodine")],
                                   model.grid)
    A = build_system_matrix(g)
    P = forward_project(A, desk_phantom(n).data)
    Q = log_forward(model, basis, P * 1.02)
    img = desk_phantom(n).data[1] + np.random.default_rng(0).normal(0, 0.05, (n, n))
    params = Bm3dParams()

    cases = {
        f"trace_rays ({g.n_rays} rays, {n}x{n})": lambda b: build_system_matrix(g, backend=b),
        f"decompose_rays ({g.n_rays} rays, 8 bins)": lambda b: decompose_step(P, Q, model, basis, 1.0, 1e-6, backend=b),
        f"block_match ({n}x{n}, window 39)": lambda b: block_match(img, params, backend=b),
    }
    print(f"{'kernel':44s}" + "".join(f"{b:>12s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name, fn in cases.items():
        t = [best_of(lambda: fn(b), args.repeat) for b in backends]
        row = f"{name:44s}" + "".join(f"{x:11.3f}s" for x in t)
        if len(t) == 2:
            row += f"{t[1] / t[0]:11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
