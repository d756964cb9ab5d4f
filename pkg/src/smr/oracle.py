"""Fixed point of the per-ray update versus brute-force minimization of the linearized objective."""
import numpy as np

from .decomposition import brute_force_minimize_Y, linearize, normal_matrix, update_ray
from .spectral import data_path, load_basis_attenuation, load_spectrum, log_forward

BINS = (16, 22, 25, 28, 31, 34, 37, 41, 50)


def tiny_instance():
    """Built-in 8-bin spectrum with a bone/water basis."""
    model = load_spectrum(data_path("spectrum_kramers_50kvp.txt"), BINS)
    basis = load_basis_attenuation([data_path("attenuation_bone.txt"), data_path("attenuation_water.txt")],
                                   model.grid, ["bone", "water"])
    return model, basis


def fixed_point(model, basis, q_bar, anchor, lam, beta1=1.0, tol=1e-13, max_iter=5000):
    """Iterate update_ray, relinearizing each step, until the step is below ``tol``."""
    p = np.zeros(basis.n_materials)
    for _ in range(max_iter):
        p_new = update_ray(p, linearize(model, basis, p), q_bar, beta1, lam, anchor=anchor)
        if np.max(np.abs(p_new - p)) < tol:
            return p_new
        p = p_new
    return p


def fixed_point_check(n_instances=20, seed=0, lam=0.002, box=((0.0, 0.0), (12.0, 60.0), 201)):
    """Per instance: distance between the iterated fixed point and the brute-force minimizer."""
    model, basis = tiny_instance()
    rng = np.random.default_rng(seed)
    out = []
    for index in range(n_instances):
        p_true = np.array([rng.uniform(0.0, 8.0), rng.uniform(0.0, 40.0)])
        q_bar = log_forward(model, basis, p_true[:, None])[:, 0] + rng.normal(0.0, 3e-3, model.n_bins)
        anchor = p_true + rng.normal(0.0, 1.0, 2)
        p_star = fixed_point(model, basis, q_bar, anchor, lam)
        lin = linearize(model, basis, p_star)
        best = brute_force_minimize_Y(lin, q_bar, p_star, anchor, lam, grid=box)
        out.append({
            "index": index,
            "fixed_point": p_star,
            "brute_force": best,
            "error": float(np.max(np.abs(best - p_star))),
            "min_eig": float(np.linalg.eigvalsh(normal_matrix(lin, lam)).min()),
            "lam": lam,
        })
    return out
