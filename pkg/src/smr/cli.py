"""Command line entry point: ``smr {simulate,reconstruct,metrics,decompose-oracle}``."""
import argparse
import csv
import logging
import sys
from pathlib import Path

from .config import check_method, load_config, parse_window
from .errors import ConfigError, DataError
from .io import read_sinogram, write_image, write_manifest, write_sinogram
from .metrics import MetricsReport
from .phantom import DEFAULT_MATERIALS, MaterialMaps, load_maps
from .solvers import METHODS

log = logging.getLogger("smr")


def _parser():
    p = argparse.ArgumentParser(prog="smr", description="Spectral CT one-step material reconstruction")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, type=Path)
        sp.add_argument("--output", type=Path)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--noise", choices=("on", "off"))

    sim = sub.add_parser("simulate", help="phantom -> multi-bin sinogram")
    common(sim)

    rec = sub.add_parser("reconstruct", help="sinogram -> material maps and diagnostics")
    common(rec)
    rec.add_argument("--method", help=f"one of: {', '.join(METHODS)}")
    rec.add_argument("--iterations", type=int)
    rec.add_argument("--input", type=Path, help="sinogram file (default: OUTPUT/sinogram.smr)")
    rec.add_argument("--truth", type=Path, help="ground-truth maps for per-iteration metrics")
    rec.add_argument("--window", action="append", default=[], metavar="MATERIAL=LO,HI",
                     help="PGM display window for one material (repeatable)")

    met = sub.add_parser("metrics", help="maps + truth -> report CSV")
    met.add_argument("--maps", required=True, type=Path)
    met.add_argument("--truth", required=True, type=Path)
    met.add_argument("--output", type=Path, help="CSV path (default: stdout)")

    ora = sub.add_parser("decompose-oracle", help="check the decomposition fixed point against brute force")
    ora.add_argument("--seed", type=int, default=0)
    ora.add_argument("--instances", type=int, default=20)
    return p


def _load(args):
    noise = None if args.noise is None else args.noise == "on"
    if getattr(args, "method", None) is not None:
        check_method(args.method)
    windows = {}
    for item in getattr(args, "window", []):
        name, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--window: expected MATERIAL=LO,HI, got {item!r}")
        windows[name.strip()] = parse_window(value, f"--window {name.strip()}")
    cfg = load_config(args.config)
    return cfg.with_overrides(method=getattr(args, "method", None), seed=args.seed, noise=noise,
                              iterations=getattr(args, "iterations", None), output=args.output,
                              windows=windows)


def cmd_simulate(args):
    from .experiment import make_truth, manifest, setup, simulate

    cfg = _load(args)
    exp = setup(cfg)
    truth = make_truth(cfg)
    meas = simulate(exp, truth)
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    g = cfg.geometry
    write_sinogram(out / "sinogram.smr", meas.q_bar, g.n_views, g.n_detector_cells)
    write_image(out / "truth.smr", truth.data)
    write_manifest(out / "manifest.json", manifest(cfg, command="simulate", materials=list(truth.names)))
    print(f"wrote {out / 'sinogram.smr'} ({meas.n_bins} bins x {meas.n_rays} rays)")
    return 0


def cmd_reconstruct(args):
    from .experiment import final_metrics, run, setup, write_reconstruction

    cfg = _load(args)
    out = Path(cfg.output)
    src = args.input or out / "sinogram.smr"
    q_bar, n_views, n_cells = read_sinogram(src)
    g = cfg.geometry
    if (n_views, n_cells) != (g.n_views, g.n_detector_cells):
        raise DataError(f"{src}: sinogram is {n_views}x{n_cells}, geometry expects {g.n_views}x{g.n_detector_cells}")
    if q_bar.shape[0] != len(cfg.bin_edges) - 1:
        raise DataError(f"{src}: {q_bar.shape[0]} bins, config defines {len(cfg.bin_edges) - 1}")
    truth_path = args.truth or (out / "truth.smr" if (out / "truth.smr").exists() and args.input is None else None)
    truth = None
    if truth_path is not None:
        J2, J1 = g.image_shape
        truth = load_maps(truth_path, len(cfg.material_names), J1, J2, cfg.material_names)
    exp = setup(cfg)
    maps, diag = run(exp, q_bar, truth)
    write_reconstruction(out, maps, diag, cfg)
    for row in final_metrics(diag):
        if row["rmse"] is not None:
            print(f"{row['material']}: rmse={row['rmse']:.6g} psnr={row['psnr']:.4g} ssim={row['ssim']:.4f}")
    print(f"wrote {out / 'maps.smr'}")
    return 0


def cmd_metrics(args):
    truth = load_maps(args.truth)
    maps = load_maps(args.maps)
    if maps.data.shape != truth.data.shape:
        raise DataError(f"maps {maps.data.shape} and truth {truth.data.shape} differ in shape")
    names = truth.names if truth.n_materials == len(DEFAULT_MATERIALS) else None
    report = MetricsReport.compare(MaterialMaps(maps.data, names), MaterialMaps(truth.data, names))
    fh = open(args.output, "w", newline="") if args.output else sys.stdout
    try:
        writer = csv.DictWriter(fh, fieldnames=["material", "rmse", "psnr", "ssim"])
        writer.writeheader()
        for row in report.rows():
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def cmd_decompose_oracle(args):
    from .oracle import fixed_point_check

    results = fixed_point_check(n_instances=args.instances, seed=args.seed)
    ok = True
    for r in results:
        good = r["error"] <= 1e-3 and r["min_eig"] >= r["lam"]
        ok &= good
        print(f"instance {r['index']:2d}: |fixed point - brute force| = {r['error']:.2e}, "
              f"min eig = {r['min_eig']:.3e} {'PASS' if good else 'FAIL'}")
    print("decompose-oracle:", "PASS" if ok else "FAIL")
    return 0 if ok else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "reconstruct": cmd_reconstruct,
    "metrics": cmd_metrics,
    "decompose-oracle": cmd_decompose_oracle,
}


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, DataError, ValueError, OSError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"smr {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
