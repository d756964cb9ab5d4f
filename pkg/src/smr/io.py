"""File formats: raw SMR1 stacks, 16-bit PGM previews, convergence CSV, run manifests."""
import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"SMR1"
_HEADER = struct.Struct("<4sIII")


def write_image(path, stack):
    """Write a (N, J2, J1) stack (or one 2-D plane) as header + little-endian float64."""
    arr = np.asarray(stack, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise DataError(f"expected a 2-D image or 3-D stack, got shape {arr.shape}")
    n, j2, j1 = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, n, j1, j2))
        fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def read_image(path, expect=None):
    """Read a raw stack as (N, J2, J1).  ``expect=(N, J1, J2)`` checks the header."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from exc
    if len(raw) < _HEADER.size:
        raise DataError(f"{path}: file too short for header ({len(raw)} bytes)")
    magic, n, j1, j2 = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise DataError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if expect is not None and tuple(expect) != (n, j1, j2):
        raise DataError(f"{path}: header counts {(n, j1, j2)} do not match expected {tuple(expect)}")
    want = _HEADER.size + 8 * n * j1 * j2
    if len(raw) != want:
        raise DataError(f"{path}: expected {want} bytes, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(n, j2, j1).astype(np.float64)


def write_sinogram(path, q_bar, n_views, n_cells):
    q = np.asarray(q_bar, dtype=np.float64)
    write_image(path, q.reshape(q.shape[0], n_views, n_cells))


def read_sinogram(path):
    """Returns (M, L) data plus (n_views, n_cells)."""
    arr = read_image(path)
    return arr.reshape(arr.shape[0], -1), arr.shape[1], arr.shape[2]


def write_pgm(path, image, window=None):
    """16-bit binary PGM of one plane, linearly mapped from ``window=(lo, hi)``."""
    img = np.asarray(image, dtype=np.float64)
    lo, hi = window if window is not None else (float(img.min()), float(img.max()))
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    # flip so +y is up in viewers
    pix = np.clip(np.rint((img[::-1] - lo) * scale), 0, 65535).astype(">u2")
    with open(path, "wb") as fh:
        fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n65535\n".encode("ascii"))
        fh.write(pix.tobytes())


CONVERGENCE_HEADER = ["iteration", "material", "rmse", "psnr", "ssim", "objective"]


def write_convergence(path, rows):
    """Rows are dicts (or tuples) with the CONVERGENCE_HEADER fields."""
    rows = list(rows)
    if not rows:
        raise DataError("no diagnostics to write")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CONVERGENCE_HEADER)
        for row in rows:
            if isinstance(row, dict):
                row = [row.get(k) for k in CONVERGENCE_HEADER]
            writer.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in row])


def read_convergence(path):
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            row = {"iteration": int(rec["iteration"]), "material": rec["material"]}
            for key in CONVERGENCE_HEADER[2:]:
                row[key] = float(rec[key]) if rec[key] else math.nan
            out.append(row)
    return out


def write_manifest(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
