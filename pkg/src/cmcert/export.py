"""Point clouds of the certified region in original coordinates, for plotting only.

Points are pulled back by the numerical inverse of ``phi`` (approximate
inverse polished by Newton steps).  Nothing here is rigorous, and every
file says so in its header.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

WATERMARK = ("# NON-RIGOROUS plotting aid: points pulled back with a numerical inverse of phi; "
             "not part of the certificate")
EXPORT_COLUMNS = ("set", "theta1", "theta2", "x", "y", "X", "Y", "PX", "PY")


def region_samples(radius: float, r: float, n_angles: int, n_fiber: int) -> np.ndarray:
    """Aligned points on ``circle(radius) x [-r, r]^2``: ``n_angles`` angles times an ``n_fiber^2`` grid."""
    if n_angles <= 0 or n_fiber <= 0:
        return np.zeros((0, 4))
    th = 2.0 * np.pi * np.arange(n_angles) / n_angles
    f = np.linspace(-r, r, n_fiber) if n_fiber > 1 else np.zeros(1)
    T, FX, FY = np.meshgrid(th, f, f, indexing="ij")
    T, FX, FY = T.ravel(), FX.ravel(), FY.ravel()
    return np.stack([radius * np.cos(T), radius * np.sin(T), FX, FY], -1)


def pull_back(phi, p: np.ndarray) -> np.ndarray:
    if len(p) == 0:
        return np.zeros((0, 4))
    return phi.inverse_newton(p)


def write_cloud(path, label: str, p: np.ndarray, X: np.ndarray, extra_header=()):
    """CSV with the watermark, optional ``# key: value`` lines, then :data:`EXPORT_COLUMNS`."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(WATERMARK + "\n")
        for line in extra_header:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(EXPORT_COLUMNS)
        for a, b in zip(p, X):
            w.writerow([label] + [repr(float(v)) for v in a] + [repr(float(v)) for v in b])
    return path


def read_cloud(path):
    """Inverse of :func:`write_cloud`: ``(labels, aligned (n,4), original (n,4))``."""
    rows = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    data = list(csv.reader(rows))[1:]
    labels = [d[0] for d in data]
    arr = np.array([[float(v) for v in d[1:]] for d in data]).reshape(-1, 8)
    return labels, arr[:, :4], arr[:, 4:]


def export_region(phi, R: float, r: float, v: float, out_dir, n_angles: int = 360, n_fiber: int = 3):
    """Write ``region_inner.csv`` (circle ``R - v``) and ``region_outer.csv`` (circle ``R``).

    Returns the two paths and the worst round-trip error ``|phi(X) - p|``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths, err = [], 0.0
    for name, rad in (("inner", R - v), ("outer", R)):
        p = region_samples(rad, r, n_angles, n_fiber)
        X = pull_back(phi, p)
        if len(p):
            err = max(err, float(np.max(np.abs(phi(X) - p))))
        hdr = (f"radius: {rad!r}", f"r: {r!r}", f"mu: {phi.mu!r}", f"order: {phi.order}")
        paths.append(write_cloud(out / f"region_{name}.csv", name, p, X, hdr))
    return paths, err
