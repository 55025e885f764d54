"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 3] [--json out.json]

Each kernel runs on identical inputs under both backends; the table reports
the best wall time of ``--repeat`` runs, the speedup and the largest output
difference. A final row times a full semi-discrete solve with each backend.
"""

import argparse
import json
import time

import numpy as np
from scipy.sparse import coo_matrix

import semimatch.semidiscrete as sd
from semimatch._backend import get_kernels
from semimatch.geometry import Domain, Grid
from semimatch.heat import sample_cloud


def best_of(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def max_diff(a, b):
    if isinstance(a, tuple) and len(a) == 7:
        # laguerre_pixel_masses: the edge triplets come in backend-specific
        # order, so compare them as assembled sparse matrices
        n = len(a[2])
        ma, mb = (coo_matrix((r[5], (r[3], r[4])), shape=(n, n)).tocsr() for r in (a, b))
        return max(max_diff(a[:3], b[:3]), float(abs(ma - mb).max()))
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, float) - np.asarray(b, float))))


def cases(periodic=True):
    rng = np.random.default_rng(0)
    N, n = 256, 1024
    g = Grid(Domain.torus() if periodic else Domain.square(), N)
    c = g.flat_centers()
    sx, sy = np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1])
    X = rng.random((n, 2))
    ax, ay = np.ascontiguousarray(X[:, 0]), np.ascontiguousarray(X[:, 1])
    w = 1e-4 * rng.normal(size=n)
    pm = np.full(N * N, 1.0 / (N * N))
    f = rng.normal(size=(N, N))
    A, P = rng.normal(size=(400, 200)), rng.normal(size=(400, 200))
    ra, rx = rng.integers(0, 400, 20_000), rng.integers(0, 400, 20_000)
    return {
        f"power_top2 (N={N}, n={n})": ("power_top2", (sx, sy, ax, ay, w, periodic)),
        f"laguerre_pixel_masses (N={N}, n={n})": ("laguerre_pixel_masses", (sx, sy, g.h, ax, ay, w, pm, periodic)),
        f"quad_infconv_lines (N={N})": ("quad_infconv_lines", (f, 0.5, periodic)),
        f"ball_min (N={N}, r=6)": ("ball_min", (f, 0.5, 6, periodic)),
        "lse_entries (20k entries)": ("lse_entries", (A, P, ra, rx)),
    }


def solve_time(backend, repeat):
    g = Grid(Domain.torus(), 256)
    cloud = sample_cloud(g.domain, 1024, 0)
    saved = sd.kernels
    sd.kernels = get_kernels(backend)
    try:
        return best_of(lambda: sd.solve_semidiscrete(cloud, g, 1e-3).w2sq, repeat)
    finally:
        sd.kernels = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json")
    a = ap.parse_args()
    py = get_kernels("python")
    try:
        cy = get_kernels("cython")
    except ImportError:
        raise SystemExit("compiled extension not built; run pip install -e . --no-build-isolation")
    rows = []
    for name, (fn, args) in cases().items():
        tc, oc = best_of(lambda: getattr(cy, fn)(*args), a.repeat)
        tp, op = best_of(lambda: getattr(py, fn)(*args), a.repeat)
        rows.append({"kernel": name, "cython_s": tc, "python_s": tp, "max_diff": max_diff(oc, op)})
    tc, wc = solve_time("cython", a.repeat)
    tp, wp = solve_time("python", a.repeat)
    rows.append({"kernel": "solve_semidiscrete (N=256, n=1024)", "cython_s": tc, "python_s": tp,
                 "max_diff": abs(wc - wp)})
    width = max(len(r["kernel"]) for r in rows)
    print(f"{'kernel':{width}s}  cython [s]  python [s]  speedup  max diff")
    for r in rows:
        print(f"{r['kernel']:{width}s}  {r['cython_s']:10.4f}  {r['python_s']:10.4f}  "
              f"{r['python_s'] / r['cython_s']:7.1f}  {r['max_diff']:.1e}")
    if a.json:
        with open(a.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
