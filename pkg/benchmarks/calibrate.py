"""Reproduce the frozen constants in ``semimatch.calibration``.

Usage: python benchmarks/calibrate.py [--sweep results/calibration_sweep.jsonl]

Prints the measured quantities and the constant each one implies. The
constants are not rewritten automatically; edit calibration.py by hand if a
deliberate recalibration is intended.
"""

import argparse
import math

import numpy as np

from semimatch import hopflax as hl
from semimatch import stability as st
from semimatch.calibration import C_CAL, C_M
from semimatch.geometry import Domain, Grid
from semimatch.heat import PointCloud, sample_cloud


def calibrate_c_m(N=256):
    worst = math.inf
    for dom in (Domain.torus(), Domain.square()):
        g = Grid(dom, N)
        for name, f in hl.test_family(g):
            thr = hl.injectivity_threshold(f)
            print(f"  {dom.kind.value:6s} {name:16s} injectivity threshold {thr:.4f}")
            worst = min(worst, thr)
    print(f"c_M: smallest threshold {worst:.4f} -> half = {worst / 2:.4f}")
    return worst / 2


def check_c_cal(N=128, pairs=1000):
    worst = -math.inf
    for dom in (Domain.torus(), Domain.square()):
        g = Grid(dom, N)
        for name, f in hl.test_family(g):
            size = hl.c11_size(f)
            for theta in (0.25, 0.5, 1.0):
                t = theta * C_M / size
                res = hl.hopflax_characteristics(f, t)
                for off in (None, 2, 8):
                    gap = hl.strict_convexity_gap(res, hl.random_pairs(g, pairs, 7, off), C_CAL)
                    worst = max(worst, gap)
    print(f"C_cal={C_CAL}: largest gap {worst:.3e} (<= 0 means no violation)")


def calibrate_c_stab(N=64, n=50):
    worst = 0.0
    g = Grid(Domain.torus(), N)
    clouds = [sample_cloud(g.domain, n, 3), PointCloud(g.domain, np.array([[0.3, 0.6]]), 0)]
    for name, f in hl.test_family(g):
        for c in clouds:
            r = st.stability_check(f, c, g)
            if r.admissible:
                worst = max(worst, r.ratio)
            print(f"  {name:16s} n={c.n:3d} ratio {r.ratio:.4f} admissible {r.admissible}")
    print(f"C_stab: largest admissible ratio {worst:.4f} -> doubled {2 * worst:.3f}")


def calibrate_c_fit(path):
    from semimatch.experiments import load_records

    rs = [r for r in load_records(path) if r.ok]
    k = max(r.linf_disp / r.w2sq_m_mun ** 0.25 for r in rs)
    print(f"C_fit: largest linf / l2^(1/4) over {len(rs)} trials {k:.4f} -> x1.5 = {1.5 * k:.3f}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--sweep", default=None)
    a = ap.parse_args()
    calibrate_c_m()
    check_c_cal()
    calibrate_c_stab()
    if a.sweep:
        calibrate_c_fit(a.sweep)


if __name__ == "__main__":
    main()
