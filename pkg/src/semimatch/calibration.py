"""Frozen empirical constants.

Each constant was produced once by ``benchmarks/calibrate.py`` on the pinned
test corpus and is kept fixed so that later runs act as regression checks.
They are empirical stand-ins for constants that the underlying estimates only
assert to exist.
"""

# hidden constant in the strict-convexity estimate of the Hopf-Lax semigroup
C_CAL = 8.0

# half of the smallest forward-injectivity threshold of t(|grad f|+|hess f|)
# over the test corpus
C_M = 0.5795

# optimal-map stability ratio ceiling on admissible runs
C_STAB = 2.0

# sup displacement vs (L2 cost)^(1/4); 1.5 x the largest ratio (0.7107) over the
# calibration sweep (n in {256, 1024}, 16 trials each, base seed 1)
C_FIT = 1.07

# W2^2(m, rho) <= C_TI * Dirichlet energy of the Poisson potential
C_TI = 4.0
