import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.sparse import coo_matrix

import semimatch.semidiscrete as sd
from semimatch import BACKEND
from semimatch._backend import get_kernels
from semimatch.geometry import Domain, Grid
from semimatch.heat import sample_cloud

try:
    CY = get_kernels("cython")
except ImportError:  # extension not built
    CY = None
PY = get_kernels("python")
needs_cython = pytest.mark.skipif(CY is None, reason="compiled extension not built")


def test_backend_flag():
    assert BACKEND in ("cython", "python")
    with pytest.raises(ValueError):
        get_kernels("fortran")


def _raster_inputs(seed, n, N, periodic):
    rng = np.random.default_rng(seed)
    g = Grid(Domain.torus() if periodic else Domain.square(), N)
    c = g.flat_centers()
    X = rng.random((n, 2))
    w = 0.002 * rng.normal(size=n)
    pm = np.full(N * N, 1.0 / (N * N))
    return (np.ascontiguousarray(c[:, 0]), np.ascontiguousarray(c[:, 1]), g.h,
            np.ascontiguousarray(X[:, 0]), np.ascontiguousarray(X[:, 1]), w, pm, periodic)


@needs_cython
@given(st.integers(0, 10_000), st.integers(1, 40), st.booleans())
def test_laguerre_masses_agree(seed, n, periodic):
    args = _raster_inputs(seed, n, 32, periodic)
    a = CY.laguerre_pixel_masses(*args)
    b = PY.laguerre_pixel_masses(*args)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], atol=1e-15)
    np.testing.assert_allclose(a[2], b[2], atol=1e-14)
    # interface edges: same multiset of (i, j, coefficient) up to ordering
    ma, mb = (coo_matrix((r[5], (r[3], r[4])), shape=(n, n)).toarray() for r in (a, b))
    np.testing.assert_allclose(ma, mb, atol=1e-12)
    assert abs(a[2].sum() - 1) < 1e-12 and abs(b[2].sum() - 1) < 1e-12


@needs_cython
@given(st.integers(0, 10_000), st.integers(1, 30), st.booleans())
def test_power_top2_agree(seed, n, periodic):
    sx, sy, _, ax, ay, w, _, _ = _raster_inputs(seed, n, 16, periodic)
    a = CY.power_top2(sx, sy, ax, ay, w, periodic)
    b = PY.power_top2(sx, sy, ax, ay, w, periodic)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_allclose(a[1], b[1], atol=1e-15)


@needs_cython
@given(st.integers(0, 10_000), st.floats(0.01, 5.0), st.booleans())
def test_infconv_and_ball_min_agree(seed, s, periodic):
    f = np.random.default_rng(seed).normal(size=(16, 16))
    for fn, extra in (("quad_infconv_lines", ()), ("ball_min", (5,))):
        a = getattr(CY, fn)(f, s, *extra, periodic)
        b = getattr(PY, fn)(f, s, *extra, periodic)
        for x, y in zip(a, b):
            np.testing.assert_allclose(x, y, atol=1e-14)


@needs_cython
def test_lse_entries_agree():
    rng = np.random.default_rng(0)
    A, P = rng.normal(size=(20, 30)), rng.normal(size=(25, 30))
    ra, rx = rng.integers(0, 20, 100), rng.integers(0, 25, 100)
    np.testing.assert_allclose(CY.lse_entries(A, P, ra, rx), PY.lse_entries(A, P, ra, rx), rtol=1e-13)


@pytest.mark.parametrize("name", ["python", pytest.param("cython", marks=needs_cython)])
@pytest.mark.parametrize("kind", ["torus", "square"])
def test_small_solve_conserves_mass(monkeypatch, name, kind):
    # small n on a fine grid wraps the candidate search around the torus
    monkeypatch.setattr(sd, "kernels", get_kernels(name))
    d = Domain(kind)
    plan = sd.solve_semidiscrete(sample_cloud(d, 16, 3), Grid(d, 64), 1e-8)
    assert abs(plan.cell_masses.sum() - 1) < 1e-12
    assert np.abs(plan.cell_masses - 1 / 16).max() <= 1e-8 / 16


@needs_cython
def test_backends_give_the_same_plan(monkeypatch):
    d = Domain.torus()
    c, g = sample_cloud(d, 30, 4), Grid(d, 64)
    plans = []
    for name in ("python", "cython"):
        monkeypatch.setattr(sd, "kernels", get_kernels(name))
        plans.append(sd.solve_semidiscrete(c, g, 1e-8))
    np.testing.assert_array_equal(plans[0].assignment, plans[1].assignment)
    assert abs(plans[0].w2sq - plans[1].w2sq) < 1e-12
