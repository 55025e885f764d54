"""Monte Carlo harness for the random matching problem.

One trial samples n uniform points, solves the semi-discrete problem from the
uniform measure m onto their empirical measure mu^n, builds the smoothed
ansatz f^{n,t} (heat flow, then Poisson), and records how far the optimal map
T^n is from exp(grad f^{n,t}) together with the auxiliary distances between
mu^n, mu^{n,t} = P_t* mu^n and mu_hat^{n,t} = exp(grad f^{n,t})_# m.

Trials are pure functions of their config; a sweep runs them on a process pool
and appends records to a JSON-lines file.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, fields as dc_fields, replace

import numpy as np
from scipy import stats
from threadpoolctl import threadpool_limits

from . import fields
from .calibration import C_FIT
from .fields import ResolutionError, ScalarField
from .geometry import Domain, Grid, exp_map
from .heat import check_resolution, clamp_density, heat_evolve, matching_field, sample_cloud
from .semidiscrete import (
    MIN_CELLS_PER_ATOM,
    SolverError,
    TransportMapGrid,
    cyclical_monotonicity_violation,
    grad_potential_from_map,
    linf_map_distance,
    map_l2_distance,
    monotonicity_violation_at,
    pushforward_density,
    solve_semidiscrete,
)
from .sinkhorn import SinkhornError, sinkhorn_w2

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
CM_TOL = 1e-10
VOLATILE = ("runtime_seconds", "timestamp")
_TAGS = {"cloud": 1, "pushforward": 2, "monotonicity": 3}


# -- schedule and seeds --------------------------------------------------------


def schedule(n: int, alpha: float = 4.0) -> tuple[float, float]:
    """t = (ln n)^alpha / n and xi = 1 / ln n."""
    if n < 3:
        raise ValueError("the schedule needs n >= 3")
    L = math.log(n)
    return L ** alpha / n, 1.0 / L


def trial_seed(base_seed: int, n: int, index: int) -> int:
    """Independent 63-bit seed for trial ``index`` at size ``n``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(n), int(index)))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def sub_seed(seed: int, tag: str) -> int:
    """Stage-specific seed derived from a trial seed."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(_TAGS[tag],))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


# -- config and record ---------------------------------------------------------


class ConfigError(ValueError):
    """A trial configuration violates a validity rule."""


@dataclass(frozen=True)
class TrialConfig:
    """Every knob of a trial.

    ``t`` and ``xi`` default to the schedule; ``Q`` defaults to 16 N^2.
    ``alpha`` is the exponent of ln n in the default time.
    """

    n: int
    seed: int = 0
    domain: str = "torus"
    N: int = 512
    alpha: float = 4.0
    t: float | None = None
    xi: float | None = None
    tol_mass: float = 1e-3
    eps_schedule: tuple | None = None
    Q: int | None = None
    sinkhorn_max_N: int = 256
    sinkhorn_tol: float = 1e-6
    trial_index: int = 0

    def resolved(self) -> "TrialConfig":
        """Copy with defaults filled in; raises ConfigError when invalid."""
        if self.domain not in ("torus", "square"):
            raise ConfigError(f"unknown domain {self.domain!r}")
        if int(self.n) != self.n or self.n < 3:
            raise ConfigError("n must be an integer >= 3")
        if self.N < 2 or self.N & (self.N - 1):
            raise ConfigError("N must be a power of two")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        t0, xi0 = schedule(self.n, self.alpha)
        t = t0 if self.t is None else float(self.t)
        xi = xi0 if self.xi is None else float(self.xi)
        if t <= 0 or xi <= 0:
            raise ConfigError("t and xi must be positive")
        Q = 16 * self.N * self.N if self.Q is None else int(self.Q)
        if Q < 10 * self.N * self.N:
            raise ConfigError("Q must be at least 10 N^2")
        if self.N * self.N < MIN_CELLS_PER_ATOM * self.n:
            raise ConfigError(f"N={self.N} gives fewer than {MIN_CELLS_PER_ATOM} cells per atom")
        if self.tol_mass <= 0:
            raise ConfigError("tol_mass must be positive")
        eps = None if self.eps_schedule is None else tuple(float(e) for e in self.eps_schedule)
        cfg = replace(self, t=t, xi=xi, Q=Q, eps_schedule=eps)
        try:
            check_resolution(cfg.grid(), t)
        except ResolutionError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg

    def grid(self) -> Grid:
        dom = Domain.torus() if self.domain == "torus" else Domain.square()
        return Grid(dom, self.N)

    def to_dict(self) -> dict:
        d = asdict(self)
        if d["eps_schedule"] is not None:
            d["eps_schedule"] = list(d["eps_schedule"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrialConfig":
        known = {f.name for f in dc_fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if d.get("eps_schedule") is not None:
            d["eps_schedule"] = tuple(d["eps_schedule"])
        return cls(**d)


@dataclass
class TrialRecord:
    """Outcome of one trial; costs are squared distances on the unit domain.

    Brackets are stored as ``*_lower`` / ``*_upper`` pairs. For semi-discrete
    values the pair is (dual value, primal raster cost) in increasing order.
    """

    config: dict
    status: str = "ok"
    stage: str = ""
    reason: str = ""
    w2sq_m_mun: float = math.nan
    w2sq_m_mun_dual: float = math.nan
    l2_T_vs_ansatz: float = math.nan
    w2sq_mun_munt_lower: float = math.nan
    w2sq_mun_munt_upper: float = math.nan
    w2sq_munt_hat_lower: float = math.nan
    w2sq_munt_hat_upper: float = math.nan
    w2sq_m_munt_lower: float = math.nan
    w2sq_m_munt_upper: float = math.nan
    w2sq_mun_hat: float = math.nan
    w2sq_m_hat_lower: float = math.nan
    w2sq_m_hat_upper: float = math.nan
    heat_ceiling: float = math.nan
    hess_sup: float = math.nan
    grad_sup: float = math.nan
    eventA: bool = False
    dirichlet: float = math.nan
    grad_ratio: float = math.nan
    linf_disp: float = math.nan
    cm_violation: float = math.nan
    duality_gap: float = math.nan
    newton_iterations: int = 0
    pushforward_clamp: float = 0.0
    ansatz_clamp: float = 0.0
    runtime_seconds: float = 0.0
    schema_version: int = SCHEMA_VERSION

    @property
    def n(self) -> int:
        return int(self.config["n"])

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self, volatile: bool = True) -> str:
        d = asdict(self)
        if not volatile:
            for k in VOLATILE:
                d.pop(k, None)
        return json.dumps(d, sort_keys=True, allow_nan=True)

    @classmethod
    def from_json(cls, line: str) -> "TrialRecord":
        d = json.loads(line)
        if d.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {d.get('schema_version')}")
        known = {f.name for f in dc_fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


NUMERIC_FIELDS = tuple(
    f.name for f in dc_fields(TrialRecord)
    if f.name not in ("config", "status", "stage", "reason", "schema_version")
)


# -- one trial -----------------------------------------------------------------


class _Stage:
    def __init__(self):
        self.name = "config"


def _semidiscrete_bracket(plan) -> tuple[float, float]:
    lo, hi = sorted((plan.dual_value, plan.w2sq))
    return max(lo, 0.0), max(hi, 0.0)


def run_trial(config: TrialConfig) -> TrialRecord:
    """Run the full pipeline for one seeded trial.

    Solver failures do not raise: the record is marked failed with the stage
    and the reason. Invalid configs raise ConfigError.
    """
    cfg = config.resolved()
    rec = TrialRecord(config=cfg.to_dict())
    stage = _Stage()
    start = time.perf_counter()
    try:
        with threadpool_limits(1):
            _pipeline(cfg, rec, stage)
    except (SolverError, SinkhornError, ResolutionError, ValueError, np.linalg.LinAlgError) as exc:
        rec.status = "failed"
        rec.stage = stage.name
        rec.reason = f"{type(exc).__name__}: {exc}"
        log.warning("trial n=%d seed=%d failed at %s: %s", cfg.n, cfg.seed, stage.name, exc)
    rec.runtime_seconds = time.perf_counter() - start
    return rec


def _pipeline(cfg: TrialConfig, rec: TrialRecord, stage: _Stage) -> None:
    grid = cfg.grid()
    dom = grid.domain
    t = cfg.t
    ones = np.ones(grid.shape)
    m = ScalarField(grid, ones, fields.DENSITY)

    def bracket(a, b):
        return sinkhorn_w2(a, b, cfg.eps_schedule, tol=cfg.sinkhorn_tol, max_N=cfg.sinkhorn_max_N)

    stage.name = "sample"
    cloud = sample_cloud(dom, cfg.n, sub_seed(cfg.seed, "cloud"))

    stage.name = "semidiscrete_m_mun"
    plan = solve_semidiscrete(cloud, grid, cfg.tol_mass)
    Tn = plan.transport_map()
    rec.w2sq_m_mun = plan.w2sq
    rec.w2sq_m_mun_dual = plan.dual_value
    rec.duality_gap = plan.duality_gap
    rec.newton_iterations = plan.iterations
    rec.linf_disp = linf_map_distance(Tn)
    rec.cm_violation = cyclical_monotonicity_violation(Tn, 1000, sub_seed(cfg.seed, "monotonicity"))

    stage.name = "heat"
    mu_nt = heat_evolve(cloud, t, grid)
    mu_nt_pos, _ = clamp_density(mu_nt)
    rec.heat_ceiling = t

    stage.name = "poisson"
    f, gf = matching_field(cloud, t, grid)
    rec.hess_sup = fields.hessian_sup_norm(f)
    rec.grad_sup = gf.sup_norm()
    rec.eventA = bool(rec.hess_sup < cfg.xi)
    rec.dirichlet = fields.dirichlet_energy(f)
    target, rec.ansatz_clamp = exp_map(dom, grid.centers, gf.values, return_clamp=True)
    S = TransportMapGrid(grid, target)
    rec.l2_T_vs_ansatz = map_l2_distance(Tn, S)

    stage.name = "gradients"
    gn = grad_potential_from_map(Tn).values
    num = float(np.mean(np.sum((gn - gf.values) ** 2, axis=-1)))
    den = float(np.mean(np.sum(gn * gn, axis=-1)))
    rec.grad_ratio = num / den if den > 0 else math.nan

    stage.name = "semidiscrete_munt_mun"
    if np.array_equal(mu_nt_pos.values, ones):
        plan_t = plan
    else:
        plan_t = solve_semidiscrete(cloud, grid, cfg.tol_mass, density=mu_nt_pos,
                                    weights0=plan.weights, allow_empty_cells=True)
    rec.w2sq_mun_munt_lower, rec.w2sq_mun_munt_upper = _semidiscrete_bracket(plan_t)

    stage.name = "pushforward"
    mu_hat, rec.pushforward_clamp = pushforward_density(gf, grid, cfg.Q, sub_seed(cfg.seed, "pushforward"),
                                                        return_clamp=True)

    stage.name = "sinkhorn_munt_hat"
    br = bracket(mu_nt_pos, mu_hat)
    rec.w2sq_munt_hat_lower, rec.w2sq_munt_hat_upper = br.lower, br.upper

    stage.name = "sinkhorn_m_munt"
    br = bracket(m, mu_nt_pos)
    rec.w2sq_m_munt_lower, rec.w2sq_m_munt_upper = br.lower, br.upper

    stage.name = "semidiscrete_hat_mun"
    if np.array_equal(mu_hat.values, ones):
        plan_h = plan
    else:
        plan_h = solve_semidiscrete(cloud, grid, cfg.tol_mass, density=mu_hat,
                                    weights0=plan.weights, allow_empty_cells=True)
    rec.w2sq_mun_hat = max(plan_h.w2sq, 0.0)

    stage.name = "sinkhorn_m_hat"
    br = bracket(m, mu_hat)
    rec.w2sq_m_hat_lower, rec.w2sq_m_hat_upper = br.lower, br.upper
    stage.name = "done"


# -- sweeps --------------------------------------------------------------------


def load_records(path) -> list[TrialRecord]:
    """Records of a JSON-lines file in canonical (n, trial_index) order."""
    if not os.path.exists(path):
        return []
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(TrialRecord.from_json(line))
    out.sort(key=lambda r: (r.n, r.config["trial_index"]))
    return out


def sweep_configs(ns, trials_per_n: int, base_seed: int, **overrides) -> list[TrialConfig]:
    ns = list(ns)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ConfigError("ns must be strictly increasing")
    return [
        TrialConfig(n=n, seed=trial_seed(base_seed, n, i), trial_index=i, **overrides)
        for n in ns for i in range(trials_per_n)
    ]


def sweep(ns, trials_per_n: int, base_seed: int = 0, *, jobs: int | None = None,
          sink: str | None = None, **overrides) -> list[TrialRecord]:
    """Run (or resume) a sweep; returns all records in canonical order.

    With a ``sink`` path, records already present for a (n, seed) pair are
    kept and not rerun; new records are appended as they complete.
    """
    configs = [c.resolved() for c in sweep_configs(ns, trials_per_n, base_seed, **overrides)]
    done = {}
    if sink is not None:
        for r in load_records(sink):
            done[(r.n, r.config["seed"])] = r
    todo = [c for c in configs if (c.n, c.seed) not in done]
    wanted = {(c.n, c.seed) for c in configs}
    results = [r for k, r in done.items() if k in wanted]
    jobs = jobs or os.cpu_count() or 1

    def emit(rec):
        results.append(rec)
        if sink is not None:
            with open(sink, "a", encoding="utf-8") as fh:
                fh.write(rec.to_json() + "\n")

    if jobs == 1 or len(todo) <= 1:
        for c in todo:
            emit(run_trial(c))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futs = [pool.submit(run_trial, c) for c in todo]
            for fut in as_completed(futs):
                emit(fut.result())
    results.sort(key=lambda r: (r.n, r.config["trial_index"]))
    return results


def _mean_ci(x: np.ndarray) -> tuple[float, float, float]:
    x = x[np.isfinite(x)]
    if len(x) == 0:
        return math.nan, math.nan, math.nan
    mean = float(x.mean())
    if len(x) < 2:
        return mean, math.nan, math.nan
    half = float(stats.t.ppf(0.975, len(x) - 1) * x.std(ddof=1) / math.sqrt(len(x)))
    return mean, mean - half, mean + half


def ratio_scales(n: int) -> dict[str, float]:
    """Normalisations turning per-n means into the r1..r4 ratios."""
    L = math.log(n)
    return {
        "r1": 4.0 * math.pi * n / L,
        "r2": n / L,
        "r3": n / math.log(L),
        "r4": n * L,
    }


RATIO_SOURCE = {
    "r1": "w2sq_m_mun",
    "r2": "l2_T_vs_ansatz",
    "r3": "w2sq_mun_munt_upper",
    "r4": "w2sq_munt_hat_upper",
}


def summarize(records) -> dict[int, dict]:
    """Per-n mean and 95% CI of every numeric field plus the r1..r4 ratios.

    Failed records are counted but excluded from the statistics.
    """
    by_n: dict[int, list] = {}
    for r in records:
        by_n.setdefault(r.n, []).append(r)
    out = {}
    for n in sorted(by_n):
        rs = [r for r in by_n[n] if r.ok]
        row = {"n": n, "trials": len(by_n[n]), "failed": len(by_n[n]) - len(rs)}
        for name in NUMERIC_FIELDS:
            vals = np.array([float(getattr(r, name)) for r in rs], dtype=float)
            row[name] = _mean_ci(vals)
        for key, scale in ratio_scales(n).items():
            mean, lo, hi = row[RATIO_SOURCE[key]]
            row[key] = (mean * scale, lo * scale, hi * scale)
        out[n] = row
    return out


def write_summary_csv(summary: dict, path) -> None:
    cols = list(NUMERIC_FIELDS) + list(RATIO_SOURCE)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        head = ["schema_version", "n", "trials", "failed"]
        for c in cols:
            head += [c, f"{c}_ci_low", f"{c}_ci_high"]
        w.writerow(head)
        for n, row in summary.items():
            line = [SCHEMA_VERSION, n, row["trials"], row["failed"]]
            for c in cols:
                line += [repr(float(v)) for v in row[c]]
            w.writerow(line)


PLOT_HEADER = ("x", "y", "ci_low", "ci_high")
PLOT_SERIES = ("r1", "r2", "r3", "r4", "grad_ratio")


def write_plot_data(summary: dict, records, outdir) -> list[str]:
    """CSV files with columns x,y,ci_low,ci_high for each series.

    x is n for the per-n series; for ``linf_exponent`` every trial contributes
    x = log l2 cost, y = log sup displacement with empty CI columns.
    """
    paths = []
    for key in PLOT_SERIES:
        p = os.path.join(outdir, f"plot_{key}.csv")
        with open(p, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(PLOT_HEADER)
            for n, row in summary.items():
                w.writerow([n] + [repr(float(v)) for v in row[key]])
        paths.append(p)
    p = os.path.join(outdir, "plot_linf_exponent.csv")
    with open(p, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PLOT_HEADER)
        for r in records:
            if r.ok and r.w2sq_m_mun > 0 and r.linf_disp > 0:
                w.writerow([repr(math.log(r.w2sq_m_mun)), repr(math.log(r.linf_disp)), "", ""])
    paths.append(p)
    return paths


# -- reports -------------------------------------------------------------------


class NonMonotoneMapError(ValueError):
    """A map offered to the L-infinity report is not c-cyclically monotone."""


@dataclass(frozen=True)
class LinfFit:
    c_fit: float
    violations: int
    slope: float
    fitted_constant: float
    trials: int
    winf_contrast: dict = field(default_factory=dict)


def linf_exponent_report(records, c_fit: float = C_FIT) -> LinfFit:
    """Check linf <= c_fit * l2^(1/4) on every trial and fit the log-log slope.

    Raises
    ------
    NonMonotoneMapError
        Some record's map failed the two-point cyclical monotonicity test; the
        exponent bound only applies to optimal maps.
    """
    rs = [r for r in records if r.ok]
    bad = [r for r in rs if not (r.cm_violation <= CM_TOL)]
    if bad:
        raise NonMonotoneMapError(f"{len(bad)} record(s) are not c-cyclically monotone")
    l2 = np.array([r.w2sq_m_mun for r in rs])
    linf = np.array([r.linf_disp for r in rs])
    if len(rs) == 0:
        raise ValueError("no successful records")
    bound = c_fit * l2 ** 0.25
    violations = int(np.sum(linf > bound))
    slope = float(np.polyfit(np.log(l2), np.log(linf), 1)[0]) if len(rs) >= 2 else math.nan
    fitted = float(np.max(linf / l2 ** 0.25))
    contrast = {r.n: math.log(r.n) ** 0.75 / math.sqrt(r.n) for r in rs}
    return LinfFit(c_fit, violations, slope, fitted, len(rs), contrast)


def map_linf_l2(T: TransportMapGrid, pairs: int = 1000, seed: int = 0) -> tuple[float, float]:
    """(sup displacement, L2 cost) of an optimal map, refusing non-monotone ones.

    Besides random pairs, the most displaced cell (the one fixing the sup) is
    tested against every other cell.
    """
    worst = int(np.argmax(T.displacement_sq().ravel()))
    v = max(cyclical_monotonicity_violation(T, pairs, seed), monotonicity_violation_at(T, worst))
    if v > CM_TOL:
        raise NonMonotoneMapError(f"swap inequality violated by {v:.3e}")
    return linf_map_distance(T), map_l2_distance(T, TransportMapGrid.identity(T.grid))


def prob_large_displacement(records, eps: float) -> dict[int, float]:
    """Per-n frequency of linf_disp > eps among successful trials."""
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    out: dict[int, list] = {}
    for r in records:
        if r.ok:
            out.setdefault(r.n, []).append(r.linf_disp > eps)
    return {n: float(np.mean(v)) for n, v in sorted(out.items())}


def event_frequency(records) -> dict[int, float]:
    out: dict[int, list] = {}
    for r in records:
        if r.ok:
            out.setdefault(r.n, []).append(bool(r.eventA))
    return {n: float(np.mean(v)) for n, v in sorted(out.items())}
