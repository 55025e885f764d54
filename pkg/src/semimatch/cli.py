"""Command-line front end.

Subcommands: trial, sweep, verify, stability, hopflax-demo. Exit codes are
0 on success, 2 on usage or configuration errors and 3 on numerical failures.
All files are written below the output directory (``--out``, else the
``SEMIMATCH_OUTPUT_DIR`` environment variable, else ``./semimatch-out``).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from datetime import datetime, timezone

import numpy as np

from . import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
OUTPUT_ENV = "SEMIMATCH_OUTPUT_DIR"

# config-file keys and how to parse them; they mirror TrialConfig
CONFIG_KEYS = {
    "n": int,
    "seed": int,
    "domain": str,
    "N": int,
    "alpha": float,
    "t": float,
    "xi": float,
    "tol_mass": float,
    "eps_schedule": lambda s: tuple(float(x) for x in s.split(",")),
    "Q": int,
    "sinkhorn_max_N": int,
    "sinkhorn_tol": float,
}


class UsageError(Exception):
    pass


def parse_config_file(path: str) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for num, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{num}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise UsageError(f"{path}:{num}: unknown key {key!r}")
        try:
            out[key] = CONFIG_KEYS[key](val)
        except ValueError as exc:
            raise UsageError(f"{path}:{num}: bad value for {key}: {val!r}") from exc
    return out


def _output_dir(args) -> str:
    out = args.out or os.environ.get(OUTPUT_ENV) or "semimatch-out"
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out


def _write_manifest(out: str, args, name: str) -> None:
    manifest = {
        "schema_version": 1,
        "subcommand": name,
        "config_file": getattr(args, "config", None),
        "output_dir": os.path.abspath(out),
        "version": __version__,
        "timestamp": datetime.now(timezone.utc).isoformat(),
    }
    with open(os.path.join(out, f"manifest_{name}.json"), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _trial_settings(args) -> dict:
    settings = parse_config_file(args.config) if args.config else {}
    for key in CONFIG_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            settings[key] = val
    return settings


def _add_trial_flags(p, with_n=True):
    p.add_argument("--config", help="key = value file with TrialConfig keys")
    if with_n:
        p.add_argument("--n", type=int, help="number of random points")
        p.add_argument("--seed", type=int)
    p.add_argument("--domain", choices=["torus", "square"])
    p.add_argument("--N", type=int, help="grid resolution (power of two)")
    p.add_argument("--alpha", type=float, help="exponent of ln n in the heat time")
    p.add_argument("--t", type=float, help="heat time (overrides the schedule)")
    p.add_argument("--xi", type=float)
    p.add_argument("--tol-mass", dest="tol_mass", type=float)
    p.add_argument("--Q", type=int, help="push-forward sample count")
    p.add_argument("--sinkhorn-max-N", dest="sinkhorn_max_N", type=int)
    p.add_argument("--sinkhorn-tol", dest="sinkhorn_tol", type=float)


# -- subcommands ---------------------------------------------------------------


def cmd_trial(args) -> int:
    from .experiments import ConfigError, TrialConfig, run_trial

    settings = _trial_settings(args)
    if "n" not in settings:
        raise UsageError("trial needs --n (or n in the config file)")
    try:
        cfg = TrialConfig(**settings).resolved()
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    out = _output_dir(args)
    _write_manifest(out, args, "trial")
    rec = run_trial(cfg)
    path = os.path.join(out, f"trial_n{cfg.n}_seed{cfg.seed}.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(rec.to_json() + "\n")
    if not rec.ok:
        print(f"numerical failure at stage {rec.stage}: {rec.reason}", file=sys.stderr)
        return EXIT_NUMERICAL
    print(path)
    return EXIT_OK


def _parse_ns(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --ns value {text!r}") from exc


def cmd_sweep(args) -> int:
    from .experiments import ConfigError, summarize, sweep, write_plot_data, write_summary_csv

    settings = _trial_settings(args)
    settings.pop("n", None)
    settings.pop("seed", None)
    ns = _parse_ns(args.ns)
    if not ns or args.trials < 1:
        raise UsageError("sweep needs a nonempty --ns and --trials >= 1")
    out = _output_dir(args)
    sink = os.path.join(out, "records.jsonl")
    try:
        records = sweep(ns, args.trials, args.base_seed, jobs=args.jobs, sink=sink, **settings)
    except (ConfigError, TypeError) as exc:
        raise UsageError(str(exc)) from exc
    _write_manifest(out, args, "sweep")
    summary = summarize(records)
    write_summary_csv(summary, os.path.join(out, "summary.csv"))
    write_plot_data(summary, records, out)
    failed = [r for r in records if not r.ok]
    for r in failed:
        print(f"trial n={r.n} seed={r.config['seed']} failed at stage {r.stage}: {r.reason}", file=sys.stderr)
    print(f"{len(records)} records, {len(failed)} failed -> {out}")
    return EXIT_NUMERICAL if failed else EXIT_OK


def cmd_verify(args) -> int:
    from .verify import CHECKS, format_table, run_all

    if args.inject and args.inject not in CHECKS:
        raise UsageError(f"unknown check {args.inject!r}")
    results = run_all(inject=args.inject)
    print(format_table(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_NUMERICAL


def cmd_stability(args) -> int:
    from . import hopflax as hl
    from .fields import ResolutionError
    from .geometry import Domain, Grid
    from .heat import sample_cloud
    from .semidiscrete import SolverError
    from .sinkhorn import SinkhornError
    from .stability import perturbation_scaling, write_jsonl

    dom = Domain.torus() if args.domain == "torus" else Domain.square()
    try:
        grid = Grid(dom, args.N)
        f = hl.family_member(grid, args.shape, args.eps)
        scales = [float(s) for s in args.scales.split(",")]
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = _output_dir(args)
    _write_manifest(out, args, "stability")
    cloud = sample_cloud(dom, args.n, args.seed)
    try:
        reports = perturbation_scaling(f, cloud, scales, seed=args.seed)
    except (SolverError, SinkhornError, ResolutionError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    path = os.path.join(out, "stability.jsonl")
    write_jsonl(reports, path)
    for r in reports:
        print(f"alpha={r.scale:<8g} lhs={r.lhs:.4e} rhs={r.rhsA + r.rhsB:.4e} "
              f"ratio={r.ratio:.4f} admissible={r.admissible}")
    return EXIT_OK


def cmd_hopflax_demo(args) -> int:
    from . import hopflax as hl
    from .geometry import Domain, Grid

    dom = Domain.torus() if args.domain == "torus" else Domain.square()
    try:
        grid = Grid(dom, args.N)
        f = hl.family_member(grid, args.shape, args.eps)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    t = args.t if args.t is not None else 0.5 * hl.C_M / hl.c11_size(f)
    out = _output_dir(args)
    _write_manifest(out, args, "hopflax-demo")
    try:
        a = hl.hopflax_grid(f, t)
        b = hl.hopflax_characteristics(f, t)
    except hl.AdmissibilityError as exc:
        raise UsageError(str(exc)) from exc
    diff = float(np.abs(a.Qf.values - b.Qf.values).max())
    dt = min(1e-3, 0.1 * t)
    res = hl.hj_residual(f, t, dt)
    lip, bound = hl.lip_defect(f, t, b)
    path = os.path.join(out, "hopflax_demo.csv")
    np.savetxt(path, np.column_stack([grid.flat_centers(), f.values.ravel(), a.Qf.values.ravel(),
                                      b.Qf.values.ravel()]),
               delimiter=",", header="x1,x2,f,Q_grid,Q_characteristics", comments="")
    print(f"t={t:.5g} admissibility={hl.admissibility(f, t):.4f} (c_M={hl.C_M})")
    print(f"grid vs characteristics: {diff:.3e} ({diff / grid.h:.3f} h)")
    print(f"Hamilton-Jacobi residual (dt={dt:g}): {res:.3e}")
    print(f"Lip(Q_t f - f) = {lip:.4e}, bound {bound:.4e}")
    return EXIT_OK


# -- entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="semimatch", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("trial", help="run one seeded trial")
    _add_trial_flags(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_trial)

    p = sub.add_parser("sweep", help="run or resume a sweep over n")
    _add_trial_flags(p, with_n=False)
    p.add_argument("--ns", default="256,1024,4096", help="comma-separated, increasing")
    p.add_argument("--trials", type=int, default=32)
    p.add_argument("--base-seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="run the property suite")
    p.add_argument("--inject", help="force the named check to fail")
    p.set_defaults(func=cmd_verify)

    for name, func in (("stability", cmd_stability), ("hopflax-demo", cmd_hopflax_demo)):
        p = sub.add_parser(name)
        p.add_argument("--domain", choices=["torus", "square"], default="torus")
        p.add_argument("--N", type=int, default=64 if name == "stability" else 256)
        p.add_argument("--shape", choices=["cos", "cos_sin", "random"], default="cos")
        p.add_argument("--eps", type=float, default=0.01)
        p.add_argument("--out")
        if name == "stability":
            p.add_argument("--n", type=int, default=50)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--scales", default="0,0.125,0.25,0.5,1")
        else:
            p.add_argument("--t", type=float)
        p.set_defaults(func=func)
    return ap


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"semimatch: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
