"""Command-line entry point: ``svdckf {bench,single,equiv,simulate}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .filters import FilterSpec, Form, Scheme, write_run_csv
from .harness import (
    ScenarioConfig,
    armse_position,
    emit_report,
    equivalence_check,
    format_table,
    run_benchmark,
    simulate_truth,
    single_run,
    with_overrides,
)
from .sde import write_trajectory_csv

log = logging.getLogger("svdckf")


def _load_config(args) -> ScenarioConfig:
    config = ScenarioConfig.from_file(args.config) if args.config else ScenarioConfig()
    return with_overrides(config, seed=args.seed, mc_runs=args.mc_runs)


def cmd_bench(args) -> int:
    config = _load_config(args)
    if args.workers is not None:
        config = with_overrides(config, workers=args.workers)
    results = run_benchmark(config)
    emit_report(results, args.out, config, plot=args.plot)
    print(format_table(results))
    print(f"results written to {args.out}")
    return 0


def cmd_single(args) -> int:
    config = _load_config(args)
    scheme = Scheme(args.scheme)
    spec = FilterSpec(scheme, Form(args.form),
                      args.substeps or (64 if scheme is Scheme.IT15 else 512))
    truth, run = single_run(config, spec, args.delta_ill, args.run)
    print(f"{spec.id}  delta_ill={args.delta_ill:.1e}  run={args.run}")
    print(f"{'k':>4} {'cond(Re)':>12} {'|innovation|':>13} {'pos. error':>11}")
    for k, (st, diag) in enumerate(zip(run.states[1:], run.diagnostics), start=1):
        err = np.linalg.norm((truth[k] - st.x_hat)[[0, 2, 4]])
        print(f"{k:>4} {float(diag.innovation_cov_condition):>12.4e} "
              f"{np.linalg.norm(diag.innovation):>13.4e} {err:>11.4e}")
    if run.failure is not None:
        print(f"FAILED: {run.failure}")
    else:
        est = run.x_hat[1:]
        print(f"ARMSE_p = {armse_position(truth[1:], est):.6e}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_run_csv(out / f"single_{spec.id}.csv", run)
    return 0


def cmd_equiv(args) -> int:
    report = equivalence_check(seed=args.seed if args.seed is not None else 0,
                               systems=args.systems, steps=args.steps, substeps=args.substeps)
    print(f"systems: {report.systems}")
    print(f"max |x_svd - x_conv|: {report.max_estimate_diff:.3e}")
    print(f"max relative covariance difference: {report.max_covariance_rel_diff:.3e}")
    print("PASS" if report.passed(args.tol) else "FAIL", f"(tolerance {args.tol:.0e})")
    return 0


def cmd_simulate(args) -> int:
    config = _load_config(args)
    truth = simulate_truth(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    times = config.t_start + config.delta_t * np.arange(config.steps + 1)
    for r, traj in enumerate(truth):
        write_trajectory_csv(out / f"truth_run{r:03d}.csv", times, traj)
    print(f"{truth.shape[0]} trajectories written to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="svdckf", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_default):
        sp.add_argument("--config", help="INI scenario file (defaults reproduce the reference study)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--mc-runs", type=int)
        sp.add_argument("--out", default=out_default, help="output directory")

    b = sub.add_parser("bench", help="full sweep over delta_ill and all filters")
    common(b, "bench_out")
    b.add_argument("--plot", action=argparse.BooleanOptionalAction, default=False)
    b.add_argument("--workers", type=int, help="worker processes (0 = one per core)")
    b.set_defaults(func=cmd_bench)

    s = sub.add_parser("single", help="one filter, one delta_ill, per-step diagnostics")
    common(s, "single_out")
    s.add_argument("--scheme", choices=[x.value for x in Scheme], default="IT15")
    s.add_argument("--form", choices=[x.value for x in Form], default="SvdFactored")
    s.add_argument("--substeps", type=int)
    s.add_argument("--delta-ill", type=float, default=1e-2)
    s.add_argument("--run", type=int, default=0, help="replicate index")
    s.set_defaults(func=cmd_single)

    e = sub.add_parser("equiv", help="SVD factored vs conventional on random systems")
    e.add_argument("--seed", type=int)
    e.add_argument("--systems", type=int, default=20)
    e.add_argument("--steps", type=int, default=50)
    e.add_argument("--substeps", type=int, default=4)
    e.add_argument("--tol", type=float, default=1e-8)
    e.set_defaults(func=cmd_equiv)

    t = sub.add_parser("simulate", help="export truth trajectories only")
    common(t, "truth_out")
    t.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
