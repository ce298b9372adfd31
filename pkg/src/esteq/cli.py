"""Command-line entry points: solve, check, infer, simulate, report."""

from __future__ import annotations

import argparse
import glob
import json
import os
import sys

import numpy as np

from .conditions import check_conditions
from .config import (
    load_config,
    model_from_config,
    penalty_from_config,
    scenario_from_config,
    solve_options_from_config,
)
from .data import load_csv
from .harness import run_monte_carlo
from .inference import infer, normal_quantile
from .solvers import solve_penalized, solve_unpenalized


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="esteq",
        description="Solve, check, and Monte Carlo-validate penalized "
                    "estimating equations.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="solve the configured equation")
    p_solve.add_argument("--data", required=True)
    p_solve.add_argument("--config", required=True)
    p_solve.add_argument("--out", required=True)

    p_check = sub.add_parser("check", help="evaluate regularity conditions")
    p_check.add_argument("--data", required=True)
    p_check.add_argument("--config", required=True)
    p_check.add_argument("--json", action="store_true",
                         help="print JSON instead of aligned text")
    p_check.add_argument("--out", help="also write the report JSON here")

    p_infer = sub.add_parser("infer", help="sandwich inference at a solution")
    p_infer.add_argument("--data", required=True)
    p_infer.add_argument("--config", required=True)
    p_infer.add_argument("--result", required=True,
                         help="SolveResult JSON from `esteq solve`")
    p_infer.add_argument("--out", required=True)

    p_sim = sub.add_parser("simulate", help="run a Monte Carlo scenario")
    p_sim.add_argument("--scenario", required=True)
    p_sim.add_argument("--out-dir", required=True)

    p_rep = sub.add_parser("report", help="emit plot-ready CSVs from a run")
    p_rep.add_argument("--in", dest="in_dir", required=True)

    args = parser.parse_args(argv)
    return {
        "solve": _cmd_solve,
        "check": _cmd_check,
        "infer": _cmd_infer,
        "simulate": _cmd_simulate,
        "report": _cmd_report,
    }[args.command](args)


def _load(args):
    data = load_csv(args.data)
    cfg = load_config(args.config)
    model = model_from_config(cfg, data)
    pen = penalty_from_config(cfg)
    opts = solve_options_from_config(cfg)
    return data, cfg, model, pen, opts


def _cmd_solve(args):
    data, cfg, model, pen, opts = _load(args)
    if pen is not None:
        result = solve_penalized(model, data, pen, opts)
    else:
        result = solve_unpenalized(model, data, opts)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(result.to_json(indent=2) + "\n")
    print(f"status: {result.status}  iterations: {result.iterations}  "
          f"kkt violation: {result.kkt_violation:.3e}")
    print(f"support size: {len(result.support)} / {model.dim}")
    print(f"wrote {args.out}")
    return 0 if result.converged else 1


def _cmd_check(args):
    data, cfg, model, pen, opts = _load(args)
    if pen is not None:
        result = solve_penalized(model, data, pen, opts)
        support = cfg.get("check", {}).get("support", list(result.support))
    else:
        result = solve_unpenalized(model, data, opts)
        support = cfg.get("check", {}).get("support",
                                           list(range(model.dim)))
    if isinstance(support, int):
        support = [support]
    if pen is None:
        from .penalties import Penalty

        pen = Penalty(kind="lasso", lam=0.0)
    report = check_conditions(model, data, pen, support, result.theta)
    if args.json:
        print(report.to_json(indent=2))
    else:
        print(report.format_text())
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report.to_json(indent=2) + "\n")
    return 0 if report.all_pass else 1


def _cmd_infer(args):
    data, cfg, model, pen, opts = _load(args)
    with open(args.result, "r", encoding="utf-8") as fh:
        solved = json.load(fh)
    theta = np.asarray(solved["theta"], dtype=float)
    level = float(cfg.get("infer", {}).get("level", 0.95))
    report = infer(model, data, theta, pen=pen, level=level)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(report.to_json(indent=2) + "\n")
    print(report.format_text())
    print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args):
    cfg = load_config(args.scenario)
    scenario = scenario_from_config(cfg)
    os.makedirs(args.out_dir, exist_ok=True)
    summary = run_monte_carlo(scenario)
    reps_path = os.path.join(args.out_dir, "reps.csv")
    summary_path = os.path.join(args.out_dir, "summary.json")
    summary.write_csv(reps_path)
    with open(summary_path, "w", encoding="utf-8") as fh:
        fh.write(summary.to_json(indent=2) + "\n")
    print(f"{scenario.name}: R={scenario.R} failures={summary.failures}")
    if summary.recovery_rate is not None:
        print(f"support recovery rate: {summary.recovery_rate:.3f}")
    if summary.witness_rate is not None:
        print(f"witness pass rate: {summary.witness_rate:.3f}")
    if summary.ks:
        print("ks distances:", " ".join(f"{k:.4f}" for k in summary.ks))
    print(f"wrote {reps_path} and {summary_path}")
    return 0


def _cmd_report(args):
    reps_path = os.path.join(args.in_dir, "reps.csv")
    if not os.path.exists(reps_path):
        print(f"no reps.csv under {args.in_dir}", file=sys.stderr)
        return 1
    with open(reps_path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]

    stat_cols = [j for j, name in enumerate(header)
                 if name.startswith("stat") and name[4:].isdigit()]
    status_col = header.index("status")
    ok_rows = [r for r in rows if r[status_col] == "ok"]

    written = []
    for j in stat_cols:
        name = header[j]
        values = np.sort(np.array([float(r[j]) for r in ok_rows]))
        m = values.size
        if m == 0:
            continue
        theo = np.array([normal_quantile((i - 0.5) / m)
                         for i in range(1, m + 1)])
        path = os.path.join(args.in_dir, f"qq_{name}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("theoretical,empirical\n")
            for t, e in zip(theo, values):
                fh.write(f"{t!r},{e!r}\n")
        written.append(path)

    err_path = os.path.join(args.in_dir, "errors.csv")
    i2, iinf = header.index("err2"), header.index("errinf")
    with open(err_path, "w", encoding="utf-8") as fh:
        fh.write("rep,err2,errinf\n")
        for r in ok_rows:
            fh.write(f"{r[0]},{r[i2]},{r[iinf]}\n")
    written.append(err_path)

    summaries = sorted(glob.glob(os.path.join(args.in_dir, "summary*.json")))
    if len(summaries) > 1:
        rows_n = []
        for path in summaries:
            with open(path, "r", encoding="utf-8") as fh:
                s = json.load(fh)
            rows_n.append((s["n"], s["err2_median"]))
        table_path = os.path.join(args.in_dir, "error_vs_n.csv")
        with open(table_path, "w", encoding="utf-8") as fh:
            fh.write("n,median_err2\n")
            for n, med in sorted(rows_n):
                fh.write(f"{n},{med!r}\n")
        written.append(table_path)

    for path in written:
        print(f"wrote {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
