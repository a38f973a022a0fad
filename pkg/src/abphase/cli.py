"""Command-line front end.

Subcommands: run, sweep, validate, list-fixtures. Scenario arguments are
file paths, or bare fixture names resolved against the shipped fixture
directory (override with the ABPHASE_FIXTURE_DIR environment variable).
Exit codes: 0 success, 1 load/validation failure, 2 a requested method
did not converge.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from pathlib import Path

from .scenario import (
    FIXTURE_ENV_VAR,
    RunReport,
    ValidationError,
    load_scenario,
    run_scenario,
    run_sweep,
    sweep_convergence_diagnostics,
)

CSV_COLUMNS = ["scenario", "method", "phase_rad", "phase_normalized",
               "err_estimate", "n_evals", "wall_ms", "converged"]


def fixture_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV_VAR)
    if env:
        return Path(env)
    return Path(__file__).parent / "fixtures"


def resolve_scenario_path(arg: str) -> Path:
    p = Path(arg)
    if p.exists():
        return p
    for candidate in (fixture_dir() / arg, fixture_dir() / f"{arg}.yaml"):
        if candidate.exists():
            return candidate
    raise FileNotFoundError(
        f"no such scenario file or fixture: {arg!r} "
        f"(fixture dir: {fixture_dir()})"
    )


def _fmt(x, width=14, prec=8):
    if isinstance(x, float):
        if math.isnan(x):
            return "nan".rjust(width)
        return f"{x:+.{prec}g}".rjust(width)
    return str(x).rjust(width)


def print_report(report: RunReport, diagnostics: bool = False, out=sys.stdout):
    print(f"scenario: {report.scenario}  (kind={report.kind}, "
          f"reference={report.reference:.10g})", file=out)
    header = f"{'method':<22}{'phase_rad':>16}{'normalized':>14}" \
             f"{'err_est':>12}{'n_evals':>10}{'wall_ms':>10}  conv"
    print(header, file=out)
    print("-" * len(header), file=out)
    for r in report.records:
        if r.error is not None:
            print(f"{r.method:<22}  FAILED: {r.error}", file=out)
            continue
        print(
            f"{r.method:<22}{r.phase_rad:>16.9g}{r.phase_normalized:>14.9g}"
            f"{r.err_estimate:>12.3g}{r.n_evals:>10d}{r.wall_ms:>10.1f}  "
            f"{'yes' if r.converged else 'NO'}",
            file=out,
        )
        if diagnostics and r.diagnostics:
            for k, v in sorted(r.diagnostics.items()):
                print(f"{'':<24}{k} = {v}", file=out)
    devs = report.pairwise_deviations
    if len(devs) > 0:
        worst = max(devs.items(), key=lambda kv: kv[1] if math.isfinite(kv[1]) else -1.0)
        print(f"pairwise |d(normalized)|: worst {worst[0]} = {worst[1]:.3g}", file=out)
    print(file=out)


def write_csv(path, reports: list[RunReport], sweep_parameter: str | None = None,
              footer_lines: list[str] | None = None):
    cols = list(CSV_COLUMNS)
    if sweep_parameter is not None:
        cols = ["sweep_parameter", "sweep_value"] + cols
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        for rep in reports:
            for r in rep.records:
                row = [rep.scenario, r.method, repr(r.phase_rad),
                       repr(r.phase_normalized), repr(r.err_estimate),
                       r.n_evals, f"{r.wall_ms:.3f}", r.converged]
                if sweep_parameter is not None:
                    row = [sweep_parameter, rep.sweep_value] + row
                writer.writerow(row)
        for line in footer_lines or []:
            fh.write(f"# {line}\n")


def _add_common(p):
    p.add_argument("scenario", help="scenario file path or fixture name")
    p.add_argument("--csv", metavar="PATH", help="write machine-readable CSV")
    p.add_argument("--units", choices=["si", "natural"],
                   help="override the config's unit system")
    p.add_argument("--rel-tol", type=float, metavar="X",
                   help="override quadrature relative tolerance")
    p.add_argument("--threads", type=int, default=1, metavar="N",
                   help="worker threads for cubature and field kernels")
    p.add_argument("--diagnostics", action="store_true",
                   help="include self-term and flux-line statistics")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="abphase",
        description="Aharonov-Bohm phases by independent routes: Wilson loop, "
                    "enclosed flux, and the gauge-invariant field overlap.",
    )
    sub = ap.add_subparsers(dest="command", required=True)
    _add_common(sub.add_parser("run", help="run one scenario"))
    _add_common(sub.add_parser("sweep", help="run a scenario's parameter sweep"))
    v = sub.add_parser("validate", help="validate a scenario file")
    v.add_argument("scenario")
    sub.add_parser("list-fixtures", help="list shipped scenario fixtures")
    return ap


def _load(args):
    path = resolve_scenario_path(args.scenario)
    cfg = load_scenario(path)
    if getattr(args, "units", None):
        data = dict(cfg.data)
        data["units"] = args.units
        from .scenario import validate_config

        cfg = validate_config(data)
    return cfg


def _set_threads(n: int):
    if n > 1:
        try:
            import numba

            numba.set_num_threads(max(1, n))
        except Exception:
            pass


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "list-fixtures":
        d = fixture_dir()
        for f in sorted(d.glob("*.yaml")):
            print(f.stem)
        return 0

    try:
        cfg = _load(args)
    except (ValidationError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if args.command == "validate":
        print(f"{args.scenario}: OK ({cfg.kind}, methods: {', '.join(cfg.methods)})")
        return 0

    _set_threads(args.threads)

    if args.command == "run":
        report = run_scenario(cfg, rel_tol=args.rel_tol, threads=args.threads,
                              diagnostics=args.diagnostics)
        print_report(report, diagnostics=args.diagnostics)
        if args.csv:
            write_csv(args.csv, [report])
        return 0 if report.all_converged else 2

    # sweep
    try:
        reports = run_sweep(cfg, rel_tol=args.rel_tol, threads=args.threads,
                            diagnostics=args.diagnostics)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for rep in reports:
        print(f"--- {cfg.data['sweep']['parameter']} = {rep.sweep_value}")
        print_report(rep, diagnostics=args.diagnostics)
    diag = sweep_convergence_diagnostics(reports)
    footer = [
        f"{m}: final |normalized-1| = {d['final_deviation']:.3g}, "
        f"monotone = {d['monotone_decreasing']}"
        for m, d in sorted(diag.items())
    ]
    for line in footer:
        print(line)
    if args.csv:
        write_csv(args.csv, reports,
                  sweep_parameter=cfg.data["sweep"]["parameter"],
                  footer_lines=footer)
    return 0 if all(r.all_converged for r in reports) else 2


if __name__ == "__main__":
    sys.exit(main())
