"""Command-line front end.

Subcommands: check, solve, interpolate, diagnose, compare.  Every artifact
is deterministic for a fixed config: JSON is written with sorted keys and
shortest-roundtrip floats, CSVs use fixed column orders, and anything
runtime-dependent (wall time, library versions) goes to the stderr log
only, never into files that byte-level reproducibility tests compare.

Exit codes: 0 success / consistent; 1 input, output, or config problem;
2 hypothesis or feasibility failure (also: comparison found inconsistent
solutions); 3 iteration did not converge (the per-step trace is still
written).

The FORTET_THREADS environment variable caps the BLAS thread pools; it
must take effect before numpy is first imported, which is why this module
defers all numeric imports into the command bodies.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from pathlib import Path

_THREAD_VARS = ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS")

TRACE_COLUMNS = ("n", "sup_change", "normalization_residual", "hilbert_step",
                 "case1_candidate")


def _apply_thread_env() -> None:
    n = os.environ.get("FORTET_THREADS")
    if not n:
        return
    for var in _THREAD_VARS:
        os.environ.setdefault(var, n)


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _fmt(value) -> str:
    """Deterministic CSV cell: floats by repr, NaN as empty, bools lowercase."""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return repr(value)
    return str(value)


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def _write_trace(path: Path, trace) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_COLUMNS)
        for state in trace:
            d = state.diagnostics
            writer.writerow([
                _fmt(state.n),
                _fmt(float(d.get("sup_change", math.nan))),
                _fmt(float(d.get("normalization_residual", math.nan))),
                _fmt(float(d.get("hilbert_step", math.nan))),
                _fmt(bool(d.get("case1_candidate", False))),
            ])


def _write_potentials(path: Path, grid, columns) -> None:
    """columns: list of (name, 1-D array) written after the node coordinates."""
    import numpy as np
    nodes = np.asarray(grid.nodes)
    if nodes.ndim == 1:
        coords = nodes[:, None]
        headers = ["x"]
    else:
        coords = nodes
        headers = [f"x{k + 1}" for k in range(coords.shape[1])]
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers + [name for name, _ in columns])
        for i in range(coords.shape[0]):
            row = [_fmt(float(c)) for c in coords[i]]
            row += [_fmt(float(arr[i])) for _, arr in columns]
            writer.writerow(row)


def _check_payload(report) -> dict:
    payload = {
        "hypotheses": {
            name: {"status": r.status, "detail": r.detail,
                   "offending_nodes": list(r.offending_nodes)}
            for name, r in report.hypotheses.items()
        },
        "hard_checks_pass": report.hard_checks_pass,
        "solver_admissible": report.solver_admissible,
        "swap_recommended": report.swap_recommended,
    }
    if report.condition_star is not None:
        cs = report.condition_star
        payload["condition_star"] = {
            "estimate": cs.estimate, "verdict": cs.verdict,
            "tail_exponent": cs.tail_exponent,
            "zero_denominator_nodes": list(cs.zero_denominator_nodes),
        }
    if report.difference_kernel is not None:
        dk = report.difference_kernel
        payload["difference_kernel"] = {
            "status": dk.status, "condition": dk.condition,
            "T1": dk.T1, "T2": dk.T2, "detail": dk.detail,
        }
    return payload


def _solution_payload(problem, solution, coupling, kl) -> dict:
    import numpy as np
    payload = {
        "problem_hash": problem.problem_hash,
        "config": problem.config,
        "case_tag": solution.case_tag,
        "trigger_iteration": solution.trigger_iteration,
        "iterations": solution.iterations,
        "refine_steps": solution.refine_steps,
        "residuals": dict(solution.residuals),
        "warnings": list(solution.warnings),
    }
    if solution.h is not None:
        payload["h_min"] = float(np.min(solution.h))
        payload["h_max"] = float(np.max(solution.h))
    if coupling is not None:
        payload["coupling"] = {
            "row_marginal_resid": coupling.row_marginal_resid,
            "col_marginal_resid": coupling.col_marginal_resid,
            "mass": coupling.mass,
        }
    if kl is not None:
        payload["kl_objective"] = kl.value
        payload["kl_absolutely_continuous"] = kl.absolutely_continuous
    return payload


def _solve_problem(problem):
    """Shared solve path: returns (solution, coupling, kl) with bridge
    outputs skipped for degenerate runs."""
    from . import bridge, fortet
    solution = fortet.run_fortet(problem.kernel, problem.marginals,
                                 problem.options)
    coupling = kl = None
    if solution.case_tag != "degenerate":
        coupling = bridge.build_coupling(solution.phi, solution.psi,
                                         problem.kernel, problem.marginals)
        kl = bridge.kl_objective(coupling.pi,
                                 bridge.prior_coupling(problem.kernel,
                                                       problem.marginals),
                                 problem.kernel.grid1.weights,
                                 problem.kernel.grid2.weights)
    return solution, coupling, kl


def cmd_check(args) -> int:
    from . import problem as prob
    from .config import load_problem
    problem = load_problem(args.config)
    report = prob.full_report(problem.kernel, problem.marginals)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "feasibility.json", _check_payload(report))
    for name, check in sorted(report.hypotheses.items()):
        print(f"{name}: {check.status}" + (f" ({check.detail})" if check.detail else ""))
    if report.condition_star is not None:
        print(f"integrability_estimate: {report.condition_star.verdict} "
              f"(estimate {report.condition_star.estimate!r})")
    if report.swap_recommended:
        print("swap_recommended: true")
    print(f"solver_admissible: {report.solver_admissible}")
    return 0 if report.solver_admissible else 2


def cmd_solve(args) -> int:
    from .config import load_problem
    from .errors import NonConvergenceError
    problem = load_problem(args.config)
    if args.force:
        from dataclasses import replace
        problem = replace(problem, options=replace(problem.options, force=True))
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        solution, coupling, kl = _solve_problem(problem)
    except NonConvergenceError as exc:
        if exc.trace:
            _write_trace(out / "trace.csv", exc.trace)
        _log(f"solve failed after {time.perf_counter() - started:.3f} s: {exc}")
        return 3
    elapsed = time.perf_counter() - started
    _write_trace(out / "trace.csv", solution.trace)
    _write_json(out / "summary.json",
                _solution_payload(problem, solution, coupling, kl))
    if solution.h is not None and solution.phi is not None:
        _write_potentials(out / "potentials.csv", problem.grid,
                          [("phi", solution.phi), ("psi", solution.psi),
                           ("h", solution.h)])
    _log(f"solve finished in {elapsed:.3f} s")
    print(f"case_tag={solution.case_tag} iterations={solution.iterations} "
          f"refine_steps={solution.refine_steps} "
          f"s1_resid={solution.residuals['s1_resid']!r} "
          f"s2_resid={solution.residuals['s2_resid']!r}")
    return 0


def cmd_interpolate(args) -> int:
    from . import bridge
    from .config import load_problem
    from .errors import NonConvergenceError
    try:
        times = [float(t) for t in args.times.split(",") if t.strip() != ""]
    except ValueError:
        _log(f"could not parse --times {args.times!r}")
        return 1
    if not times:
        _log("--times is empty")
        return 1
    problem = load_problem(args.config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    started = time.perf_counter()
    try:
        solution, coupling, kl = _solve_problem(problem)
    except NonConvergenceError as exc:
        if exc.trace:
            _write_trace(out / "trace.csv", exc.trace)
        _log(f"solve failed: {exc}")
        return 3
    if solution.case_tag == "degenerate":
        _log("cannot interpolate a degenerate solution")
        return 2
    interp = bridge.entropic_interpolation(solution.phi, solution.psi,
                                           problem.kernel, times)
    with (out / "interpolation.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "x", "density"])
        for k, t in enumerate(interp.times):
            for i, x in enumerate(problem.grid.nodes):
                writer.writerow([_fmt(float(t)), _fmt(float(x)),
                                 _fmt(float(interp.densities[k, i]))])
    payload = _solution_payload(problem, solution, coupling, kl)
    payload["interpolation_times"] = list(interp.times)
    payload["interpolation_masses"] = list(interp.masses)
    _write_json(out / "summary.json", payload)
    _log(f"interpolation finished in {time.perf_counter() - started:.3f} s")
    print(f"interpolated {len(interp.times)} time slices; "
          f"worst mass drift {max(abs(m - 1.0) for m in interp.masses)!r}")
    return 0


def cmd_diagnose(args) -> int:
    from . import hilbert, sinkhorn
    from .config import load_problem
    problem = load_problem(args.config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    d_col = hilbert.projective_diameter(problem.kernel.values)
    d_row = hilbert.projective_diameter(problem.kernel.values.T)
    trace = sinkhorn.sinkhorn_trace_hilbert(problem.kernel, problem.marginals,
                                            tol=problem.options.tol,
                                            max_iter=problem.options.max_iter)
    max_ratio = max(trace.ratios) if trace.ratios else None
    payload = {
        "problem_hash": problem.problem_hash,
        "projective_diameter_columns": d_col.value,
        "projective_diameter_columns_exact": d_col.exact,
        "projective_diameter_rows": d_row.value,
        "projective_diameter_rows_exact": d_row.exact,
        "contraction_bound": trace.bound,
        "contraction_guaranteed": trace.guaranteed,
        "sinkhorn_iterations": trace.iterations,
        "hilbert_distances": list(trace.distances),
        "contraction_ratios": list(trace.ratios),
        "max_observed_ratio": max_ratio,
        "ratios_within_bound": (max_ratio is None
                                or max_ratio <= trace.bound + 1e-9),
    }
    _write_json(out / "diagnose.json", payload)
    bound_txt = ("no-contraction-guarantee" if not trace.guaranteed
                 else repr(trace.bound))
    print(f"contraction_bound={bound_txt} sinkhorn_iterations={trace.iterations} "
          f"max_observed_ratio={max_ratio!r}")
    return 0


def cmd_compare(args) -> int:
    from . import fortet, sinkhorn
    from .config import load_problem
    problem = load_problem(args.config)
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    solution, _, _ = _solve_problem(problem)
    if solution.case_tag == "degenerate":
        _log("cannot compare a degenerate solution")
        return 2
    pair = sinkhorn.run_sinkhorn(problem.kernel, problem.marginals,
                                 tol=problem.options.tol,
                                 max_iter=problem.options.max_iter)
    report = fortet.verify_uniqueness(solution, _ScalingView(pair),
                                      problem.marginals, tol=args.tol)
    _write_potentials(out / "potentials_fortet.csv", problem.grid,
                      [("phi", solution.phi), ("psi", solution.psi),
                       ("h", solution.h)])
    _write_potentials(out / "potentials_sinkhorn.csv", problem.grid,
                      [("phi", pair.u), ("psi", pair.v)])
    payload = {
        "problem_hash": problem.problem_hash,
        "fortet_iterations": solution.iterations,
        "fortet_refine_steps": solution.refine_steps,
        "sinkhorn_iterations": pair.iterations,
        "sinkhorn_log_domain": pair.log_domain,
        "ratio_spread_phi": report.ratio_spread_phi,
        "ratio_spread_psi": report.ratio_spread_psi,
        "ray_constant_phi": report.c_phi,
        "ray_constant_psi": report.c_psi,
        "consistent": report.consistent,
        "tolerance": args.tol,
    }
    _write_json(out / "compare.json", payload)
    print(f"consistent={report.consistent} "
          f"ratio_spread_phi={report.ratio_spread_phi!r} "
          f"ratio_spread_psi={report.ratio_spread_psi!r}")
    return 0 if report.consistent else 2


class _ScalingView:
    """Adapter giving a ScalingPair the phi/psi attributes the uniqueness
    check expects."""

    def __init__(self, pair):
        self.phi = pair.u
        self.psi = pair.v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fortetbridge",
        description="Schrodinger-system potentials via Fortet's iteration, "
                    "with a Sinkhorn baseline and bridge diagnostics.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="problem config JSON")
        p.add_argument("--output", default=".", help="artifact directory")

    p = sub.add_parser("check", help="run feasibility checks only")
    common(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("solve", help="run the fixed-point solver")
    common(p)
    p.add_argument("--force", action="store_true",
                   help="run even when feasibility checks fail")
    p.set_defaults(fn=cmd_solve)

    p = sub.add_parser("interpolate", help="solve and write time marginals")
    common(p)
    p.add_argument("--times", default="0,0.25,0.5,0.75,1",
                   help="comma-separated times in [0, 1]")
    p.set_defaults(fn=cmd_interpolate)

    p = sub.add_parser("diagnose", help="projective-metric diagnostics")
    common(p)
    p.set_defaults(fn=cmd_diagnose)

    p = sub.add_parser("compare", help="cross-check the two solvers")
    common(p)
    p.add_argument("--tol", type=float, default=1e-8,
                   help="ray-spread consistency tolerance")
    p.set_defaults(fn=cmd_compare)
    return parser


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    from .errors import (ConfigError, FeasibilityError, FortetBridgeError,
                         NonConvergenceError)
    try:
        return args.fn(args)
    except ConfigError as exc:
        _log(f"config error: {exc}")
        return 1
    except OSError as exc:
        _log(f"I/O error: {exc}")
        return 1
    except FeasibilityError as exc:
        _log(f"feasibility failure: {exc}")
        return 2
    except NonConvergenceError as exc:
        _log(f"did not converge: {exc}")
        return 3
    except FortetBridgeError as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
