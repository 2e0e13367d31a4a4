"""Command line: ``floatinv run|bench|solve-lp|cfg|constraints``.

Exit codes: 0 all runs OK, 1 some run failed (F), 2 some run timed out
(TO, takes precedence over F), 3 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from importlib import resources
from pathlib import Path
from typing import Optional, Sequence

from .cfg import CfgError, loop_cfg
from .frontend import FrontendError, parse_program
from .lp import format_outcome, lp_solve, parse_lp
from .pipeline import FAIL, OK, TIMEOUT, RunOptions, RunReport, default_degree, run

EXIT_OK, EXIT_FAIL, EXIT_TIMEOUT, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    try:
        n = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if n < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {n}")
    return n


def _positive_rational(text: str) -> Fraction:
    try:
        q = Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")
    if q <= 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return q


def _positive_float(text: str) -> float:
    return float(_positive_rational(text))


def _int_list(text: str) -> list[int]:
    return [_positive_int(t) for t in text.split(",") if t.strip()]


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--alg", choices=("A", "B"), default="A", help="algorithm (default A)")
    p.add_argument("--relax", choices=("r1", "r2"), default="r2", help="consecution relaxation (default r2)")
    p.add_argument("--strategy", choices=("s1", "s2"), default="s2", help="range optimization (default s2)")
    p.add_argument("--degree", type=_positive_int, help="template degree (default 2, or 4 for high-degree updates)")
    p.add_argument("--m", type=_positive_int, help="Handelman product bound (default: the degree)")
    p.add_argument("--bar", type=_positive_rational, default=Fraction(1, 10), help="barrier factor (default 0.1)")
    p.add_argument("--a", type=_positive_rational, default=Fraction(1, 10000), help="range margin (default 0.0001)")
    p.add_argument("--format", choices=("f32", "f64"), default="f32", dest="fmt")
    p.add_argument("--rounding", choices=("nearest", "any"), default="nearest")
    p.add_argument("--timeout", type=_positive_float, default=300.0, help="seconds per run (default 300)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target", help="override the #target variable")
    p.add_argument("--backend", choices=("highs", "exact"), default="highs", help="LP backend (default highs)")
    p.add_argument("--squares", action="store_true", help="add v^2 >= 0 premises for template variables")
    p.add_argument("--report-at", choices=("head", "end"), default="head",
                   help="location whose range is optimized (default: loop head with the exit guard)")
    p.add_argument("--samples", type=int, default=100_000, help="sampled transitions for the dynamic check")
    p.add_argument("--json", type=Path, help="write newline-delimited JSON records here")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="floatinv", description="Polynomial invariants for floating-point loops.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("run", help="synthesize an invariant for one program")
    p.add_argument("file", type=Path)
    _add_solver_flags(p)

    p = sub.add_parser("bench", help="run a suite of programs and print a results table")
    p.add_argument("suite", nargs="?", type=Path, help="directory of .prog files (default: bundled suite)")
    _add_solver_flags(p)
    p.add_argument("--configs", default="s1:r1,s2:r2",
                   help="comma-separated strategy:relaxation pairs (default s1:r1,s2:r2)")
    p.add_argument("--degrees", type=_int_list, help="degree sweep, e.g. 2,4 (prints term sizes)")
    p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes")
    p.add_argument("--only", help="comma-separated benchmark names to keep")

    p = sub.add_parser("solve-lp", help="solve an LP in the text format (file or -)")
    p.add_argument("file")
    p.add_argument("--backend", choices=("highs", "exact"), default="exact")
    p.add_argument("--timeout", type=_positive_float)

    p = sub.add_parser("cfg", help="print the summarized fp-CFG")
    p.add_argument("file", type=Path)
    p.add_argument("--format", choices=("f32", "f64"), default="f32", dest="fmt")

    p = sub.add_parser("constraints", help="print the implication constraints (coarse box included)")
    p.add_argument("file", type=Path)
    _add_solver_flags(p)
    return parser


def options_from(args) -> RunOptions:
    return RunOptions(
        algorithm=args.alg, relax=args.relax, strategy=args.strategy, degree=args.degree, m=args.m,
        bar=args.bar, a=args.a, fmt=args.fmt, rounding=args.rounding, timeout=args.timeout, seed=args.seed,
        target=args.target, backend=args.backend, squares=args.squares, report_at=args.report_at,
        samples=args.samples,
    )


def exit_code(reports: Sequence[RunReport]) -> int:
    statuses = {r.status for r in reports}
    if TIMEOUT in statuses:
        return EXIT_TIMEOUT
    if FAIL in statuses:
        return EXIT_FAIL
    return EXIT_OK


def _load(path: Path, fmt: str):
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror or exc}")
    try:
        return parse_program(text, fmt, path.stem)
    except FrontendError as exc:
        raise UsageError(f"{path}: {exc}")


def write_json(path: Path, reports: Sequence[RunReport]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(json.dumps(r.to_dict(), sort_keys=True) + "\n")


def _fmt_num(x: Optional[float]) -> str:
    if x is None:
        return "-"
    if x != 0 and abs(x) < 1e-3:
        return f"{x:.3g}"
    return f"{x:.4g}"


def describe(r: RunReport) -> str:
    lines = [f"benchmark {r.benchmark}: {r.status}"
             f"  (alg {r.algorithm}, {r.strategy}/{r.relax}, d={r.degree}, m={r.m}, {r.format})"]
    if r.width is not None:
        lines.append(f"range of {r.target} at {r.report_location}: [{r.low:.6g}, {r.up:.6g}]  width {_fmt_num(r.width)}")
    for loc, text in r.invariants_approx.items():
        lines.append(f"  {loc}: {text} >= 0")
    if r.gammas:
        for k, g in r.gammas.items():
            lines.append(f"  error bound {k}: " + ", ".join(f"{v}={_fmt_num(b) if isinstance(b, float) else b}"
                                                         for v, b in g.items()))
    if r.coarse:
        box = ", ".join(f"{v} in [{lo:.4g}, {hi:.4g}]" for v, (lo, hi) in r.coarse.items())
        lines.append(f"  coarse box ({r.coarse_provenance}): {box}")
    extra = []
    if r.term_size is not None:
        extra.append(f"term size {r.term_size}")
    if r.residual is not None:
        extra.append(f"residual {r.residual:.2e}")
    if r.violations is not None:
        extra.append(f"{r.violations} violations in {r.samples} sampled transitions")
    extra.append(f"{r.wall_time:.2f}s")
    lines.append("  " + ", ".join(extra))
    if r.message:
        lines.append(f"  {r.message}")
    return "\n".join(lines)


# -- bench ------------------------------------------------------------------------------------


def suite_files(suite: Optional[Path], only: Optional[str] = None) -> list[Path]:
    if suite is None:
        root = Path(str(resources.files("floatinv") / "benchmarks"))
    else:
        root = suite
    if not root.is_dir():
        raise UsageError(f"not a directory: {root}")
    files = sorted(root.glob("*.prog"))
    if only:
        keep = {n.strip() for n in only.split(",")}
        files = [f for f in files if f.stem in keep]
    return files


def parse_configs(text: str) -> list[tuple[str, str]]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        strat, _, relax = part.partition(":")
        if strat not in ("s1", "s2") or relax not in ("r1", "r2"):
            raise UsageError(f"bad configuration {part!r} (expected e.g. s2:r2)")
        out.append((strat, relax))
    if not out:
        raise UsageError("no configurations given")
    return out


def _run_job(job) -> RunReport:
    path, opts = job
    return run(path, opts, name=Path(path).stem)


def run_jobs(jobs: list, workers: int) -> list[RunReport]:
    if workers <= 1 or len(jobs) <= 1:
        return [_run_job(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_job, jobs))


def _cell(r: RunReport) -> tuple[str, str]:
    if r.status == OK:
        return _fmt_num(r.width), f"{r.wall_time:.2f}"
    return r.status, "-"


def results_table(reports: list[RunReport], configs: list[tuple[str, str]]) -> str:
    """One row per benchmark, range and time per configuration."""
    names = sorted({r.benchmark for r in reports})
    by_key = {(r.benchmark, r.strategy, r.relax): r for r in reports}
    header = ["Benchmark"]
    for s, rl in configs:
        header += [f"{s.upper()}/{rl.upper()} Range", "Time (s)"]
    rows = [header]
    for n in names:
        row = [n]
        for s, rl in configs:
            r = by_key.get((n, s, rl))
            row += list(_cell(r)) if r is not None else ["-", "-"]
        rows.append(row)
    return _render(rows)


def degree_table(reports: list[RunReport], degrees: list[int]) -> str:
    """One row per benchmark, range, time and term size per template degree."""
    names = sorted({r.benchmark for r in reports})
    by_key = {(r.benchmark, r.degree): r for r in reports}
    header = ["Benchmark"]
    for d in degrees:
        header += [f"degree={d} Range", "Time (s)", "Term Size"]
    rows = [header]
    for n in names:
        row = [n]
        for d in degrees:
            r = by_key.get((n, d))
            if r is None:
                row += ["-", "-", "-"]
            else:
                row += list(_cell(r)) + [str(r.term_size) if r.term_size is not None else "-"]
        rows.append(row)
    return _render(rows)


def _render(rows: list[list[str]]) -> str:
    widths = [max(len(r[k]) for r in rows) for k in range(len(rows[0]))]
    out = []
    for i, r in enumerate(rows):
        out.append("  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(r, widths))))
        if i == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out)


# -- commands ---------------------------------------------------------------------------------


def cmd_run(args) -> int:
    program = _load(args.file, args.fmt)
    report = run(program, options_from(args), name=args.file.stem)
    print(describe(report))
    if args.json:
        write_json(args.json, [report])
    return exit_code([report])


def cmd_bench(args) -> int:
    files = suite_files(args.suite, args.only)
    base = options_from(args)
    for f in files:
        _load(f, base.fmt)  # fail fast on unreadable suites
    jobs = []
    if args.degrees:
        strat, relax = parse_configs(args.configs)[0]
        for f in files:
            for d in args.degrees:
                opts = _replace(base, strategy=strat, relax=relax, degree=d, m=args.m or d)
                jobs.append((str(f), opts))
    else:
        configs = parse_configs(args.configs)
        for f in files:
            for strat, relax in configs:
                jobs.append((str(f), _replace(base, strategy=strat, relax=relax)))
    reports = run_jobs(jobs, args.jobs)
    reports.sort(key=lambda r: r.benchmark)  # stable: configuration order kept per benchmark
    if args.degrees:
        print(degree_table(reports, args.degrees))
    else:
        print(results_table(reports, parse_configs(args.configs)))
    if args.json:
        write_json(args.json, reports)
    return exit_code(reports)


def _replace(opts: RunOptions, **changes) -> RunOptions:
    from dataclasses import replace

    return replace(opts, **changes)


def cmd_solve_lp(args) -> int:
    try:
        text = sys.stdin.read() if args.file == "-" else Path(args.file).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read {args.file}: {exc.strerror or exc}")
    try:
        problem = parse_lp(text)
    except ValueError as exc:
        raise UsageError(str(exc))
    out = lp_solve(problem, args.backend, args.timeout)
    sys.stdout.write(format_outcome(out))
    return EXIT_OK if out.ok else EXIT_FAIL


def cmd_cfg(args) -> int:
    program = _load(args.file, args.fmt)
    try:
        print(loop_cfg(program).dump().rstrip("\n"))
    except CfgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def cmd_constraints(args) -> int:
    from . import coarse as coarse_mod
    from .cfg import live_variables
    from .pipeline import _report, _solve_config
    from .solve import SolveError, build_instance, template_locations

    program = _load(args.file, args.fmt)
    opts = options_from(args)
    cfg = loop_cfg(program)
    target = opts.target or program.target
    if target is None:
        raise UsageError("no target variable (use #target or --target)")
    degree = opts.degree or default_degree(cfg)
    config = _solve_config(opts, degree, opts.m or degree)
    live = live_variables(cfg, [target])
    names = [v for v in cfg.var_names if any(v in vs for vs in live.values())]
    try:
        inv = coarse_mod.coarse_invariant(program, cfg, config.fmt, names, seed=opts.seed)
        if config.algorithm == "B":
            inst = build_instance(cfg, config, target, None, search=inv.boxes[_report(cfg, config)][target], scale=inv)
        else:
            locs = template_locations(cfg, config.report_at)
            inst = build_instance(cfg, config, target, inv,
                                  coarse_mod.verified_vars(cfg, inv, config.fmt, names, locs))
    except (SolveError, coarse_mod.CoarseError, ValueError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for c in inst.constraints:
        print(c)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "bench": cmd_bench, "solve-lp": cmd_solve_lp, "cfg": cmd_cfg,
            "constraints": cmd_constraints}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"floatinv: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
