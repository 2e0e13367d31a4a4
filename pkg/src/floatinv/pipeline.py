"""End-to-end runs: program text in, ``RunReport`` out."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Optional

from . import coarse as coarse_mod
from .cfg import CfgError, FpCfg, live_variables, loop_cfg
from .fpformat import float_format
from .frontend import FrontendError, SourceProgram, parse_program
from .interval import IntervalError
from .lp import Deadline, LpTimeout
from .poly import float_poly_str, poly_str
from .simulate import SimulationOverflow
from .solve import (
    InitialProbeInfeasible,
    InvariantSolution,
    Prober,
    SolveError,
    build_instance,
    check_entailment_and_retry,
    finalize,
    sample_inductiveness,
    strategy_s1,
    strategy_s2,
    template_locations,
    tighten_target,
)
from .templates import SolveConfig
from .terms import to_ratfunc

OK, FAIL, TIMEOUT = "OK", "F", "TO"


@dataclass(frozen=True)
class RunOptions:
    algorithm: str = "A"
    relax: str = "r2"
    strategy: str = "s2"
    degree: Optional[int] = None  # None: 2, or 4 for updates of degree > 2
    m: Optional[int] = None  # None: same as the degree
    bar: Fraction = Fraction(1, 10)
    a: Fraction = Fraction(1, 10000)
    fmt: str = "f32"
    rounding: str = "nearest"
    timeout: float = 300.0
    seed: int = 0
    target: Optional[str] = None
    backend: str = "highs"
    squares: bool = False
    report_at: str = "head"
    tighten_rounds: int = 12
    retries: int = 3
    enlarge_factor: Fraction = Fraction(2)
    samples: int = 100_000
    coarse_inputs: int = 100
    coarse_iters: int = 10_000


@dataclass
class RunReport:
    benchmark: str
    algorithm: str
    strategy: str
    relax: str
    degree: int
    m: int
    bar: float
    a: float
    format: str
    rounding: str
    status: str
    width: Optional[float] = None
    low: Optional[float] = None
    up: Optional[float] = None
    target: Optional[str] = None
    report_location: Optional[str] = None
    invariants: dict = field(default_factory=dict)  # loc -> exact canonical text
    invariants_approx: dict = field(default_factory=dict)  # loc -> rounded text
    gammas: dict = field(default_factory=dict)  # "src->tgt#k" -> {var: bound}
    coarse: dict = field(default_factory=dict)  # var -> [lo, hi] at the report location
    coarse_provenance: Optional[str] = None
    term_size: Optional[int] = None
    residual: Optional[float] = None
    min_lambda: Optional[float] = None
    samples: int = 0
    violations: Optional[int] = None
    range_violations: Optional[int] = None
    probes: int = 0
    rounds: int = 0
    wall_time: float = 0.0
    message: str = ""
    # exact data needed to re-check the invariants without re-solving
    certificate: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def default_degree(cfg: FpCfg) -> int:
    """2, or 4 when some update has degree above 2."""
    top = 0
    for t in cfg.transitions:
        for _, term in t.update:
            rf = to_ratfunc(term)
            top = max(top, rf.num.degree(), rf.den.degree())
    return 2 if top <= 2 else 4


def _solve_config(opts: RunOptions, degree: int, m: int) -> SolveConfig:
    return SolveConfig(
        algorithm=opts.algorithm, relax=opts.relax, degree=degree, m=m, bar=Fraction(opts.bar),
        a=Fraction(opts.a), fmt=float_format(opts.fmt, opts.rounding), squares=opts.squares,
        report_at=opts.report_at,
    )


def _optimize(prober: Prober, interval: tuple, strategy: str):
    best = strategy_s2(prober, interval)
    if strategy == "s1":
        best = strategy_s1(prober, best)
    return best


def synthesize(program: SourceProgram, opts: RunOptions, deadline: Optional[Deadline] = None,
               info: Optional[dict] = None) -> InvariantSolution:
    """Steps 1 to 5 of the algorithm; raises ``SolveError`` on failure."""
    deadline = deadline or Deadline(opts.timeout)
    info = info if info is not None else {}
    started = time.perf_counter()
    cfg = loop_cfg(program)
    target = opts.target or program.target
    if target is None:
        raise SolveError("no target variable (use #target or --target)")
    if target not in program.kinds:
        raise SolveError(f"unknown target variable {target!r}")
    degree = opts.degree if opts.degree is not None else default_degree(cfg)
    m = opts.m if opts.m is not None else degree
    config = _solve_config(opts, degree, m)
    info.update(degree=degree, m=m, target=target)

    live = live_variables(cfg, [target])
    names = [v for v in cfg.var_names if any(v in vs for vs in live.values())]
    locs = template_locations(cfg, config.report_at)
    inv = coarse_mod.coarse_invariant(program, cfg, config.fmt, names, seed=opts.seed,
                                      n_inputs=opts.coarse_inputs, n_iters=opts.coarse_iters)
    info["coarse_provenance"] = inv.provenance

    if config.algorithm == "B":
        inst = build_instance(cfg, config, target, None, search=inv.boxes[_report(cfg, config)][target], scale=inv)
        info["instance"] = inst
        prober = Prober(inst, opts.backend, deadline)
        best = _optimize(prober, inst.search, opts.strategy)
        return finalize(inst, best, opts.backend, deadline, started, prober.count)

    def verify_vars(b):
        return coarse_mod.verified_vars(cfg, b, config.fmt, names, locs)

    def solve_once(b, verified):
        inst = build_instance(cfg, config, target, b, verified)
        info["instance"] = inst  # the last attempt, so failed runs still report sizes
        prober = Prober(inst, opts.backend, deadline)
        best = _optimize(prober, inst.search, opts.strategy)
        return inst, best, prober.count

    (inst, best, probes), inv, attempts = check_entailment_and_retry(
        solve_once, inv, verify_vars, opts.enlarge_factor, opts.retries, target)
    info["enlargements"] = attempts
    rounds = 0
    # Loops without exit: the solved range holds at every head visit, so it
    # can replace the target's coarse box and the system can be re-solved.
    if inst.report_premises == [[]] and inst.report_loc in cfg.loop_heads:
        while rounds < opts.tighten_rounds:
            width = best.up - best.low
            tighter = tighten_target(inv, inst.report_loc, target, best.low, best.up)
            try:
                inst2, best2, n2 = solve_once(tighter, verify_vars(tighter))
            except InitialProbeInfeasible:
                break
            probes += n2
            rounds += 1
            if best2.up - best2.low >= width:
                break
            inst, best, inv = inst2, best2, tighter
            if (width - (best.up - best.low)) < width / 400:
                break
    info["rounds"] = rounds
    info["instance"] = inst
    return finalize(inst, best, opts.backend, deadline, started, probes)


def _report(cfg, config) -> str:
    from .solve import report_location

    locs = template_locations(cfg, config.report_at)
    return report_location(cfg, locs, config.report_at)[0]


def run(program: SourceProgram | str | Path, opts: RunOptions = RunOptions(), name: Optional[str] = None) -> RunReport:
    """Full pipeline with the acceptance gate; never raises on solver failure."""
    started = time.perf_counter()
    if isinstance(program, (str, Path)) and not isinstance(program, SourceProgram):
        path = Path(program)
        program = parse_program(path.read_text(encoding="utf-8"), opts.fmt, path.stem)
    name = name or program.name or "program"
    fmt = float_format(opts.fmt, opts.rounding)
    info: dict = {}
    report = RunReport(
        benchmark=name, algorithm=opts.algorithm, strategy=opts.strategy, relax=opts.relax,
        degree=opts.degree or 0, m=opts.m or 0, bar=float(opts.bar), a=float(opts.a), format=opts.fmt,
        rounding=opts.rounding, status=FAIL, target=opts.target or program.target,
    )
    deadline = Deadline(opts.timeout)
    try:
        sol = synthesize(program, opts, deadline, info)
    except LpTimeout:
        report.status = TIMEOUT
        report.message = "time limit reached"
        sol = None
    except (SolveError, CfgError, IntervalError, SimulationOverflow, coarse_mod.CoarseError,
            ZeroDivisionError, ValueError) as exc:
        report.message = f"{type(exc).__name__}: {exc}"
        sol = None
    report.degree = info.get("degree", report.degree)
    report.m = info.get("m", report.m)
    report.target = info.get("target", report.target)
    report.coarse_provenance = info.get("coarse_provenance")
    report.rounds = info.get("rounds", 0)
    inst = info.get("instance")
    if inst is not None:
        report.gammas = {
            f"{inst.cfg.transitions[k].source}->{inst.cfg.transitions[k].target}#{k}":
                {v: (float(g) if not g.__class__.__name__ == "Poly" else poly_str(g)) for v, g in gb.values}
            for k, gb in inst.gammas.items()
        }
        report.term_size = inst.term_size
        if inst.coarse is not None:
            report.coarse = {v: [float(lo), float(hi)] for v, (lo, hi) in inst.coarse.boxes[inst.report_loc].items()}
    if sol is not None:
        report.low, report.up, report.width = float(sol.low), float(sol.up), float(sol.width)
        report.report_location = sol.report_loc
        report.invariants = sol.invariant_text()
        report.invariants_approx = {l: float_poly_str(p) for l, p in sol.etas.items()}
        report.term_size = sol.term_size
        report.residual = float(sol.residual)
        report.min_lambda = sol.min_lambda
        report.probes = sol.probes
        report.certificate = {
            "low": _q(sol.low), "up": _q(sol.up), "bar": _q(sol.config.bar), "a": _q(sol.config.a),
            "report_at": sol.config.report_at, "squares": sol.config.squares,
            "boxes": None if inst.coarse is None else {
                loc: {v: [_q(lo), _q(hi)] for v, (lo, hi) in box.items()} for loc, box in inst.coarse.boxes.items()},
            "verified": sorted(inst.verified),
        }
        if not sol.accepted:
            report.message = "verification failed"
        elif opts.samples > 0:
            try:
                dyn = sample_inductiveness(sol, inst.cfg, fmt, opts.samples, opts.seed)
            except (OverflowError, FloatingPointError) as exc:
                dyn = None
                report.message = f"simulation failed: {exc}"
            if dyn is not None:
                report.samples = dyn["transitions"]
                report.violations = dyn["violations"]
                report.range_violations = dyn["range_violations"]
                if dyn["violations"] == 0 and dyn["range_violations"] == 0:
                    report.status = OK
                else:
                    report.message = "sampled executions violate the invariant"
        else:
            report.status = OK
    report.wall_time = time.perf_counter() - started
    return report


def _q(x) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def reverify(report: RunReport | dict, program: SourceProgram | str | Path, backend: str = "highs"):
    """Re-check a report's invariants from its exact certificate data.

    The multipliers are re-derived by LP with the invariant coefficients
    fixed, then the identities are re-expanded exactly.  Returns a
    ``Verdict`` (``accepted`` is the gate).
    """
    from .poly import parse_poly
    from .solve import recertify

    rep = report.to_dict() if isinstance(report, RunReport) else dict(report)
    cert = rep.get("certificate") or {}
    if not cert or not rep.get("invariants"):
        raise ValueError("report carries no invariant certificate")
    if isinstance(program, (str, Path)):
        path = Path(program)
        program = parse_program(path.read_text(encoding="utf-8"), rep["format"], path.stem)
    cfg = loop_cfg(program)
    opts = RunOptions(algorithm=rep["algorithm"], relax=rep["relax"], bar=Fraction(cert["bar"]),
                      a=Fraction(cert["a"]), fmt=rep["format"], rounding=rep["rounding"],
                      squares=cert.get("squares", False), report_at=cert.get("report_at", "head"))
    config = _solve_config(opts, rep["degree"], rep["m"])
    low, up = Fraction(cert["low"]), Fraction(cert["up"])
    if cert.get("boxes") is None:
        inv = None
    else:
        boxes = {loc: {v: (Fraction(lo), Fraction(hi)) for v, (lo, hi) in box.items()}
                 for loc, box in cert["boxes"].items()}
        inv = coarse_mod.CoarseInvariant(boxes, rep.get("coarse_provenance") or "", frozenset(cert["verified"]))
    inst = build_instance(cfg, config, rep["target"], inv, frozenset(cert.get("verified", ())), search=(low, up))
    etas = {loc: parse_poly(text) for loc, text in rep["invariants"].items()}
    return recertify(inst, etas, up, low, backend)


def parse_source(text: str, fmt: str = "f32", name: str = "program") -> SourceProgram:
    return parse_program(text, fmt, name)
