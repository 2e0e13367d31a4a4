import json
from dataclasses import replace
from fractions import Fraction

import pytest

from floatinv import F32, loop_cfg, parse_file, parse_program
from floatinv.pipeline import RunOptions, reverify, run, synthesize
from floatinv.coarse import coarse_invariant, verified_vars
from floatinv.poly import Poly, parse_poly, poly_str
from floatinv.solve import (
    InitialProbeInfeasible, Prober, build_instance, exact_resolve, polish, sample_inductiveness, strategy_s2,
    verify_solution,
)
from floatinv.templates import SolveConfig


@pytest.fixture(scope="module")
def ex1_run():
    from conftest import BENCH

    prog = parse_file(BENCH / "ex1.prog")
    info = {}
    sol = synthesize(prog, RunOptions(samples=0), info=info)
    return prog, sol, info["instance"]


def test_accepted_solution_residual(ex1_run):
    _, sol, _ = ex1_run
    v = verify_solution(sol.system, sol.values)
    assert v.accepted and v.residual <= Fraction(1, 10 ** 6)


def test_perturbed_coefficient_is_rejected(ex1_run):
    _, sol, inst = ex1_run
    values = dict(sol.values)
    c = inst.template.unknown("l0", 0)
    values[c] += Fraction(1, 1000)
    v = verify_solution(sol.system, values)
    assert v.residual > Fraction(1, 10 ** 4) and not v.accepted


def test_negative_lambda_is_rejected(ex1_run):
    _, sol, _ = ex1_run
    values = dict(sol.values)
    values[sol.system.nonneg[0]] = Fraction(-1, 100)
    assert not verify_solution(sol.system, values).accepted


def test_containment_check(ex1_run):
    _, sol, _ = ex1_run
    v = verify_solution(sol.system, sol.values, (Fraction(-1), Fraction(1)), sol.up, sol.low)
    assert not v.contained and not v.accepted


def test_ex1_probe_values(ex1_run):
    _, sol, inst = ex1_run
    # frozen from this implementation: the tightest pair found is about
    # +-8.2 (width 16.43); the exact fixed-point range +-8 is out of reach
    # for degree-2 templates under the loosened consecution
    assert Prober(inst)(sol.up, sol.low).outcome.ok
    assert not Prober(inst)(Fraction(8), Fraction(-8)).outcome.ok
    assert 16 < sol.width < 16.5


def test_s2_at_tolerance_probes_once(ex1_run):
    _, sol, inst = ex1_run
    prober = Prober(inst)
    best = strategy_s2(prober, (sol.low, sol.up), tol=sol.up - sol.low + 1)
    assert prober.count == 1 and (best.low, best.up) == (sol.low, sol.up)


def test_s2_initial_probe_infeasible(ex1_run):
    _, _, inst = ex1_run
    with pytest.raises(InitialProbeInfeasible):
        strategy_s2(Prober(inst), (Fraction(-1), Fraction(1)))


def test_sampling_finds_no_violations(ex1_run):
    _, sol, inst = ex1_run
    res = sample_inductiveness(sol, inst.cfg, F32, 20_000, seed=1)
    assert res["transitions"] >= 20_000 and res["violations"] == 0 and res["range_violations"] == 0
    assert sample_inductiveness(sol, inst.cfg, F32, 0)["violations"] == 0


def test_flipped_sign_is_caught(ex1_run):
    _, sol, inst = ex1_run
    p = sol.etas["l0"]
    mono = max((m for m, _ in p if m), key=lambda m: abs(p.coeff(m)))
    broken = p - Poly({mono: 2 * p.coeff(mono)})
    bad = replace(sol, etas={"l0": broken})
    assert sample_inductiveness(bad, inst.cfg, F32, 20_000, seed=1)["violations"] > 0


def test_polish_and_exact_resolve(ex1_run):
    _, sol, inst = ex1_run
    names = inst.template.unknowns()
    noisy = {k: float(v) * (1 + 1e-13) for k, v in sol.values.items()}
    fixed = polish(sol.system, noisy, names)
    assert fixed is not None and verify_solution(sol.system, fixed).accepted
    small = Prober(inst)(Fraction(9), Fraction(-9)).system
    exact = exact_resolve(small, names)
    if exact is not None:
        assert verify_solution(small, exact).residual == 0


def test_enlarge_and_retry():
    src = ("#precondition: -1 <= i && i <= 1\n#coarse: x in [-0.1, 0.1]\n#target: x\nfloat i;\nfloat x = 0;\n"
           "while (True) { x = 1.5*x - 0.7*x + 1.6*i; }")
    prog = parse_program(src)
    info = {}
    sol = synthesize(prog, RunOptions(samples=0, retries=6), info=info)
    assert info["enlargements"] >= 1 and sol.accepted
    lo, hi = sol.coarse.boxes["l0"]["x"]
    assert lo <= -8 and hi >= 8
    r = run(prog, RunOptions(samples=0, retries=1))
    assert r.status == "F" and "refuted" in r.message


def test_verified_box_skips_entailment(ex1_run):
    _, _, inst = ex1_run
    # i is never written and 0.8 * 10 + 1.6 < 10, so both boxes are inductive
    assert inst.verified == {"i", "x"}
    assert not [c for c in inst.constraints if c.kind == "entailment"]
    prog = parse_program("#precondition: -1 <= i && i <= 1\n#coarse: x in [-5, 5]\n#target: x\n"
                         "float i;\nfloat x = 0;\nwhile (True) { x = 1.5*x - 0.7*x + 1.6*i; }")
    cfg = loop_cfg(prog)
    inv = coarse_invariant(prog, cfg, F32)
    ver = verified_vars(cfg, inv, F32, ["i", "x"], ["l0"])
    assert ver == {"i"}
    inst = build_instance(cfg, SolveConfig(), "x", inv, frozenset(ver))
    labels = [c.label for c in inst.constraints if c.kind == "entailment"]
    assert labels and all(" x@" in l for l in labels)


def test_report_reverify_and_tamper(bench_path):
    r = run(bench_path("ex1"), RunOptions(samples=0))
    assert r.status == "OK"
    d = json.loads(json.dumps(r.to_dict()))
    assert reverify(d, bench_path("ex1")).accepted
    p = parse_poly(d["invariants"]["l0"])
    d["invariants"]["l0"] = poly_str(p + Poly.const(50))
    assert not reverify(d, bench_path("ex1")).accepted


def test_determinism(bench_path):
    a = run(bench_path("ex2"), RunOptions(samples=2000)).to_dict()
    b = run(bench_path("ex2"), RunOptions(samples=2000)).to_dict()
    a.pop("wall_time")
    b.pop("wall_time")
    assert a == b


def test_nbody_fails(bench_path):
    r = run(bench_path("nbody"), RunOptions(samples=0, timeout=60))
    assert r.status == "F"


def test_algorithm_b_guarded_loop():
    prog = parse_program("#precondition: 0 <= x && x <= 1\n#target: x\nfloat x;\n"
                         "while (0 <= x && x <= 1) { x = 0.5 * x + 0.6; }")
    r = run(prog, RunOptions(algorithm="B", samples=20_000))
    assert r.status == "OK", r.message
    assert r.certificate["boxes"] is None
    # head states lie in [0, 1.1]
    assert -0.05 <= r.low <= 0 and 1.1 <= r.up <= 1.2
    assert reverify(r, prog).accepted
