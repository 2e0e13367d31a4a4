from fractions import Fraction

import numpy as np
import pytest

from floatinv import F32, loop_cfg, parse_file, parse_program
from floatinv.coarse import (
    DATA, DECLARED, INTERVAL, coarse_invariant, data_driven, enlarge, from_interval_iteration,
    iteration_bound, pad_box, round_magnitude, verified_vars,
)
from floatinv.simulate import run_program, sample_precondition

STRAIGHT = "#precondition: 0 <= x && x <= 1\nfloat x;\nx = 2 * x + 1;\n"


def test_round_magnitude_examples():
    assert round_magnitude(Fraction(10)) == 10
    assert round_magnitude(Fraction(5, 4)) == 2
    assert round_magnitude(Fraction(62, 10 ** 6)) == Fraction(7, 10 ** 5)
    assert round_magnitude(Fraction(0)) == 0


def test_pad_rule():
    assert pad_box({"x": (Fraction(-3), Fraction(7))}) == {"x": (Fraction(-9), Fraction(9))}
    hull = {"x": (Fraction(-1, 3), Fraction(2))}
    assert pad_box(hull, 0) == hull


def test_iteration_bounds(bench_path):
    assert iteration_bound(parse_file(bench_path("sine_newton"))) == 10
    assert iteration_bound(parse_file(bench_path("ex1"))) is None
    assert iteration_bound(parse_program(STRAIGHT)) == 0


def test_straight_line_keeps_precondition_box():
    prog = parse_program(STRAIGHT)
    cfg = loop_cfg(prog)
    inv = from_interval_iteration(cfg, 0, F32)
    assert inv.boxes[cfg.initial]["x"] == (0, 1)
    lo, hi = inv.boxes["end"]["x"]
    assert lo <= 1 and hi >= 3 and hi - 3 < 1e-5


def test_sine_newton_interval_iteration(bench_path):
    prog = parse_file(bench_path("sine_newton"))
    cfg = loop_cfg(prog)
    inv = coarse_invariant(prog, cfg, F32, ["i", "x"])
    assert inv.provenance == INTERVAL
    lo, hi = inv.boxes["l0"]["x"]
    assert lo <= -1 and hi >= 1


def test_interval_iteration_is_sound_by_simulation(bench_path):
    prog = parse_file(bench_path("sine_newton"))
    cfg = loop_cfg(prog)
    inv = from_interval_iteration(cfg, 10, F32, ["i", "x"])
    rng = np.random.default_rng(3)
    inputs = sample_precondition(prog.variables, prog.precondition, 100_000, rng, prog.kinds)
    hull = run_program(prog, inputs, F32, 10)
    for v in ("i", "x"):
        lo, hi = inv.boxes["l0"][v]
        assert lo <= hull[v][0] and hull[v][1] <= hi


def test_ex1_data_driven(bench_path):
    prog = parse_file(bench_path("ex1"))
    cfg = loop_cfg(prog)
    hull = data_driven(prog, cfg, F32, pad=0).boxes["l0"]["x"]
    assert -8 <= hull[0] and hull[1] <= 8
    inv = data_driven(prog, cfg, F32)
    assert inv.provenance == DATA and not inv.verified
    lo, hi = inv.boxes["l0"]["x"]
    assert -16 <= lo <= -8 and 8 <= hi <= 16
    # i is never written, so it keeps its precondition range
    assert inv.boxes["l0"]["i"] == (-1, 1)
    assert data_driven(prog, cfg, F32, seed=4).boxes == data_driven(prog, cfg, F32, seed=4).boxes


def test_declared_pragma_wins():
    prog = parse_program("#precondition: 0 <= x && x <= 1\n#coarse: x in [-5, 5]\nfloat x;\n"
                         "while (True) { x = 0.5 * x; }")
    inv = coarse_invariant(prog, loop_cfg(prog), F32)
    assert inv.provenance == DECLARED
    assert inv.boxes["l0"]["x"] == (-5, 5)


def test_verified_and_enlarge(bench_path):
    prog = parse_file(bench_path("ex1"))
    cfg = loop_cfg(prog)
    inv = data_driven(prog, cfg, F32)
    # 0.8 * 10 + 1.6 < 10: the padded box is closed under one step
    assert verified_vars(cfg, inv, F32, ["i", "x"], ["l0"]) == {"i", "x"}
    # 0.8 * 5 + 1.6 > 5: this one is not
    small = inv.with_boxes({"l0": {"i": (Fraction(-1), Fraction(1)), "x": (Fraction(-5), Fraction(5))}})
    ver = verified_vars(cfg, small, F32, ["i", "x"], ["l0"])
    assert ver == {"i"}
    big = enlarge(small, Fraction(2), keep=ver)
    assert big.boxes["l0"]["i"] == (-1, 1)
    assert big.boxes["l0"]["x"] == (-10, 10)


def test_every_box_is_finite(bench_path):
    for name in ("ex1", "ex2", "big_loop", "sine_newton"):
        prog = parse_file(bench_path(name))
        cfg = loop_cfg(prog)
        for box in coarse_invariant(prog, cfg, F32).boxes.values():
            for lo, hi in box.values():
                assert np.isfinite(float(lo)) and np.isfinite(float(hi)) and lo <= hi


def test_overflow_is_reported(bench_path):
    from floatinv.simulate import SimulationOverflow

    prog = parse_program("#precondition: 1 <= x && x <= 2\nfloat x;\nwhile (True) { x = x * x; }")
    with pytest.raises(SimulationOverflow):
        data_driven(prog, loop_cfg(prog), F32, n_iters=200)
