import io
import json
import shutil

import pytest

from floatinv.cli import EXIT_FAIL, EXIT_OK, EXIT_TIMEOUT, EXIT_USAGE, main

REPORT_KEYS = {
    "benchmark", "algorithm", "strategy", "relax", "degree", "m", "bar", "a", "format", "rounding", "status",
    "width", "low", "up", "target", "report_location", "invariants", "invariants_approx", "gammas", "coarse",
    "coarse_provenance", "term_size", "residual", "min_lambda", "samples", "violations", "range_violations",
    "probes", "rounds", "wall_time", "message", "certificate",
}


def test_run_ok_writes_json(bench_path, tmp_path, capsys):
    out = tmp_path / "r.ndjson"
    code = main(["run", str(bench_path("ex2")), "--samples", "2000", "--json", str(out)])
    assert code == EXIT_OK
    text = capsys.readouterr().out
    assert text.startswith("benchmark ex2: OK")
    (line,) = out.read_text().splitlines()
    rec = json.loads(line)
    assert set(rec) == REPORT_KEYS
    assert rec["status"] == "OK" and rec["violations"] == 0 and rec["width"] <= 2.5


def test_run_failure_exit_code(bench_path, capsys):
    assert main(["run", str(bench_path("nbody")), "--samples", "0", "--timeout", "60"]) == EXIT_FAIL
    assert ": F" in capsys.readouterr().out


def test_run_timeout_exit_code(bench_path, capsys):
    assert main(["run", str(bench_path("sine_newton")), "--timeout", "0.001"]) == EXIT_TIMEOUT
    assert ": TO" in capsys.readouterr().out


@pytest.mark.parametrize("argv", [
    ["run", "{ex1}", "--degree", "0"],
    ["run", "{ex1}", "--bar", "-1"],
    ["run", "{ex1}", "--no-such-flag"],
    ["run", "/nonexistent/file.prog"],
    ["frobnicate"],
    [],
    ["bench", "/nonexistent/suite"],
    ["bench", "--configs", "s3:r9", "--only", "ex1"],
])
def test_usage_errors(argv, bench_path, capsys):
    argv = [a.replace("{ex1}", str(bench_path("ex1"))) for a in argv]
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == EXIT_USAGE
    assert "error" in capsys.readouterr().err


def test_parse_error_is_usage_error(tmp_path, capsys):
    bad = tmp_path / "bad.prog"
    bad.write_text("#precondition: 0 <= x && x <= 1\nfloat x;\nwhile (True) { x = x + ; }\n")
    assert main(["run", str(bad)]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "bad.prog: 3:" in err


LP = "free c\n3*lam1 + 1*c = 1/3\nlam1 >= 0\n-1 <= c <= 0\nminimize: 1*lam1\n"


def test_solve_lp_file_and_stdin(tmp_path, capsys, monkeypatch):
    f = tmp_path / "p.lp"
    f.write_text(LP)
    assert main(["solve-lp", str(f)]) == EXIT_OK
    from_file = capsys.readouterr().out
    assert from_file.startswith("status optimal") and "var lam1 1/9" in from_file.splitlines()
    monkeypatch.setattr("sys.stdin", io.StringIO(LP))
    assert main(["solve-lp", "-"]) == EXIT_OK
    assert capsys.readouterr().out == from_file
    monkeypatch.setattr("sys.stdin", io.StringIO("x >= 0\n1*x = -1\n"))
    assert main(["solve-lp", "-", "--backend", "highs"]) == EXIT_FAIL
    monkeypatch.setattr("sys.stdin", io.StringIO("this is not an lp\n"))
    assert main(["solve-lp", "-"]) == EXIT_USAGE


def test_cfg_dump(bench_path, capsys):
    assert main(["cfg", str(bench_path("ex1"))]) == EXIT_OK
    text = capsys.readouterr().out
    assert "l0" in text and "x" in text


def test_constraints_dump(bench_path, capsys):
    assert main(["constraints", str(bench_path("ex1"))]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert lines and all("=>" in l for l in lines)
    assert any("10" in l for l in lines)  # the coarse box shows up in the premises


def test_bench_empty_suite(tmp_path, capsys):
    assert main(["bench", str(tmp_path)]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and lines[0].startswith("Benchmark")


def test_bench_table_and_report(bench_path, tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    shutil.copy(bench_path("ex2"), suite / "ex2.prog")
    out = tmp_path / "bench.ndjson"
    code = main(["bench", str(suite), "--configs", "s2:r2", "--samples", "1000", "--json", str(out)])
    assert code == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert "S2/R2 Range" in lines[0] and lines[2].startswith("ex2")
    recs = [json.loads(l) for l in out.read_text().splitlines()]
    assert [r["benchmark"] for r in recs] == ["ex2"]


def test_bench_degree_sweep(bench_path, tmp_path, capsys):
    suite = tmp_path / "suite"
    suite.mkdir()
    shutil.copy(bench_path("ex2"), suite / "ex2.prog")
    out = tmp_path / "deg.ndjson"
    code = main(["bench", str(suite), "--degrees", "1,2", "--configs", "s2:r2", "--samples", "0",
                 "--json", str(out)])
    assert code in (EXIT_OK, EXIT_FAIL)
    header = capsys.readouterr().out.splitlines()[0]
    assert "degree=1 Range" in header and "degree=2 Range" in header and "Term Size" in header
    recs = {r["degree"]: r for r in map(json.loads, out.read_text().splitlines())}
    assert set(recs) == {1, 2}
    assert recs[2]["term_size"] > recs[1]["term_size"]
