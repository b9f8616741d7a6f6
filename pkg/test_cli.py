"""
Tests for the command-line surface: JSON reports, exit codes and determinism.
"""
import json
import sys
import tempfile
from pathlib import Path
sys.path.insert(0, '.')

import numpy as np

from cli import load_operator, render_json, run
from fields_io import write_field, write_measure
from measure_lab import Box, GridMeasure, SingularPiece
from spectral_projection import PeriodicField


def run_json(tmp_path, argv, name="out.json"):
    """Run the CLI with --out and return (exit code, parsed report)."""
    out = tmp_path / name
    code = run(argv + ["--out", str(out)])
    return code, json.loads(out.read_text())


def create_field_file(tmp_path):
    rng = np.random.default_rng(4)
    path = tmp_path / "u.bin"
    write_field(path, PeriodicField(rng.standard_normal((2, 16, 16))))
    return path


def test_operator_check(tmp_path):
    """div in d=2 has constant rank 1 and a two-dimensional wave-cone span."""
    print("\n=== Testing operator-check ===")
    code, report = run_json(tmp_path, ["operator-check", "--op", "data/div2.json"])
    assert code == 0
    assert report["schema"] == 1 and report["tool"] == "aflib" and report["command"] == "operator-check"
    result = report["result"]
    assert result["constant_rank"] is True and result["rank"] == 1
    assert result["span_dim"] == 2
    assert report["config"]["op"] == "data/div2.json"
    print("PASSED: operator-check")


def test_wavecone_queries(tmp_path):
    """Membership in and out of the rank-one cone; scans write their CSV."""
    print("\n=== Testing wavecone ===")
    code, report = run_json(tmp_path, ["wavecone", "--op", "builtin:curl:2:2", "--P", "1,0,0,0"])
    assert code == 0 and report["result"]["membership"]["member"] is True
    code, report = run_json(tmp_path, ["wavecone", "--op", "builtin:curl:2:2", "--P", "1,0,0,1"])
    assert code == 0 and report["result"]["membership"]["member"] is False
    csv = tmp_path / "scan.csv"
    code, report = run_json(tmp_path, ["wavecone", "scan", "--op", "builtin:div:2", "--P", "0,1",
                                       "--samples", "36", "--csv", str(csv)])
    assert code == 0 and report["result"]["span_dim"] == 2
    lines = csv.read_text().splitlines()
    assert lines[0] == "xi0,xi1,rank,residual" and len(lines) == 1 + report["result"]["sampling"]["count"]
    code, report = run_json(tmp_path, ["wavecone", "--op", "builtin:div:2"])
    assert code == 1 and report["error"]["type"] == "ConfigError"
    print("PASSED: wavecone")


def test_project_and_norm(tmp_path):
    """Projection leaves an A-free field; norms report the negative Sobolev value."""
    print("\n=== Testing project / norm ===")
    field = create_field_file(tmp_path)
    projected = tmp_path / "pu.bin"
    code, report = run_json(tmp_path, ["project", "--op", "builtin:div:2", "--field", str(field),
                                       "--field-out", str(projected)])
    assert code == 0
    assert report["result"]["output_residual"] <= 1e-10
    assert report["result"]["input_residual"] > 0.1
    assert projected.exists()
    code, report = run_json(tmp_path, ["norm", "--field", str(projected), "--k", "1", "--op", "builtin:div:2"])
    assert code == 0
    assert report["result"]["negative_sobolev"]["value"] > 0.0
    assert report["result"]["afree_residual"] <= 1e-10
    print("PASSED: project and norm")


def test_envelope_two_well(tmp_path):
    """The two-well envelope at 0 comes out at most 0.05."""
    print("\n=== Testing envelope ===")
    trace = tmp_path / "trace.csv"
    code, report = run_json(tmp_path, ["envelope", "--op", "data/curlgrad2.json", "--f", "twowell",
                                       "--params", '{"P0": [1, 0]}', "--A0", "0,0", "--trace-out", str(trace)])
    assert code == 0
    assert report["result"]["value"] <= 0.05, f"envelope value {report['result']['value']}"
    assert report["result"]["grid"] == [64, 64]
    assert report["config"]["integrand"]["name"] == "twowell"
    assert trace.read_text().startswith("restart,iteration,value")
    print("PASSED: envelope")


def test_measure_eval(tmp_path):
    """An atom of mass 2 costs 2 under |.|; a non-cone polar is flagged with exit 1."""
    print("\n=== Testing measure-eval ===")
    atom = SingularPiece("atom", 2.0, [0.6, 0.8], point=[0.0, 0.0])
    write_measure(tmp_path / "mu.json", GridMeasure(Box.unit(2), np.zeros((2, 8, 8)), [atom]))
    code, report = run_json(tmp_path, ["measure-eval", "--f", "norm", "--mu", str(tmp_path / "mu.json")])
    assert code == 0 and abs(report["result"]["functional"] - 2.0) < 1e-12
    identity = SingularPiece("atom", 1.0, np.array([1.0, 0.0, 0.0, 1.0]) / np.sqrt(2.0), point=[0.0, 0.0])
    write_measure(tmp_path / "bad.json", GridMeasure(Box.unit(2), np.zeros((4, 8, 8)), [identity]))
    code, report = run_json(tmp_path, ["measure-eval", "--f", "norm", "--mu", str(tmp_path / "bad.json"),
                                       "--op", "builtin:curl:2:2"])
    assert code == 1
    assert report["result"]["polar_ok"] is False
    print("PASSED: measure-eval")


def test_experiment_from_config(tmp_path):
    """lsc on data/osc_abs.json passes; asking for the wrong kind is an error."""
    print("\n=== Testing experiment ===")
    csv = tmp_path / "series.csv"
    code, report = run_json(tmp_path, ["experiment", "lsc", "--config", "data/osc_abs.json", "--csv", str(csv)])
    assert code == 0
    assert report["result"]["verdict"] == "pass"
    assert report["result"]["gap"] >= -1e-3
    assert "config" not in report["result"] and report["config"]["kind"] == "lsc"
    assert csv.read_text().splitlines()[0] == "j,F,residual,ac,singular"
    code, report = run_json(tmp_path, ["experiment", "relax", "--config", "data/osc_abs.json"])
    assert code == 1 and report["error"]["type"] == "ConfigError"
    code, report = run_json(tmp_path, ["experiment", "lsc", "--scenario", "twowell_osc"])
    assert code == 0 and report["result"]["verdict"] == "expected-fail"
    print("PASSED: experiment")


def test_usage_and_errors(tmp_path):
    """Usage mistakes exit 2; library errors exit 1 with an error object."""
    print("\n=== Testing exit codes ===")
    assert run([]) == 2
    assert run(["frobnicate"]) == 2
    assert run(["envelope", "--op", "builtin:div:2", "--f", "norm", "--A0", "a,b"]) == 2
    assert run(["experiment", "lsc", "--scenario", "nope"]) == 2
    code, report = run_json(tmp_path, ["operator-check", "--op", "data/no_such_operator.json"])
    assert code == 1
    assert set(report) == {"schema", "error"} and report["error"]["type"] == "ParseError"
    code, report = run_json(tmp_path, ["operator-check", "--op", "builtin:grad"])
    assert code == 1 and report["error"]["type"] == "UnknownName"
    print("PASSED: exit codes")


def test_bad_parameter_values(tmp_path):
    """Malformed integrand parameters come back as ConfigError objects, not tracebacks."""
    print("\n=== Testing malformed parameters ===")
    base = ["envelope", "--op", "builtin:curl:2:1", "--A0", "0,0", "--grid", "16,16", "--restarts", "1",
            "--max-iters", "5"]
    code, report = run_json(tmp_path, base + ["--f", "norm", "--params", '{"modulus": {"c": 1.0}}'])
    assert code == 1
    assert set(report) == {"schema", "error"} and report["error"]["type"] == "ConfigError"
    code, report = run_json(tmp_path, base + ["--f", "twowell", "--params", '{"P0": "abc"}'])
    assert code == 1 and report["error"]["type"] == "ConfigError"
    assert "P0" in report["error"]["message"]
    print("PASSED: malformed parameters")


def test_deterministic_output(tmp_path):
    """Same arguments and seed give byte-identical reports."""
    print("\n=== Testing determinism ===")
    argv = ["envelope", "--op", "builtin:curl:2", "--f", "twowell", "--params", '{"P0": [1, 0]}',
            "--A0=0.2,-0.1", "--grid", "16,16", "--restarts", "3", "--max-iters", "20", "--seed", "11"]
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(argv + ["--out", str(a)]) == 0
    assert run(argv + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()
    print("PASSED: deterministic")


def test_render_json():
    """Numpy values become plain JSON; non-finite floats become null."""
    print("\n=== Testing render_json ===")
    text = render_json({"b": np.array([1.5, np.inf]), "a": np.int64(3), "c": 0.1})
    assert json.loads(text) == {"a": 3, "b": [1.5, None], "c": 0.1}
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert load_operator("builtin:curl:2:2").N == 4
    print("PASSED: render_json")


if __name__ == "__main__":
    print("Running cli tests...")

    tmp = Path(tempfile.mkdtemp())
    test_operator_check(tmp)
    test_wavecone_queries(tmp)
    test_project_and_norm(tmp)
    test_envelope_two_well(tmp)
    test_measure_eval(tmp)
    test_experiment_from_config(tmp)
    test_usage_and_errors(tmp)
    test_bad_parameter_values(tmp)
    test_deterministic_output(tmp)
    test_render_json()

    print("\n" + "="*50)
    print("ALL CLI TESTS PASSED!")
    print("="*50)
