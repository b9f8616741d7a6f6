"""
Tests for the sequence generators and the lsc / relaxation / Jensen runners.
"""
import sys
sys.path.insert(0, '.')

import numpy as np
import pytest

from config import load_json_file
from envelope import best_laminate
from errors import BadTheta, ConfigError, HypothesisViolation, NonHomogeneousOperator, NotInKernel, ZeroVector
from experiments import (ExperimentConfig, FamilyConfig, concentration_sequence, jensen_check, kernel_residual,
                         lower_order_decay, oscillation_sequence, run_experiment, sequence_residual,
                         young_measure_from_laminate)
from integrand import build_integrand
from measure_lab import singular_polar_check
from pde_operator import OperatorSpec, builtin_operator
from spectral_projection import afree_plane_wave

CURL_GRAD = {"builtin": "curl", "d": 2, "m": 1}
CURL_MATRIX = {"builtin": "curl", "d": 2, "m": 2}


def create_mixed_order_operator():
    """div u + u_1."""
    return OperatorSpec(d=2, N=2, n=1, k=1,
                        terms=[((1, 0), [[1.0, 0.0]]), ((0, 1), [[0.0, 1.0]]), ((0, 0), [[1.0, 0.0]])])


def create_lsc_config(**overrides):
    settings = {"kind": "lsc", "op": CURL_GRAD, "integrand": {"name": "norm"},
                "family": {"kind": "oscillation", "P0": [1.0, 0.0], "xi": [1.0, 0.0], "js": [2, 4, 8]},
                "grid": [32, 32]}
    settings.update(overrides)
    return ExperimentConfig.from_dict(settings)


def test_oscillation_sequence():
    """Zero-mean laminate oscillation around A0, A-free along the kernel direction."""
    print("\n=== Testing oscillation_sequence ===")
    op = builtin_operator("curl", 2, 1)
    mu = oscillation_sequence(op, [0.5, -0.5], [1.0, 0.0], [1.0, 0.0], 0.3, 0.0, 4, grid=(40, 8))
    assert mu.grid == (40, 8)
    assert np.allclose(mu.total(), [0.5, -0.5], atol=1e-12), f"mean moved to {mu.total()}"
    assert set(np.round(mu.density[0].ravel(), 12)) == {1.2, 0.2}
    assert np.allclose(mu.density[1], -0.5)
    smooth = oscillation_sequence(op, None, [1.0, 0.0], [1.0, 0.0], 0.5, 0.05, 8, grid=(64, 64))
    assert sequence_residual(op, smooth) <= 1e-10
    print("PASSED: oscillation sequence")


def test_oscillation_errors():
    """Amplitudes outside ker M(xi), bad theta and oversized eps are refused."""
    print("\n=== Testing oscillation errors ===")
    op = builtin_operator("curl", 2, 1)
    with pytest.raises(NotInKernel):
        oscillation_sequence(op, None, [0.0, 1.0], [1.0, 0.0], 0.5, 0.0, 4)
    with pytest.raises(BadTheta):
        oscillation_sequence(op, None, [1.0, 0.0], [1.0, 0.0], 1.0, 0.0, 4)
    with pytest.raises(BadTheta):
        oscillation_sequence(op, None, [1.0, 0.0], [1.0, 0.0], 0.5, 0.3, 4)
    with pytest.raises(ZeroVector):
        oscillation_sequence(op, None, [0.0, 0.0], [1.0, 0.0], 0.5, 0.0, 4)
    assert kernel_residual(op, [0.0, 1.0], [1.0, 0.0]) == pytest.approx(1.0)
    print("PASSED: oscillation errors")


def test_concentration_sequence():
    """Unit-integral slabs and a hyperplane limit whose polar lies in the wave cone."""
    print("\n=== Testing concentration_sequence ===")
    op = builtin_operator("div", 2)
    mu = concentration_sequence(op, [0.0, 1.0], [1.0, 0.0], 32, grid=(64, 64))
    assert np.allclose(mu.total(), [0.0, 1.0]), f"slab mass {mu.total()}"
    assert sequence_residual(op, mu) <= 1e-10
    limit = concentration_sequence(op, [0.0, 2.0], [1.0, 0.0], 1, grid=(16, 16), limit=True)
    assert len(limit.singular) == 1
    piece = limit.singular[0]
    assert piece.kind == "hyperplane" and piece.mass == pytest.approx(2.0)
    assert np.allclose(piece.polar, [0.0, 1.0])
    assert not any(c.flagged for c in singular_polar_check(limit, op))
    with pytest.raises(NonHomogeneousOperator):
        concentration_sequence(create_mixed_order_operator(), [0.0, 1.0], [1.0, 0.0], 4)
    with pytest.raises(ConfigError):
        concentration_sequence(op, [0.0, 1.0], [1.0, 0.0], 1000, grid=(16, 16))
    print("PASSED: concentration sequence")


def test_experiment_config_parsing():
    """Configs load from JSON with operator paths relative to the file."""
    print("\n=== Testing ExperimentConfig ===")
    cfg = ExperimentConfig.from_dict(load_json_file("data/osc_abs.json"), base_dir="data")
    assert cfg.kind == "lsc" and cfg.family.js == [4, 8, 16, 32]
    assert cfg.operator().canonical_key() == builtin_operator("curl", 2, 1).canonical_key()
    resolved = cfg.resolved_dict()
    assert resolved["op"]["N"] == 2
    assert resolved["envelope"]["seed"] == 0
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "lsc"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "anneal", "op": CURL_GRAD})
    with pytest.raises(ConfigError):
        create_lsc_config(colour="blue")
    with pytest.raises(ConfigError):
        FamilyConfig(js=[8, 4])
    with pytest.raises(ConfigError):
        FamilyConfig(kind="spiral")
    with pytest.raises(ConfigError):
        load_json_file("data/missing.json")
    print("PASSED: config parsing")


def test_lsc_oscillation_run():
    """The norm along a laminate stays above its limit value."""
    print("\n=== Testing lsc experiment ===")
    report = run_experiment(create_lsc_config())
    assert report.verdict == "pass", f"verdict {report.verdict}, gap {report.gap}"
    assert report.gap == pytest.approx(0.5, abs=1e-9)
    assert report.series["j"] == [2, 4, 8]
    assert set(report.series) == {"j", "F", "residual", "ac", "singular"}
    assert report.config["op"]["d"] == 2
    print("PASSED: lsc oscillation")


def test_lsc_mollification_family():
    """Mollifying a hyperplane measure on finer grids keeps |.|-mass exactly."""
    print("\n=== Testing mollification family ===")
    cfg = create_lsc_config(op={"builtin": "div", "d": 2, "m": 1},
                            family={"kind": "mollification", "P0": [0.0, 1.0], "xi": [1.0, 0.0],
                                    "js": [32, 64, 128], "eps_cells": 4})
    report = run_experiment(cfg)
    assert report.limit_value == pytest.approx(1.0)
    assert all(v == pytest.approx(1.0, abs=1e-9) for v in report.values), f"values {report.values}"
    assert report.passed
    print("PASSED: mollification family")


def test_lsc_expected_failure():
    """A config marked expect=fail that does fail is scored expected-fail."""
    print("\n=== Testing expected failure ===")
    cfg = create_lsc_config(integrand={"name": "twowell", "params": {"P0": [1.0, 0.0]}},
                            family={"kind": "oscillation", "P0": [2.0, 0.0], "xi": [1.0, 0.0], "js": [2, 4, 8]},
                            expect="fail")
    report = run_experiment(cfg)
    assert report.gap <= -0.9, f"gap {report.gap}"
    assert report.verdict == "expected-fail" and report.passed
    print("PASSED: expected failure")


def test_young_measure_from_laminate():
    """The two-well laminate puts weight 1/2 on each well."""
    print("\n=== Testing young_measure_from_laminate ===")
    tw = build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)
    ym = young_measure_from_laminate(best_laminate(tw, None, [0.0, 0.0], [1.0, 0.0]), [0.0, 0.0])
    weights = sorted(w for w, _ in ym["atoms"])
    points = sorted(round(a[0], 2) for _, a in ym["atoms"])
    assert weights == pytest.approx([0.5, 0.5], abs=1e-3)
    assert points == pytest.approx([-1.0, 1.0], abs=1e-2)
    assert ym["lambda_density"] == 0.0
    print("PASSED: laminate Young measure")


def test_jensen_regular():
    """Jensen for |.| on hand-built atomic measures, with and without concentration."""
    print("\n=== Testing regular Jensen check ===")
    cfg = ExperimentConfig.from_dict({
        "kind": "jensen", "op": CURL_GRAD, "integrand": {"name": "norm"},
        "jensen": {"points": [{"atoms": [[0.5, [-1.0, 0.0]], [0.5, [1.0, 0.0]]]},
                              {"atoms": [[1.0, [0.0, 0.0]]], "recession_atoms": [[1.0, [0.0, 1.0]]],
                               "lambda_density": 3.0}]},
    })
    report = jensen_check(cfg)
    assert report.verdict == "pass"
    assert report.series["lhs"] == pytest.approx([0.0, 3.0])
    assert report.series["rhs"] == pytest.approx([1.0, 3.0])
    bad = ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_GRAD,
                                      "jensen": {"points": [{"atoms": [[0.7, [1.0, 0.0]]]}]}})
    with pytest.raises(ConfigError):
        jensen_check(bad)
    print("PASSED: regular Jensen")


def test_jensen_malformed_laminate():
    """Laminate entries without a direction or with a nameless integrand are config errors."""
    print("\n=== Testing malformed Jensen laminates ===")
    entries = [
        {"laminate": {"A0": [0.0, 0.0]}},
        {"laminate": {"P0": "east"}},
        {"laminate": {"P0": [1.0, 0.0], "integrand": {"params": {}}}},
        {"points": [{"atoms": [[0.5], [0.5, [1.0, 0.0]]]}]},
    ]
    for jensen in entries:
        cfg = ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_GRAD, "jensen": jensen})
        with pytest.raises(ConfigError):
            jensen_check(cfg)
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_GRAD, "integrand": {"params": {}}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"kind": "lsc", "op": CURL_GRAD, "grid": ["wide", 8]})
    print("PASSED: malformed Jensen laminates")


def test_jensen_singular_hypotheses():
    """A barycenter outside the rank-one cone is a hypothesis violation, fatal under strict."""
    print("\n=== Testing singular Jensen hypotheses ===")
    r = 1.0 / np.sqrt(2.0)
    points = [{"recession_atoms": [[1.0, [r, 0.0, 0.0, r]]]}]
    cfg = ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_MATRIX, "integrand": {"name": "norm"},
                                      "jensen": {"location": "singular", "points": points}})
    report = jensen_check(cfg)
    assert report.verdict == "hypothesis-violation"
    assert not report.passed
    strict = ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_MATRIX, "integrand": {"name": "norm"},
                                         "jensen": {"location": "singular", "points": points, "strict": True}})
    with pytest.raises(HypothesisViolation):
        jensen_check(strict)
    good = ExperimentConfig.from_dict({"kind": "jensen", "op": CURL_MATRIX, "integrand": {"name": "norm"},
                                       "jensen": {"location": "singular", "points": [
                                           {"recession_atoms": [[0.5, [r, r, 0.0, 0.0]], [0.5, [r, -r, 0.0, 0.0]]]}]}})
    report = jensen_check(good)
    assert report.verdict == "pass", f"breakdown {report.breakdown}"
    assert report.series["lhs"][0] == pytest.approx(r)
    print("PASSED: singular hypotheses")


def test_lower_order_decay():
    """The principal residual of A_r-free waves decays like r for div u + u_1."""
    print("\n=== Testing lower_order_decay ===")
    decay = lower_order_decay(create_mixed_order_operator(), (1, 1), [1.0, 0.5, 0.25, 0.125], (32, 32))
    print(f"  slope {decay.slope:.4f}")
    assert decay.expected_slope == 1
    assert abs(decay.slope - 1.0) <= 0.1, f"slope {decay.slope}"
    assert np.all(np.diff(decay.residuals) < 0), "residuals should shrink with r"
    with pytest.raises(ConfigError):
        lower_order_decay(builtin_operator("div", 2), (1, 1), [1.0, 0.5], (16, 16))
    print("PASSED: lower-order decay")


def test_relaxation_target_per_cell():
    """A plane-wave target is integrated cell by cell; cube averages undercount a strictly convex f."""
    print("\n=== Testing relaxation target ===")
    cfg = ExperimentConfig.from_dict({
        "kind": "relax", "op": CURL_GRAD, "integrand": {"name": "area"}, "grid": [16, 16],
        "family": {"mesh": [1, 2], "js": [1, 2]},
        "envelope": {"grid": [8, 8], "restarts": 1, "max_iters": 5},
        "target": {"kind": "plane_wave", "eta": [1, 0], "amplitude": 1.0},
    })
    report = run_experiment(cfg)
    wave = afree_plane_wave(builtin_operator("curl", 2, 1), [1, 0], (16, 16)).values
    expected = float(np.mean(np.sqrt(1.0 + np.sum(wave ** 2, axis=0))))
    print(f"  target {report.limit_value:.8f}, integral of f(u) {expected:.8f}")
    assert report.limit_value == pytest.approx(expected, abs=1e-6)
    assert report.details["targets_by_mesh"]["1"] < expected - 0.1
    assert 8 <= report.details["cell_states"] <= 16
    assert report.verdict == "pass", f"gap {report.gap}"
    print("PASSED: relaxation target")


if __name__ == "__main__":
    print("Running experiments tests...")

    test_oscillation_sequence()
    test_oscillation_errors()
    test_concentration_sequence()
    test_experiment_config_parsing()
    test_lsc_oscillation_run()
    test_lsc_mollification_family()
    test_lsc_expected_failure()
    test_young_measure_from_laminate()
    test_jensen_regular()
    test_jensen_malformed_laminate()
    test_jensen_singular_hypotheses()
    test_lower_order_decay()
    test_relaxation_target_per_cell()

    print("\n" + "="*50)
    print("ALL EXPERIMENTS TESTS PASSED!")
    print("="*50)
