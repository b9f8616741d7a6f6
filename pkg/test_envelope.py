"""
Tests for laminates and the numerical quasiconvex envelope.
"""
import sys
sys.path.insert(0, '.')

import numpy as np
import pytest

from envelope import (EnvelopeConfig, best_laminate, chi_profile, envelope_recession,
                      envelope_recession_integrand, grid_refinement_series, laminate_oracle,
                      quasiconvex_envelope)
from errors import ConfigError, MissingSubgradient, NonHomogeneousOperator, NotInWaveCone, ShapeError, ZeroVector
from integrand import Integrand, build_integrand, lambda_convexity_check, tabulated_integrand
from pde_operator import OperatorSpec, builtin_operator


def create_small_config(**overrides):
    settings = {"grid": (16, 16), "restarts": 2, "max_iters": 20}
    settings.update(overrides)
    return EnvelopeConfig.from_dict(settings)


def create_two_well():
    return build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)


def create_curl_grad():
    return builtin_operator("curl", 2, 1)


def test_chi_profile():
    """Both profiles average to zero; the sharp one takes exactly two values."""
    print("\n=== Testing chi_profile ===")
    phase = (np.arange(1000) + 0.5) / 1000
    sharp = chi_profile(0.3, 0.0, phase)
    assert set(np.round(sharp, 12)) == {0.7, -0.3}
    assert abs(sharp.mean()) < 1e-12
    smooth = chi_profile(0.3, 0.05, phase)
    assert abs(smooth.mean()) < 1e-3, f"mollified profile has mean {smooth.mean()}"
    assert smooth.min() >= -0.3 - 1e-12 and smooth.max() <= 0.7 + 1e-12
    print("PASSED: chi_profile")


def test_best_laminate_two_well():
    """Splitting 0 into the wells +-P0 costs nothing."""
    print("\n=== Testing best_laminate ===")
    tw = build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)
    lam = best_laminate(tw, None, [0.0, 0.0], [1.0, 0.0])
    assert lam.value <= 1e-4, f"laminate value {lam.value}"
    assert lam.theta == pytest.approx(0.5, abs=1e-3)
    assert lam.scale == pytest.approx(2.0, rel=1e-3)
    convex = best_laminate(build_integrand("norm", {}, 2), None, [0.3, 0.4], [1.0, 0.0])
    assert convex.value == pytest.approx(0.5)
    with pytest.raises(ZeroVector):
        best_laminate(tw, None, [0.0, 0.0], [0.0, 0.0])
    print("PASSED: best_laminate")


def test_laminate_oracle_checks_cone():
    """With an operator, the laminate direction must be in the wave cone."""
    print("\n=== Testing laminate_oracle ===")
    tw = build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)
    assert laminate_oracle(tw, None, [0.0, 0.0], [1.0, 0.0], op=create_curl_grad()) <= 1e-4
    norm4 = build_integrand("norm", {}, 4)
    with pytest.raises(NotInWaveCone):
        laminate_oracle(norm4, None, [0.0] * 4, [1.0, 0.0, 0.0, 1.0], op=builtin_operator("curl", 2, 2))
    print("PASSED: laminate_oracle")


def test_convex_integrands_reproduce_f():
    """Q_A f = f for convex f at 10 random A0."""
    print("\n=== Testing envelope of convex integrands ===")
    op = create_curl_grad()
    rng = np.random.default_rng(0)
    cfg = create_small_config()
    for i, A0 in enumerate(rng.normal(size=(10, 2))):
        name = ("norm", "area")[i % 2]
        f = build_integrand(name, {}, 2)
        result = quasiconvex_envelope(op, f, None, A0, cfg)
        expected = float(f.value(None, A0))
        assert abs(result.value - expected) <= 1e-3, f"{name} at {A0}: {result.value} vs {expected}"
    print("PASSED: convex integrands")


def test_two_well_envelope_at_zero():
    """The two-well envelope at 0 reaches the laminate value 0 on 64^2 with 8 restarts."""
    print("\n=== Testing two-well envelope ===")
    op = create_curl_grad()
    tw = build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)
    result = quasiconvex_envelope(op, tw, None, [0.0, 0.0], EnvelopeConfig())
    print(f"  value {result.value:.3e}, f(A0) {result.f_at_A0}")
    assert result.value <= 0.05, f"envelope value {result.value} above 0.05"
    assert result.f_at_A0 == pytest.approx(1.0)
    assert result.grid == (64, 64)
    assert result.afree_residual <= 1e-10
    assert np.allclose(result.argmin_field.mean, 0.0, atol=1e-12)
    for trace in result.traces:
        assert all(b <= a + 1e-12 for a, b in zip(trace, trace[1:])), "trace is not monotone"
    print("PASSED: two-well envelope")


def test_envelope_errors():
    """Non-homogeneous operators, missing subgradients and bad A0 are refused."""
    print("\n=== Testing envelope errors ===")
    mixed = OperatorSpec(d=2, N=2, n=1, k=1,
                         terms=[((1, 0), [[1.0, 0.0]]), ((0, 1), [[0.0, 1.0]]), ((0, 0), [[1.0, 0.0]])])
    norm = build_integrand("norm", {}, 2)
    with pytest.raises(NonHomogeneousOperator):
        quasiconvex_envelope(mixed, norm, None, [0.0, 0.0], create_small_config())
    bare = Integrand(name="bare", fn=lambda x, A: np.linalg.norm(A, axis=-1), growth_M=1.0, lip_A=1.0)
    with pytest.raises(MissingSubgradient):
        quasiconvex_envelope(create_curl_grad(), bare, None, [0.0, 0.0], create_small_config())
    with pytest.raises(ShapeError):
        quasiconvex_envelope(create_curl_grad(), norm, None, [0.0, 0.0, 0.0], create_small_config())
    print("PASSED: envelope errors")


def test_envelope_config_validation():
    """Unknown keys and out-of-range settings are configuration errors."""
    print("\n=== Testing EnvelopeConfig ===")
    with pytest.raises(ConfigError):
        EnvelopeConfig.from_dict({"restartz": 3})
    with pytest.raises(ConfigError):
        EnvelopeConfig(restarts=0)
    with pytest.raises(ConfigError):
        EnvelopeConfig(backtrack_shrink=1.5)
    with pytest.raises(ConfigError):
        EnvelopeConfig(grid=(8, 8)).resolved_grid(3)
    assert EnvelopeConfig().resolved_grid(2) == (64, 64)
    assert EnvelopeConfig.from_dict(EnvelopeConfig(grid=(8, 8)).to_dict()).grid == (8, 8)
    print("PASSED: EnvelopeConfig")


def test_envelope_deterministic():
    """Same seed, same answer and the same restart summary."""
    print("\n=== Testing determinism ===")
    tw = build_integrand("twowell", {"P0": [1.0, 0.0]}, 2)
    a = quasiconvex_envelope(create_curl_grad(), tw, None, [0.2, 0.1], create_small_config(seed=7))
    b = quasiconvex_envelope(create_curl_grad(), tw, None, [0.2, 0.1], create_small_config(seed=7))
    assert a.value == b.value
    assert [r["final"] for r in a.restarts_summary] == [r["final"] for r in b.restarts_summary]
    print("PASSED: deterministic")


def test_envelope_recession_of_convex():
    """(Q f)^# = f^# = |.| for the norm."""
    print("\n=== Testing envelope_recession ===")
    norm = build_integrand("norm", {}, 2)
    cfg = create_small_config(restarts=1, max_iters=5)
    est = envelope_recession(create_curl_grad(), norm, None, [2.0, 0.0], cfg=cfg)
    assert est.exists
    assert est.upper == pytest.approx(2.0, rel=1e-6)
    with pytest.raises(ZeroVector):
        envelope_recession(create_curl_grad(), norm, None, [0.0, 0.0], cfg=cfg)
    g = envelope_recession_integrand(create_curl_grad(), norm, None, t_grid=(16.0, 32.0), cfg=cfg)
    assert g.name == "envelope_recession"
    assert g.value(None, [0.0, 3.0]) == pytest.approx(3.0, rel=1e-6)
    assert g.value(None, [0.0, 0.0]) == 0.0
    print("PASSED: envelope recession")


def test_grid_refinement_series():
    """One record per grid, values stable for a convex integrand."""
    print("\n=== Testing grid_refinement_series ===")
    norm = build_integrand("norm", {}, 2)
    series = grid_refinement_series(create_curl_grad(), norm, None, [0.3, 0.4],
                                    grids=((8, 8), (16, 16)), cfg=create_small_config(max_iters=5))
    assert [s["grid"] for s in series] == [[8, 8], [16, 16]]
    assert all(s["value"] == pytest.approx(0.5) for s in series)
    print("PASSED: grid refinement")


def test_laminate_bounds_envelope():
    """Laminates bound the envelope from above; the envelope never exceeds f; wells cost nothing."""
    print("\n=== Testing laminate upper bounds ===")
    op = create_curl_grad()
    tw = create_two_well()
    cfg = create_small_config(restarts=3, max_iters=40)
    for A0 in ([0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.5, 0.25], [1.0, 0.0]):
        result = quasiconvex_envelope(op, tw, None, A0, cfg)
        oracle = laminate_oracle(tw, None, A0, [1.0, 0.0], op=op)
        print(f"  A0={A0}: envelope {result.value:.3e}, laminate {oracle:.3e}")
        assert oracle >= result.value - 2e-2, f"laminate {oracle} below envelope {result.value} at {A0}"
        assert result.value <= result.f_at_A0 + 1e-9
    assert quasiconvex_envelope(op, tw, None, [1.0, 0.0], cfg).value <= 1e-3
    print("PASSED: laminate upper bounds")


def test_sharp_warm_starts_fill_whole_cells():
    """Laminate warm starts use volume fractions that are whole numbers of cells."""
    print("\n=== Testing laminate warm starts ===")
    result = quasiconvex_envelope(create_curl_grad(), create_two_well(), None, [0.5, 0.0],
                                  create_small_config(restarts=3, max_iters=5))
    laminates = [r for r in result.restarts_summary if r["kind"] == "laminate"]
    assert laminates, "no laminate warm start was kept"
    for r in laminates:
        assert r["theta"] * 16 == pytest.approx(round(r["theta"] * 16), abs=1e-12), f"theta {r['theta']}"
    assert result.value <= 1e-6, f"exact laminate start should reach the wells, got {result.value}"
    print("PASSED: laminate warm starts")


def test_envelope_lipschitz_in_A0():
    """|Q f(A0 + dP) - Q f(A0)| <= lip_A d + 2e-2."""
    print("\n=== Testing envelope Lipschitz bound ===")
    op = create_curl_grad()
    tw = create_two_well()
    cfg = create_small_config(restarts=3, max_iters=40)
    A0 = np.array([0.5, 0.0])
    base = quasiconvex_envelope(op, tw, None, A0, cfg).value
    for P in ([1.0, 0.0], [0.0, 1.0]):
        for delta in (0.125, 0.25, 0.5):
            moved = quasiconvex_envelope(op, tw, None, A0 + delta * np.asarray(P), cfg).value
            assert abs(moved - base) <= tw.lip_A * delta + 2e-2, f"P={P}, d={delta}: {moved} vs {base}"
    print("PASSED: envelope Lipschitz bound")


def create_tabulated_envelope(op, f, cfg, ts):
    values = [quasiconvex_envelope(op, f, None, [t, 0.0], cfg).value for t in ts]
    return tabulated_integrand([0.0, 0.0], [1.0, 0.0], ts, values, lip=f.lip_A, name="tabulated_envelope")


def test_envelope_idempotent():
    """Running the optimizer on the tabulated envelope improves it by less than 2e-2."""
    print("\n=== Testing envelope idempotence ===")
    op = create_curl_grad()
    cfg = create_small_config(restarts=2, max_iters=30)
    ts = [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5]
    g = create_tabulated_envelope(op, create_two_well(), cfg, ts)
    for t in ts + [-0.75, 0.25, 1.25]:
        A = [t, 0.0]
        again = quasiconvex_envelope(op, g, None, A, cfg).value
        before = float(g.value(None, A))
        assert again <= before + 1e-9
        assert before - again < 2e-2, f"t={t}: {before} improved to {again}"
    print("PASSED: envelope idempotence")


def test_envelope_is_lambda_convex():
    """The two-well function fails midpoint convexity along e1; its tabulated envelope passes."""
    print("\n=== Testing Lambda-convexity of the envelope ===")
    op = create_curl_grad()
    tw = create_two_well()
    cfg = create_small_config(restarts=2, max_iters=30)
    g = create_tabulated_envelope(op, tw, cfg, [-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5])
    bases = [[-0.5, 0.0], [0.0, 0.0], [0.5, 0.0]]
    raw = lambda_convexity_check(tw, [[1.0, 0.0]], bases, span=0.5, steps=10)
    assert raw.violations, "the two-well function should not be convex along e1"
    report = lambda_convexity_check(g, [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]], bases, span=0.5, steps=10, tol=2e-2)
    assert not report.violations, f"worst gap {report.worst_gap}"
    print("PASSED: Lambda-convexity of the envelope")


def test_envelope_recession_two_well():
    """Along e1 the two-well envelope grows like |A| - 1, so its recession is 1."""
    print("\n=== Testing envelope_recession for the two-well ===")
    est = envelope_recession(create_curl_grad(), create_two_well(), None, [1.0, 0.0],
                             cfg=create_small_config(restarts=1, max_iters=10))
    print(f"  upper {est.upper:.4f}, lower {est.lower:.4f}")
    assert abs(est.upper - 1.0) <= 5e-2 and abs(est.lower - 1.0) <= 5e-2
    assert est.exists
    print("PASSED: two-well envelope recession")


def test_correctors_stay_in_span():
    """For A0 * Laplacian with A0 = [1 0], correctors live in span{e2}."""
    print("\n=== Testing envelopes for laplace_coeff ===")
    op = builtin_operator("laplace_coeff", 2, A0=[[1.0, 0.0]])
    cfg = create_small_config(restarts=2, max_iters=30)
    across = quasiconvex_envelope(op, create_two_well(), None, [0.0, 0.0], cfg)
    assert abs(across.value - 1.0) <= 1e-9, f"wells at +-e1 are out of reach, got {across.value}"
    assert np.max(np.abs(across.argmin_field.values[0])) <= 1e-12
    along = quasiconvex_envelope(op, build_integrand("twowell", {"P0": [0.0, 1.0]}, 2), None, [0.0, 0.0], cfg)
    assert along.value <= 0.05, f"wells at +-e2 should laminate, got {along.value}"
    est = envelope_recession(op, create_two_well(), None, [0.0, 1.0], cfg=create_small_config(restarts=1,
                                                                                          max_iters=10))
    assert abs(est.upper - 1.0) <= 5e-2, f"recession along e2 {est.upper}"
    print("PASSED: laplace_coeff envelopes")


def test_time_limit():
    """An exhausted time limit stops every restart before its first step."""
    print("\n=== Testing envelope time limit ===")
    tw = create_two_well()
    result = quasiconvex_envelope(create_curl_grad(), tw, None, [0.3, 0.0], create_small_config(time_limit=1e-9))
    assert all(r["timed_out"] and r["iterations"] == 0 for r in result.restarts_summary)
    assert result.value <= result.f_at_A0 + 1e-9
    untimed = quasiconvex_envelope(create_curl_grad(), tw, None, [0.3, 0.0], create_small_config())
    assert not any(r["timed_out"] for r in untimed.restarts_summary)
    with pytest.raises(ConfigError):
        EnvelopeConfig(time_limit=0.0)
    print("PASSED: time limit")


if __name__ == "__main__":
    print("Running envelope tests...")

    test_chi_profile()
    test_best_laminate_two_well()
    test_laminate_oracle_checks_cone()
    test_convex_integrands_reproduce_f()
    test_two_well_envelope_at_zero()
    test_envelope_errors()
    test_envelope_config_validation()
    test_envelope_deterministic()
    test_envelope_recession_of_convex()
    test_grid_refinement_series()
    test_laminate_bounds_envelope()
    test_sharp_warm_starts_fill_whole_cells()
    test_envelope_lipschitz_in_A0()
    test_envelope_idempotent()
    test_envelope_is_lambda_convex()
    test_envelope_recession_two_well()
    test_correctors_stay_in_span()
    test_time_limit()

    print("\n" + "="*50)
    print("ALL ENVELOPE TESTS PASSED!")
    print("="*50)
