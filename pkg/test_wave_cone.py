"""
Tests for rank profiles, wave-cone membership and the wave-cone span.
"""
import sys
sys.path.insert(0, '.')

import numpy as np
import pytest

from errors import ConfigError, NotInWaveCone, ShapeError, ZeroVector
from pde_operator import OperatorSpec, builtin_operator
from wave_cone import (canonical_sign, characteristic_set, distance_to_span, rank_profile,
                       residual_profile, sphere_sampling, symbol_kernel, wavecone_membership,
                       wavecone_span)


def create_diagonal_operator():
    """M(xi) = diag(xi_1, xi_2): rank 1 on the axes, 2 elsewhere."""
    return OperatorSpec(d=2, N=2, n=2, k=1,
                        terms=[((1, 0), [[1.0, 0.0], [0.0, 0.0]]), ((0, 1), [[0.0, 0.0], [0.0, 1.0]])])


def test_sphere_sampling():
    """Samples are unit vectors, sign-normalized, with the axes included."""
    print("\n=== Testing sphere_sampling ===")
    for d in (2, 3):
        s = sphere_sampling(d)
        norms = np.linalg.norm(s.points, axis=1)
        assert np.allclose(norms, 1.0), f"d={d}: non-unit samples"
        assert np.allclose(canonical_sign(s.points), s.points), f"d={d}: samples not sign-normalized"
        for axis in np.eye(d):
            assert np.min(np.linalg.norm(s.points - axis, axis=1)) < 1e-12, f"d={d}: axis {axis} missing"
    four = sphere_sampling(4, count=64, seed=3)
    assert np.allclose(sphere_sampling(4, count=64, seed=3).points, four.points), "sampling not reproducible"
    with pytest.raises(ShapeError):
        sphere_sampling(0)
    print("PASSED: sphere_sampling")


def test_constant_rank_builtins():
    """div (1), curl d=2 m=2 (2) and curlcurl d=2 (1) have constant rank."""
    print("\n=== Testing rank_profile on built-ins ===")
    cases = [(builtin_operator("div", 2), 1), (builtin_operator("curl", 2, 2), 2),
             (builtin_operator("curlcurl", 2), 1), (builtin_operator("curl", 3, 1), 2)]
    for op, rank in cases:
        profile = rank_profile(op)
        assert profile.is_constant, f"{op.canonical_key()} should have constant rank"
        assert profile.min_rank == rank, f"expected rank {rank}, got {profile.min_rank}"
    print("PASSED: constant rank")


def test_rank_drop_detected():
    """The diagonal operator drops rank on the axes."""
    print("\n=== Testing non-constant rank ===")
    profile = rank_profile(create_diagonal_operator())
    assert not profile.is_constant, "rank drop on the axes not detected"
    assert (profile.min_rank, profile.max_rank) == (1, 2)
    assert np.min(np.abs(profile.witness_min)) < 1e-12, f"witness {profile.witness_min} is not an axis"
    with pytest.raises(ConfigError):
        rank_profile(create_diagonal_operator(), tol=0.5)
    print("PASSED: rank drop")


def test_membership_rank_one():
    """e1 (x) e1 is in the curl wave cone with witness +-e1."""
    print("\n=== Testing membership of a rank-one matrix ===")
    op = builtin_operator("curl", 2, 2)
    report = wavecone_membership(op, [1.0, 0.0, 0.0, 0.0])
    assert report.member, f"rank-one matrix rejected, residual {report.residual}"
    assert report.residual <= 1e-6
    assert min(np.linalg.norm(report.witness_xi - [1.0, 0.0]),
               np.linalg.norm(report.witness_xi + [1.0, 0.0])) < 1e-3, f"witness {report.witness_xi}"
    print("PASSED: rank-one member")


def test_membership_identity_rejected():
    """The identity matrix is not a curl wave-cone direction."""
    print("\n=== Testing non-membership of the identity ===")
    report = wavecone_membership(builtin_operator("curl", 2, 2), [1.0, 0.0, 0.0, 1.0])
    assert not report.member
    assert report.residual >= 0.1, f"refined residual {report.residual} too small"
    print("PASSED: identity rejected")


def test_membership_errors():
    """Zero and wrongly sized queries are rejected."""
    print("\n=== Testing membership errors ===")
    op = builtin_operator("div", 2)
    with pytest.raises(ZeroVector):
        wavecone_membership(op, [0.0, 0.0])
    with pytest.raises(ShapeError):
        wavecone_membership(op, [1.0, 0.0, 0.0])
    print("PASSED: membership errors")


def test_span_dimensions():
    """dim V_A is 2 for div and 1 for laplace_coeff([1 0])."""
    print("\n=== Testing wavecone_span ===")
    div_span = wavecone_span(builtin_operator("div", 2))
    assert div_span.shape == (2, 2), f"div span has shape {div_span.shape}"
    lap_span = wavecone_span(builtin_operator("laplace_coeff", 2, A0=[[1.0, 0.0]]))
    assert lap_span.shape == (1, 2), f"laplace_coeff span has shape {lap_span.shape}"
    assert distance_to_span([0.0, 3.0], lap_span) < 1e-10
    assert abs(distance_to_span([1.0, 0.0], lap_span) - 1.0) < 1e-10
    print("PASSED: span dimensions")


def test_distance_to_span_edges():
    """Zero vectors sit in every span; nothing sits in the empty span."""
    print("\n=== Testing distance_to_span edge cases ===")
    assert distance_to_span([0.0, 0.0], np.zeros((0, 2))) == 0.0
    assert distance_to_span([1.0, 1.0], np.zeros((0, 2))) == 1.0
    assert distance_to_span([1.0, 1.0], np.eye(2)) < 1e-12
    print("PASSED: distance_to_span")


def test_symbol_kernel_and_residuals():
    """ker M(xi) of div is the perpendicular direction; residuals vanish there."""
    print("\n=== Testing symbol_kernel / residual_profile ===")
    op = builtin_operator("div", 2)
    kernel = symbol_kernel(op, [1.0, 0.0])
    assert kernel.shape == (2, 1)
    assert abs(abs(kernel[1, 0]) - 1.0) < 1e-12
    sampling = sphere_sampling(2, count=90)
    res = residual_profile(op, [0.0, 1.0], sampling)
    assert res.shape == (sampling.count,)
    assert np.all((res >= 0.0) & (res <= 1.0 + 1e-12))
    assert res.min() < 1e-12
    print("PASSED: kernel and residuals")


def test_characteristic_set():
    """M(xi) P0 = 0 only along e1 for div with P0 = e2."""
    print("\n=== Testing characteristic_set ===")
    op = builtin_operator("div", 2)
    report = characteristic_set(op, [0.0, 1.0])
    assert report.subspace_dim == 1, f"expected a line, got dimension {report.subspace_dim}"
    assert np.allclose(np.abs(report.roots[0]), [1.0, 0.0], atol=1e-6)
    with pytest.raises(NotInWaveCone):
        characteristic_set(builtin_operator("curl", 2, 2), [1.0, 0.0, 0.0, 1.0])
    print("PASSED: characteristic set")


if __name__ == "__main__":
    print("Running wave cone tests...")

    test_sphere_sampling()
    test_constant_rank_builtins()
    test_rank_drop_detected()
    test_membership_rank_one()
    test_membership_identity_rejected()
    test_membership_errors()
    test_span_dimensions()
    test_distance_to_span_edges()
    test_symbol_kernel_and_residuals()
    test_characteristic_set()

    print("\n" + "="*50)
    print("ALL WAVE CONE TESTS PASSED!")
    print("="*50)
