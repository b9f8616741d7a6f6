"""
Constant rank, wave cone membership, V_A and characteristic sets.

Everything here works on the unit sphere of frequencies: a coarse pass over a
fixed sampling followed by local derivative-free refinement on charts of the
sphere. Kernels of M(xi) and M(-xi) coincide, so samplings keep one point of
each antipodal pair.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.optimize import minimize, minimize_scalar
from scipy.spatial import cKDTree

import config
from errors import ConfigError, DegenerateOperator, NotInWaveCone, ShapeError, ZeroVector
from pde_operator import OperatorSpec, principal_symbol, principal_symbol_batch

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SphereSampling:
    d: int
    points: np.ndarray
    scheme: str

    @property
    def count(self) -> int:
        return len(self.points)

    @property
    def spacing(self) -> float:
        """Typical distance between neighbouring samples."""
        if self.d == 1:
            return 0.0
        if self.d == 2:
            return math.pi / self.count
        hemisphere = math.pi ** (self.d / 2) / math.gamma(self.d / 2)
        return (hemisphere / self.count) ** (1.0 / (self.d - 1))


@dataclass
class RankProfile:
    ranks: np.ndarray
    min_rank: int
    max_rank: int
    tol: float
    is_constant: bool
    witness_min: np.ndarray
    witness_max: np.ndarray

    def to_dict(self):
        return {
            "min_rank": self.min_rank,
            "max_rank": self.max_rank,
            "tol": self.tol,
            "is_constant": self.is_constant,
            "witness_min": self.witness_min.tolist(),
            "witness_max": self.witness_max.tolist(),
            "samples": int(len(self.ranks)),
        }


@dataclass
class WaveConeReport:
    query: np.ndarray
    residual: float
    witness_xi: np.ndarray
    member: bool
    tol: float
    coarse_residual: float = float("nan")

    def to_dict(self):
        return {
            "query": self.query.tolist(),
            "residual": self.residual,
            "witness_xi": self.witness_xi.tolist(),
            "member": self.member,
            "tol": self.tol,
            "coarse_residual": self.coarse_residual,
        }


@dataclass
class CharacteristicSetReport:
    P0: np.ndarray
    roots: np.ndarray
    subspace_dim: int
    subspace_basis: np.ndarray
    max_deviation: float

    def to_dict(self):
        return {
            "P0": self.P0.tolist(),
            "roots": self.roots.tolist(),
            "subspace_dim": self.subspace_dim,
            "subspace_basis": self.subspace_basis.tolist(),
            "max_deviation": self.max_deviation,
        }


def canonical_sign(points: np.ndarray) -> np.ndarray:
    """Flip each row so its first non-negligible coordinate is positive."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    lead = np.argmax(np.abs(points) > 1e-12, axis=1)
    signs = np.sign(points[np.arange(len(points)), lead])
    signs[signs == 0] = 1.0
    return points * signs[:, None]


def _dedupe_antipodal(points: np.ndarray, decimals: int = 12) -> np.ndarray:
    points = canonical_sign(points)
    keys = np.round(points, decimals) + 0.0
    _, keep = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(keep)]


def _special_directions(d: int) -> np.ndarray:
    """Coordinate axes and the diagonals (e_i +- e_j)/sqrt(2)."""
    rows = [np.eye(d)]
    for i in range(d):
        for j in range(i + 1, d):
            for sign in (1.0, -1.0):
                v = np.zeros(d)
                v[i], v[j] = 1.0, sign
                rows.append(v[None, :] / math.sqrt(2.0))
    return np.vstack(rows)


def sphere_sampling(d: int, count: Optional[int] = None, seed: int = 0,
                    include_axes: bool = True) -> SphereSampling:
    """
    Antipodally deduplicated unit vectors in R^d.

    d=2 uses an angular grid on [0, pi), d=3 a Fibonacci lattice on the upper
    hemisphere, and d>=4 random Gaussian directions reflected into every
    orthant. Axes and diagonals are appended unless include_axes is False.
    """
    if d < 1:
        raise ShapeError(f"dimension must be positive, got {d}")
    if d == 1:
        return SphereSampling(d=1, points=np.ones((1, 1)), scheme="trivial")

    if d == 2:
        count = config.ANGULAR_SAMPLES_2D if count is None else count
        theta = math.pi * np.arange(count) / count
        points = np.column_stack([np.cos(theta), np.sin(theta)])
        scheme = "angular"
    elif d == 3:
        count = config.FIBONACCI_SAMPLES_3D if count is None else count
        i = np.arange(count)
        z = (i + 0.5) / count
        phi = i * math.pi * (3.0 - math.sqrt(5.0))
        rho = np.sqrt(1.0 - z * z)
        points = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), z])
        scheme = "fibonacci"
    else:
        count = config.RANDOM_SAMPLES_HIGH_D if count is None else count
        rng = np.random.default_rng(seed)
        patterns = 2 ** (d - 1)
        base = rng.standard_normal((max(1, count // patterns), d))
        base /= np.linalg.norm(base, axis=1, keepdims=True)
        signs = np.array([[1.0] + [(-1.0) ** ((p >> b) & 1) for b in range(d - 1)]
                          for p in range(patterns)])
        points = (base[None, :, :] * signs[:, None, :]).reshape(-1, d)
        scheme = "orthant"

    if count < 1:
        raise ConfigError(f"sample count must be positive, got {count}")
    if include_axes:
        points = np.vstack([points, _special_directions(d)])
    points = points / np.linalg.norm(points, axis=1, keepdims=True)
    return SphereSampling(d=d, points=_dedupe_antipodal(points), scheme=scheme)


def _default_sampling(op: OperatorSpec, sampling: Optional[SphereSampling]) -> SphereSampling:
    if sampling is None:
        return sphere_sampling(op.d)
    if sampling.d != op.d:
        raise ShapeError(f"sampling lives in d={sampling.d}, operator in d={op.d}")
    if sampling.count == 0:
        raise ConfigError("sampling is empty")
    return sampling


def rank_profile(op: OperatorSpec, sampling: Optional[SphereSampling] = None,
                 tol: float = config.RANK_TOL) -> RankProfile:
    """Rank of M(xi) at every sample, counted against tol * sigma_max."""
    if not 0 < tol <= 1e-2:
        raise ConfigError(f"rank tolerance must lie in (0, 1e-2], got {tol}")
    sampling = _default_sampling(op, sampling)
    Ms = principal_symbol_batch(op, sampling.points)
    s = np.linalg.svd(Ms, compute_uv=False)
    smax = s[:, 0]
    if np.all(smax == 0.0):
        raise DegenerateOperator("principal symbol vanishes on every sampled direction")
    ranks = np.sum(s > tol * smax[:, None], axis=1)
    lo, hi = int(np.argmin(ranks)), int(np.argmax(ranks))
    profile = RankProfile(
        ranks=ranks,
        min_rank=int(ranks[lo]),
        max_rank=int(ranks[hi]),
        tol=tol,
        is_constant=bool(ranks[lo] == ranks[hi]),
        witness_min=sampling.points[lo].copy(),
        witness_max=sampling.points[hi].copy(),
    )
    logger.debug("rank profile over %d samples: min %d at %s, max %d at %s",
                 sampling.count, profile.min_rank, profile.witness_min,
                 profile.max_rank, profile.witness_max)
    return profile


def _normalized_residuals(Ms: np.ndarray, P: np.ndarray) -> np.ndarray:
    num = np.linalg.norm(Ms @ P, axis=-1)
    den = np.linalg.norm(Ms, axis=(-2, -1)) * np.linalg.norm(P)
    safe = np.where(den > 0, den, 1.0)
    # M(xi) = 0 puts every P in the kernel
    return np.where(den > 0, num / safe, 0.0)


def _check_query(op: OperatorSpec, P) -> np.ndarray:
    P = np.asarray(P, dtype=float).ravel()
    if P.shape != (op.N,):
        raise ShapeError(f"query has {P.size} entries, operator acts on R^{op.N}")
    if not np.any(P):
        raise ZeroVector("wave cone queries need a nonzero vector")
    return P


def residual_profile(op: OperatorSpec, P, sampling: Optional[SphereSampling] = None) -> np.ndarray:
    """Coarse ||M(xi)P|| / (||M(xi)||_F ||P||) at every sample."""
    P = _check_query(op, P)
    sampling = _default_sampling(op, sampling)
    return _normalized_residuals(principal_symbol_batch(op, sampling.points), P)


def _refine(op: OperatorSpec, P: np.ndarray, xi0: np.ndarray, spacing: float, max_iters: int):
    """Local minimization of the squared residual on a chart around xi0."""

    def residual(xi):
        xi = xi / np.linalg.norm(xi)
        return float(_normalized_residuals(principal_symbol_batch(op, xi), P)), xi

    start_value, _ = residual(xi0)
    if op.d == 1 or start_value == 0.0:
        return start_value, xi0

    tangent = scipy.linalg.null_space(xi0[None, :])

    def objective(t):
        value, _ = residual(xi0 + tangent @ np.atleast_1d(t))
        return value * value

    if op.d == 2:
        out = minimize_scalar(objective, bounds=(-2.0 * spacing, 2.0 * spacing), method="bounded",
                              options={"xatol": 1e-13, "maxiter": max_iters})
        t_best = np.atleast_1d(out.x)
    else:
        simplex = np.vstack([np.zeros(op.d - 1), spacing * np.eye(op.d - 1)])
        out = minimize(objective, np.zeros(op.d - 1), method="Nelder-Mead",
                       options={"maxiter": max_iters, "xatol": 1e-13, "fatol": 1e-30,
                                "initial_simplex": simplex})
        t_best = out.x
    value, xi = residual(xi0 + tangent @ t_best)
    if value < start_value:
        return value, xi
    return start_value, xi0


def wavecone_membership(op: OperatorSpec, P, sampling: Optional[SphereSampling] = None,
                        tol_member: float = config.MEMBER_TOL,
                        max_iters: int = config.REFINE_MAX_ITERS,
                        starts: int = config.REFINE_STARTS) -> WaveConeReport:
    """Decide P in Lambda_A by minimizing the normalized residual over the sphere."""
    P = _check_query(op, P)
    sampling = _default_sampling(op, sampling)
    coarse = _normalized_residuals(principal_symbol_batch(op, sampling.points), P)
    order = np.argsort(coarse, kind="stable")[:max(1, starts)]

    best_value, best_xi = np.inf, sampling.points[order[0]]
    for i in order:
        value, xi = _refine(op, P, sampling.points[i], sampling.spacing, max_iters)
        if value < best_value:
            best_value, best_xi = value, xi

    witness = canonical_sign(best_xi)[0]
    report = WaveConeReport(query=P, residual=float(best_value), witness_xi=witness,
                            member=bool(best_value <= tol_member), tol=tol_member,
                            coarse_residual=float(coarse[order[0]]))
    logger.debug("membership of %s: residual %.3e at %s", P, report.residual, witness)
    return report


def symbol_kernel(op: OperatorSpec, xi, tol: float = config.NULLSPACE_TOL) -> np.ndarray:
    """Orthonormal basis (columns) of ker M(xi)."""
    return scipy.linalg.null_space(principal_symbol(op, xi).real_part, rcond=tol)


def wavecone_span(op: OperatorSpec, sampling: Optional[SphereSampling] = None,
                  cutoff: float = config.SPAN_CUTOFF, rank_tol: float = config.RANK_TOL) -> np.ndarray:
    """Orthonormal basis (rows) of V_A, the span of all sampled kernels."""
    sampling = _default_sampling(op, sampling)
    try:
        profile = rank_profile(op, sampling, rank_tol)
    except DegenerateOperator:
        return np.eye(op.N)
    if not profile.is_constant:
        logger.warning("constant rank fails (ranks %d..%d); V_A is computed anyway",
                       profile.min_rank, profile.max_rank)

    Ms = principal_symbol_batch(op, sampling.points)
    _, _, Vh = np.linalg.svd(Ms, full_matrices=True)
    blocks = [Vh[i, r:, :] for i, r in enumerate(profile.ranks) if r < op.N]
    if not blocks:
        return np.zeros((0, op.N))
    stack = np.vstack(blocks)
    _, sv, Vt = np.linalg.svd(stack, full_matrices=False)
    basis = Vt[sv > cutoff * sv[0]]
    logger.info("dim V_A = %d (from %d kernel vectors)", len(basis), len(stack))
    return basis


def distance_to_span(P, basis: np.ndarray) -> float:
    """Relative distance ||P - proj(P)|| / ||P|| to the row span of basis."""
    P = np.asarray(P, dtype=float).ravel()
    norm = np.linalg.norm(P)
    if norm == 0.0:
        return 0.0
    if len(basis) == 0:
        return 1.0
    return float(np.linalg.norm(P - basis.T @ (basis @ P)) / norm)


def characteristic_set(op: OperatorSpec, P0, sampling: Optional[SphereSampling] = None,
                       tol_member: float = config.MEMBER_TOL, capture: float = 0.05,
                       max_roots: int = 64, fit_tol: float = 1e-6) -> CharacteristicSetReport:
    """
    Roots of xi -> M(xi)P0 on the sphere and the smallest subspace holding them.

    Candidates are sampled local minima of the residual below `capture`; each is
    refined and kept when it reaches tol_member.
    """
    report = wavecone_membership(op, P0, sampling, tol_member)
    if not report.member:
        raise NotInWaveCone(f"{report.query} is not in the wave cone (residual {report.residual:.3e})")
    P0 = report.query
    sampling = _default_sampling(op, sampling)
    res = residual_profile(op, P0, sampling)
    pts = sampling.points
    S = len(pts)

    candidates: List[int] = []
    if S > 1:
        tree = cKDTree(np.vstack([pts, -pts]))
        k = min(2 * op.d + 1, 2 * S - 1)
        _, nbr = tree.query(pts, k=k + 1)
        nbr = nbr[:, 1:] % S
        is_min = res <= res[nbr].min(axis=1)
        candidates = [int(i) for i in np.where(is_min & (res <= capture))[0]]
        candidates.sort(key=lambda i: res[i])
        candidates = candidates[:max_roots]

    roots: List[np.ndarray] = [report.witness_xi]
    for i in candidates:
        value, xi = _refine(op, P0, pts[i], sampling.spacing, config.REFINE_MAX_ITERS)
        if value > tol_member:
            continue
        xi = canonical_sign(xi)[0]
        if all(min(np.linalg.norm(xi - r), np.linalg.norm(xi + r)) > 1e-6 for r in roots):
            roots.append(xi)

    R = np.array(roots)
    _, _, Vt = np.linalg.svd(R, full_matrices=True)
    dim, deviation = op.d, 0.0
    for dim in range(1, op.d + 1):
        basis = Vt[:dim]
        deviation = float(np.max(np.linalg.norm(R - (R @ basis.T) @ basis, axis=1)))
        if deviation <= fit_tol:
            break
    logger.info("characteristic set of %s: %d roots, subspace dim %d", P0, len(R), dim)
    return CharacteristicSetReport(P0=P0, roots=R, subspace_dim=dim,
                                   subspace_basis=Vt[:dim].copy(), max_deviation=deviation)
