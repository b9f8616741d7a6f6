"""
Vector measures on an axis-aligned box: a grid density plus singular atoms
and hyperplane pieces.

Quadrature is the midpoint rule on cells. Hyperplane pieces are sampled at
the projections of the cell centres closest to the plane, with the piece's
mass spread evenly over those samples.
"""
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.interpolate import RegularGridInterpolator

import config
from errors import DomainMismatch, MissingRecession, OutOfDomain, ShapeError, UnknownName, ZeroVector
from integrand import Integrand, estimate_recession, make_area, make_component, make_norm
from pde_operator import OperatorSpec, principal_symbol
from spectral_projection import bump_profile
from wave_cone import SphereSampling, wavecone_membership

logger = logging.getLogger(__name__)

SINGULAR_KINDS = ("atom", "hyperplane")
RECESSION_MODES = ("analytic", "upper", "lower")
BATTERY_SIZE = 32


@dataclass
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float).ravel()
        self.upper = np.asarray(self.upper, dtype=float).ravel()
        if self.lower.shape != self.upper.shape:
            raise ShapeError(f"box corners differ in dimension: {self.lower.size} vs {self.upper.size}")
        if np.any(self.upper <= self.lower):
            raise ShapeError(f"box is empty: lower {self.lower}, upper {self.upper}")

    @classmethod
    def unit(cls, d: int) -> 'Box':
        """Q = (-1/2, 1/2)^d."""
        return cls(np.full(d, -0.5), np.full(d, 0.5))

    @property
    def d(self) -> int:
        return self.lower.size

    @property
    def lengths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def contains(self, x, tol: float = 1e-12) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def axes(self, grid: Sequence[int]) -> List[np.ndarray]:
        return [lo + (np.arange(M) + 0.5) * (hi - lo) / M for lo, hi, M in zip(self.lower, self.upper, grid)]

    def cell_centres(self, grid: Sequence[int]) -> np.ndarray:
        """Cell centres, shape (M_1, ..., M_d, d)."""
        return np.stack(np.meshgrid(*self.axes(grid), indexing="ij"), axis=-1)

    def cell_widths(self, grid: Sequence[int]) -> np.ndarray:
        return self.lengths / np.asarray(grid, dtype=float)

    def cell_volume(self, grid: Sequence[int]) -> float:
        return float(np.prod(self.cell_widths(grid)))

    def same_as(self, other: 'Box') -> bool:
        return self.d == other.d and np.allclose(self.lower, other.lower) and np.allclose(self.upper, other.upper)

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'Box':
        return cls(data["lower"], data["upper"])


@dataclass
class SingularPiece:
    """An atom at `point` or a uniform hyperplane piece {x . normal = offset} inside the domain."""
    kind: str
    mass: float
    polar: np.ndarray
    point: Optional[np.ndarray] = None
    normal: Optional[np.ndarray] = None
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in SINGULAR_KINDS:
            raise UnknownName(f"unknown singular piece {self.kind!r}; choose from {', '.join(SINGULAR_KINDS)}")
        self.mass = float(self.mass)
        if not self.mass >= 0.0:
            raise ShapeError(f"singular mass must be nonnegative, got {self.mass}")
        self.polar = np.asarray(self.polar, dtype=float).ravel()
        if abs(np.linalg.norm(self.polar) - 1.0) > 1e-12:
            raise ShapeError(f"polar vector must have unit length, |polar| = {np.linalg.norm(self.polar)}")
        if self.kind == "atom":
            if self.point is None:
                raise ShapeError("an atom needs a point")
            self.point = np.asarray(self.point, dtype=float).ravel()
        else:
            if self.normal is None:
                raise ShapeError("a hyperplane piece needs a normal")
            normal = np.asarray(self.normal, dtype=float).ravel()
            size = float(np.linalg.norm(normal))
            if size == 0.0:
                raise ZeroVector("hyperplane normal must be nonzero")
            self.normal = normal / size
            self.offset = float(self.offset) / size

    @property
    def d(self) -> int:
        return (self.point if self.kind == "atom" else self.normal).size

    def scaled(self, c: float) -> 'SingularPiece':
        return SingularPiece(self.kind, c * self.mass, self.polar, self.point, self.normal, self.offset)

    def to_dict(self) -> Dict[str, Any]:
        data = {"kind": self.kind, "mass": self.mass, "polar": self.polar.tolist()}
        if self.kind == "atom":
            data["point"] = self.point.tolist()
        else:
            data["normal"] = self.normal.tolist()
            data["offset"] = self.offset
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'SingularPiece':
        return cls(kind=data["kind"], mass=data["mass"], polar=data["polar"], point=data.get("point"),
                   normal=data.get("normal"), offset=data.get("offset", 0.0))


@dataclass
class GridMeasure:
    domain: Box
    density: np.ndarray  # (N, M_1, ..., M_d), values at cell centres
    singular: List[SingularPiece] = field(default_factory=list)

    def __post_init__(self):
        self.density = np.asarray(self.density, dtype=float)
        if self.density.ndim != self.domain.d + 1:
            raise ShapeError(f"density shape {self.density.shape} does not fit a {self.domain.d}-d domain")
        for piece in self.singular:
            if piece.d != self.domain.d:
                raise ShapeError(f"singular piece lives in d={piece.d}, domain in d={self.domain.d}")
            if piece.polar.size != self.N:
                raise ShapeError(f"singular polar has {piece.polar.size} entries, density has N={self.N}")
            if piece.kind == "atom" and not self.domain.contains(piece.point):
                raise OutOfDomain(f"atom at {piece.point} lies outside the domain")
            if piece.kind == "hyperplane" and plane_area(self.domain, piece.normal, piece.offset) == 0.0:
                raise OutOfDomain(f"hyperplane x.{piece.normal} = {piece.offset} misses the domain")

    @property
    def N(self) -> int:
        return self.density.shape[0]

    @property
    def grid(self) -> Tuple[int, ...]:
        return tuple(self.density.shape[1:])

    @property
    def cell_volume(self) -> float:
        return self.domain.cell_volume(self.grid)

    def coordinates(self) -> np.ndarray:
        return self.domain.cell_centres(self.grid)

    def states(self) -> np.ndarray:
        """Density values as (M_1, ..., M_d, N)."""
        return np.moveaxis(self.density, 0, -1)

    def ac_mass(self) -> float:
        return float(np.sum(np.linalg.norm(self.density, axis=0)) * self.cell_volume)

    def singular_mass(self) -> float:
        return float(sum(p.mass for p in self.singular))

    def total(self) -> np.ndarray:
        """mu(Omega) as an N-vector."""
        total = self.density.reshape(self.N, -1).sum(axis=1) * self.cell_volume
        for p in self.singular:
            total = total + p.mass * p.polar
        return total

    def scaled(self, c: float) -> 'GridMeasure':
        return GridMeasure(self.domain, c * self.density, [p.scaled(c) for p in self.singular])

    def to_dict(self) -> Dict[str, Any]:
        return {
            "domain": self.domain.to_dict(),
            "N": self.N,
            "grid": list(self.grid),
            "singular": [p.to_dict() for p in self.singular],
        }


@dataclass
class FunctionalParts:
    absolutely_continuous: float
    singular: float

    @property
    def total(self) -> float:
        return self.absolutely_continuous + self.singular

    def to_dict(self):
        return {"ac": self.absolutely_continuous, "singular": self.singular, "total": self.total}


@dataclass
class TestPair:
    """Spatial weight phi (on (..., d) points) tensored with an integrand h."""
    name: str
    weight: Callable[[np.ndarray], np.ndarray]
    integrand: Integrand
    weight_sup: float = 1.0

    __test__ = False


@dataclass
class EmpiricalYoungMeasure:
    names: List[str]
    moments: np.ndarray  # (J, P)
    bounds: np.ndarray  # (P,)
    barycenter_totals: np.ndarray  # (J, N)
    barycenter_field: Optional[GridMeasure] = None

    def limit(self) -> np.ndarray:
        return self.moments[-1]

    def cesaro(self) -> np.ndarray:
        counts = np.arange(1, len(self.moments) + 1)[:, None]
        return np.cumsum(self.moments, axis=0) / counts

    def tail_spread(self) -> np.ndarray:
        tail = self.moments[-max(1, int(np.ceil(len(self.moments) / 3))):]
        return tail.max(axis=0) - tail.min(axis=0)

    def within_bounds(self) -> bool:
        return bool(np.all(np.abs(self.moments) <= self.bounds[None, :] * (1.0 + 1e-12)))

    def to_dict(self):
        return {
            "pairs": self.names,
            "moments": self.moments.tolist(),
            "limit": self.limit().tolist(),
            "tail_spread": self.tail_spread().tolist(),
            "bounds": self.bounds.tolist(),
            "barycenter_totals": self.barycenter_totals.tolist(),
        }


def plane_area(domain: Box, normal, offset: float) -> float:
    """H^{d-1} measure of {x . normal = offset} inside the box (unit normal)."""
    normal = np.asarray(normal, dtype=float)
    corners = np.array(list(itertools.product(*zip(domain.lower, domain.upper))))
    heights = corners @ normal
    if offset < heights.min() - 1e-12 or offset > heights.max() + 1e-12:
        return 0.0
    axis = int(np.argmax(np.abs(normal)))
    if np.isclose(abs(normal[axis]), 1.0):
        return float(np.prod(np.delete(domain.lengths, axis)))
    # tilted planes: hat kernel of half-width one projected cell around the plane
    grid = (64,) * domain.d
    h = float(np.abs(normal) @ domain.cell_widths(grid))
    dist = domain.cell_centres(grid) @ normal - offset
    weights = np.clip(1.0 - np.abs(dist) / h, 0.0, None) / h
    return float(np.sum(weights) * domain.cell_volume(grid))


def hyperplane_samples(domain: Box, grid: Sequence[int], piece: SingularPiece) -> np.ndarray:
    """Points on the plane, one per cell whose centre lies within half a cell of it."""
    centres = domain.cell_centres(grid).reshape(-1, domain.d)
    h = 0.5 * float(np.abs(piece.normal) @ domain.cell_widths(grid))
    dist = centres @ piece.normal - piece.offset
    near = np.abs(dist) <= h + 1e-12
    if not np.any(near):
        near = np.abs(dist) == np.abs(dist).min()
    return centres[near] - dist[near, None] * piece.normal


def _recession_values(f: Integrand, xs: Optional[np.ndarray], polar: np.ndarray, mode: str) -> np.ndarray:
    """f^infty / f^# / f_# at (x, polar) for each row of xs (None for x-independent f)."""
    if f.has_recession:
        return np.atleast_1d(f.recession(xs, np.broadcast_to(polar, (1 if xs is None else len(xs), polar.size))))
    points = [None] if xs is None else list(xs)
    out = []
    for x in points:
        estimate = estimate_recession(f, x, polar)
        if mode == "analytic" and not estimate.exists:
            raise MissingRecession(f"{f.name!r} has no strong recession along {polar}: "
                                   f"upper {estimate.upper:.6g}, lower {estimate.lower:.6g}")
        out.append(estimate.lower if mode == "lower" else estimate.upper)
    return np.array(out)


def _x_dependent(f: Integrand) -> bool:
    return f.modulus is not None


def _piece_points(mu: GridMeasure, piece: SingularPiece) -> np.ndarray:
    if piece.kind == "atom":
        return piece.point[None, :]
    return hyperplane_samples(mu.domain, mu.grid, piece)


def _piece_average(values_at: Callable[[Optional[np.ndarray]], np.ndarray], mu: GridMeasure,
                   piece: SingularPiece, x_dependent: bool) -> float:
    if not x_dependent:
        return float(np.mean(values_at(None)))
    return float(np.mean(values_at(_piece_points(mu, piece))))


def functional_parts(f: Integrand, mu: GridMeasure, recession_mode: str = "analytic") -> FunctionalParts:
    """The density term and the singular term of F^#[mu] separately."""
    if recession_mode not in RECESSION_MODES:
        raise UnknownName(f"unknown recession mode {recession_mode!r}; choose from {', '.join(RECESSION_MODES)}")
    x = mu.coordinates() if _x_dependent(f) else None
    ac = float(np.sum(f.value(x, mu.states())) * mu.cell_volume)
    singular = 0.0
    for piece in mu.singular:
        if piece.mass == 0.0:
            continue
        rec = _piece_average(lambda xs: _recession_values(f, xs, piece.polar, recession_mode),
                             mu, piece, _x_dependent(f))
        singular += rec * piece.mass
    return FunctionalParts(absolutely_continuous=ac, singular=singular)


def evaluate_functional(f: Integrand, mu: GridMeasure, recession_mode: str = "analytic") -> float:
    """
    F^#[mu] = int f(x, density) dx + int f^#(x, polar) d|mu^s|.

    Args:
        f: integrand
        mu: measure
        recession_mode: "analytic" needs f^infty (given or estimated to exist);
            "upper" and "lower" use f^# and f_#

    Returns:
        the functional value
    """
    return functional_parts(f, mu, recession_mode).total


def area_functional(mu: GridMeasure) -> float:
    return evaluate_functional(make_area({}, mu.N), mu)


def total_variation(mu: GridMeasure) -> float:
    return mu.ac_mass() + mu.singular_mass()


def _splat_weights(domain: Box, grid: Sequence[int], point: np.ndarray, eps: int) -> np.ndarray:
    """Normalized radial bump of eps cells around `point`."""
    centres = domain.cell_centres(grid)
    rel = (centres - point) / domain.cell_widths(grid)
    w = bump_profile(np.linalg.norm(rel, axis=-1) / (eps + 1.0))
    total = w.sum()
    if total == 0.0:
        w = np.zeros(tuple(grid))
        idx = np.unravel_index(np.argmin(np.linalg.norm(rel, axis=-1)), tuple(grid))
        w[idx] = 1.0
        return w
    return w / total


def mollify_measure(mu: GridMeasure, eps: int) -> GridMeasure:
    """
    Convolve the density with the radial bump of radius eps cells and splat the
    singular pieces onto the grid; the result has no singular part.
    """
    eps = int(eps)
    if eps < 1:
        raise ShapeError(f"mollification radius must be at least one cell, got {eps}")
    offsets = np.array(np.meshgrid(*[np.arange(-eps, eps + 1)] * mu.domain.d, indexing="ij"))
    kernel = bump_profile(np.sqrt(np.sum(offsets ** 2, axis=0)) / (eps + 1.0))
    kernel /= kernel.sum()

    density = np.stack([ndimage.convolve(mu.density[c], kernel, mode="reflect") for c in range(mu.N)])
    vol = mu.cell_volume
    for piece in mu.singular:
        points = _piece_points(mu, piece)
        weights = sum(_splat_weights(mu.domain, mu.grid, p, eps) for p in points) / len(points)
        density += (piece.mass / vol) * piece.polar.reshape((-1,) + (1,) * mu.domain.d) * weights
    logger.debug("mollified at %d cells: mass %.12g -> %.12g", eps, mu.total().sum(),
                 density.reshape(mu.N, -1).sum(axis=1).sum() * vol)
    return GridMeasure(mu.domain, density, [])


def _restricted_fraction(domain: Box, piece: SingularPiece, cube: Box, grid: Sequence[int]) -> float:
    """Share of a piece's mass inside `cube`."""
    if piece.kind == "atom":
        return 1.0 if cube.contains(piece.point, tol=0.0) else 0.0
    inside = plane_area(cube, piece.normal, piece.offset)
    total = plane_area(domain, piece.normal, piece.offset)
    return inside / total if total > 0.0 else 0.0


def blowup_measure(mu: GridMeasure, x0, r: float, scaling: str = "lebesgue",
                   grid: Optional[Sequence[int]] = None) -> GridMeasure:
    """
    c T^{(x0, r)}_# mu on the unit cube Q, T(x) = (x - x0) / r.

    `scaling` is "lebesgue" (c = r^-d) or "mass" (c = 1 / |mu|(Q_r(x0))).
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    d = mu.domain.d
    if x0.size != d:
        raise ShapeError(f"blow-up point has {x0.size} coordinates, domain has d={d}")
    if not r > 0.0:
        raise ShapeError(f"blow-up radius must be positive, got {r}")
    cube = Box(x0 - 0.5 * r, x0 + 0.5 * r)
    if not (mu.domain.contains(cube.lower) and mu.domain.contains(cube.upper)):
        raise OutOfDomain(f"Q_r(x0) = [{cube.lower}, {cube.upper}] is not inside the domain")
    grid = tuple(grid or mu.grid)
    unit = Box.unit(d)

    y = unit.cell_centres(grid)
    x = x0 + r * y
    pushed = np.empty((mu.N,) + grid)
    for c in range(mu.N):
        interp = RegularGridInterpolator(tuple(mu.domain.axes(mu.grid)), mu.density[c],
                                         bounds_error=False, fill_value=None)
        pushed[c] = interp(x.reshape(-1, d)).reshape(grid) * r ** d

    pieces = []
    for piece in mu.singular:
        share = _restricted_fraction(mu.domain, piece, cube, mu.grid)
        if share == 0.0 or piece.mass == 0.0:
            continue
        if piece.kind == "atom":
            pieces.append(SingularPiece("atom", piece.mass * share, piece.polar, point=(piece.point - x0) / r))
        else:
            pieces.append(SingularPiece("hyperplane", piece.mass * share, piece.polar, normal=piece.normal,
                                        offset=(piece.offset - x0 @ piece.normal) / r))

    if scaling == "lebesgue":
        c = r ** (-d)
    elif scaling == "mass":
        local = float(np.sum(np.linalg.norm(pushed, axis=0)) * unit.cell_volume(grid)) + sum(p.mass for p in pieces)
        if local == 0.0:
            raise ZeroVector(f"mu has no mass in Q_r({x0}) with r = {r}")
        c = 1.0 / local
    else:
        raise UnknownName(f"unknown blow-up scaling {scaling!r}; choose lebesgue or mass")
    logger.debug("blow-up at %s, r = %g, scaling %s: c = %.6g", x0, r, scaling, c)
    return GridMeasure(unit, c * pushed, [p.scaled(c) for p in pieces])


@dataclass
class PolarCheck:
    index: int
    kind: str
    polar: np.ndarray
    member: bool
    residual: float
    witness_xi: np.ndarray
    normal_residual: Optional[float] = None

    @property
    def flagged(self) -> bool:
        return not self.member

    def to_dict(self):
        return {"index": self.index, "kind": self.kind, "polar": self.polar.tolist(), "member": self.member,
                "residual": self.residual, "witness_xi": self.witness_xi.tolist(),
                "normal_residual": self.normal_residual, "flagged": self.flagged}


def singular_polar_check(mu: GridMeasure, op: OperatorSpec,
                         sampling: Optional[SphereSampling] = None,
                         tol_member: float = config.MEMBER_TOL) -> List[PolarCheck]:
    """Wave-cone membership of every singular polar; hyperplanes also get |M(normal) polar|."""
    checks = []
    for i, piece in enumerate(mu.singular):
        report = wavecone_membership(op, piece.polar, sampling, tol_member)
        normal_residual = None
        if piece.kind == "hyperplane":
            M = principal_symbol(op, piece.normal).real_part
            scale = np.linalg.norm(M, 2)
            normal_residual = float(np.linalg.norm(M @ piece.polar) / scale) if scale > 0 else 0.0
        checks.append(PolarCheck(index=i, kind=piece.kind, polar=piece.polar, member=report.member,
                                 residual=report.residual, witness_xi=report.witness_xi,
                                 normal_residual=normal_residual))
        if not report.member:
            logger.warning("singular piece %d: polar %s is not in the wave cone (residual %.3e)",
                           i, piece.polar, report.residual)
    return checks


def _monomial_weight(exponents: Tuple[int, ...], domain: Box) -> Callable[[np.ndarray], np.ndarray]:
    centre = 0.5 * (domain.lower + domain.upper)
    lengths = domain.lengths

    def weight(x):
        t = (np.asarray(x, dtype=float) - centre) / lengths
        return np.prod(t ** np.asarray(exponents), axis=-1)

    return weight


def default_test_battery(domain: Box, N: int) -> List[TestPair]:
    """
    The first 32 pairs of monomial weights (degree <= 3 in centred box
    coordinates) times {|.|, area, A_i}.
    """
    d = domain.d
    exponents = [e for degree in range(4) for e in itertools.product(range(degree + 1), repeat=d)
                 if sum(e) == degree]
    integrands = [("norm", make_norm({}, N)), ("area", make_area({}, N))]
    integrands += [(f"component{i}", make_component({"index": i}, N)) for i in range(N)]
    pairs = []
    for e in exponents:
        label = "1" if sum(e) == 0 else "*".join(f"t{a}^{p}" for a, p in enumerate(e) if p)
        for name, h in integrands:
            pairs.append(TestPair(name=f"{label}(x){name}", weight=_monomial_weight(e, domain),
                                  integrand=h, weight_sup=0.5 ** sum(e)))
            if len(pairs) == BATTERY_SIZE:
                return pairs
    return pairs


def constant_pair(h: Integrand) -> TestPair:
    return TestPair(name=f"1(x){h.name}", weight=lambda x: np.ones(np.shape(x)[:-1]), integrand=h)


def pairing(pair: TestPair, mu: GridMeasure, recession_mode: str = "upper") -> float:
    """<<phi (x) h, delta[mu]>> = int phi h(density) dx + int phi h^# (polar) d|mu^s|."""
    h = pair.integrand
    x = mu.coordinates()
    ac = float(np.sum(pair.weight(x) * h.value(x if _x_dependent(h) else None, mu.states())) * mu.cell_volume)
    singular = 0.0
    for piece in mu.singular:
        points = _piece_points(mu, piece)
        rec = _recession_values(h, points if _x_dependent(h) else None, piece.polar, recession_mode)
        singular += float(np.mean(pair.weight(points) * rec)) * piece.mass
    return ac + singular


def ym_moments(sequence: Sequence[GridMeasure], pairs: Optional[Sequence[TestPair]] = None,
               f_extras: Sequence[Integrand] = (), recession_mode: str = "upper") -> EmpiricalYoungMeasure:
    """Moments of the elementary Young measures delta[mu_j] against a test battery."""
    if not sequence:
        raise ShapeError("ym_moments needs at least one measure")
    domain = sequence[0].domain
    for mu in sequence[1:]:
        if not mu.domain.same_as(domain):
            raise DomainMismatch(f"measures live on different domains: {domain.to_dict()} vs {mu.domain.to_dict()}")
    N = sequence[0].N
    pairs = list(pairs) if pairs is not None else default_test_battery(domain, N)
    pairs += [constant_pair(h) for h in f_extras]

    def row(mu: GridMeasure) -> np.ndarray:
        return np.array([pairing(p, mu, recession_mode) for p in pairs])

    workers = config.thread_limit()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(row, sequence))
    else:
        rows = [row(mu) for mu in sequence]

    sup_mass = max(total_variation(mu) for mu in sequence)
    bounds = np.array([p.weight_sup * p.integrand.growth_M * (domain.volume + sup_mass) for p in pairs])
    logger.info("Young-measure moments: %d measures x %d pairs", len(sequence), len(pairs))
    return EmpiricalYoungMeasure(
        names=[p.name for p in pairs],
        moments=np.array(rows),
        bounds=bounds,
        barycenter_totals=np.array([mu.total() for mu in sequence]),
        barycenter_field=sequence[-1],
    )
