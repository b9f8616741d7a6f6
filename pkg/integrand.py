"""
Linear-growth integrands f(x, A) and what the toolkit needs to know about them.

Each integrand is a vectorized function: `A` may carry leading batch axes
(shape (..., N)) and `x` is None, a single point, or points broadcasting
against A (shape (..., d)). Built-ins are looked up by name in
INTEGRAND_BUILDERS, the same way experiment configs refer to them.
"""
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np

import config
from errors import (ConfigError, MissingLipschitz, MissingRecession, MissingSubgradient, OutOfBall,
                    UnknownName)

logger = logging.getLogger(__name__)

ArrayFn = Callable[[Optional[np.ndarray], np.ndarray], np.ndarray]


@dataclass(eq=False)
class Integrand:
    """f(x, A) with growth constant M, |f(x, A)| <= M (1 + |A|)."""
    name: str
    fn: ArrayFn
    growth_M: float
    lip_A: Optional[float] = None
    modulus: Optional[Callable[[float], float]] = None
    recession_fn: Optional[ArrayFn] = None
    subgradient_fn: Optional[ArrayFn] = None
    convex: bool = False
    quasiconvex: bool = False
    params: Dict[str, Any] = field(default_factory=dict)

    def value(self, x, A) -> np.ndarray:
        return np.asarray(self.fn(x, np.asarray(A, dtype=float)), dtype=float)

    __call__ = value

    @property
    def has_recession(self) -> bool:
        return self.recession_fn is not None

    @property
    def has_subgradient(self) -> bool:
        return self.subgradient_fn is not None

    def recession(self, x, A) -> np.ndarray:
        if self.recession_fn is None:
            raise MissingRecession(f"integrand {self.name!r} has no analytic recession function")
        return np.asarray(self.recession_fn(x, np.asarray(A, dtype=float)), dtype=float)

    def subgradient(self, x, A) -> np.ndarray:
        if self.subgradient_fn is None:
            raise MissingSubgradient(f"integrand {self.name!r} has no subgradient")
        return np.asarray(self.subgradient_fn(x, np.asarray(A, dtype=float)), dtype=float)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "display_name": get_integrand_display_name(self.name),
            "params": {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in self.params.items()},
            "growth_M": self.growth_M,
            "lip_A": self.lip_A,
            "convex": self.convex,
            "quasiconvex": self.quasiconvex,
            "analytic_recession": self.has_recession,
            "subgradient": self.has_subgradient,
        }


@dataclass
class RecessionEstimate:
    upper: float
    lower: float
    exists: bool
    t_grid: np.ndarray
    tol: float = config.RECESSION_TOL

    def to_dict(self):
        return {"upper": self.upper, "lower": self.lower, "exists": self.exists,
                "tol": self.tol, "t_grid": self.t_grid.tolist()}


@dataclass
class LambdaViolation:
    A: np.ndarray
    P: np.ndarray
    step: float
    gap: float


@dataclass
class LambdaConvexityReport:
    violations: List[LambdaViolation] = field(default_factory=list)
    worst_gap: float = -np.inf
    checks: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self):
        return {
            "checks": self.checks,
            "worst_gap": self.worst_gap,
            "violations": [{"A": v.A.tolist(), "P": v.P.tolist(), "step": v.step, "gap": v.gap}
                           for v in self.violations],
        }


def _norm(A: np.ndarray) -> np.ndarray:
    return np.linalg.norm(A, axis=-1)


def _unit_or_zero(V: np.ndarray) -> np.ndarray:
    n = _norm(V)[..., None]
    return np.divide(V, n, out=np.zeros_like(V), where=n > 0)


def _scalar(params: Dict[str, Any], name: str, default: float) -> float:
    value = params.get(name, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {name!r} must be a number, got {value!r}") from None


def _vector(value, N: Optional[int], name: str) -> np.ndarray:
    if value is None:
        if N is None:
            raise ConfigError(f"parameter {name!r} is required when N is unknown")
        value = np.eye(N)[0]
    try:
        vec = np.asarray(value, dtype=float).ravel()
    except (TypeError, ValueError):
        raise ConfigError(f"parameter {name!r} must be a list of numbers, got {value!r}") from None
    if N is not None and vec.size != N:
        raise ConfigError(f"parameter {name!r} has {vec.size} entries, expected {N}")
    return vec


def make_norm(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    return Integrand(
        name="norm", fn=lambda x, A: _norm(A), growth_M=1.0, lip_A=1.0,
        recession_fn=lambda x, A: _norm(A),
        subgradient_fn=lambda x, A: _unit_or_zero(A),
        convex=True, quasiconvex=True,
    )


def make_area(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    return Integrand(
        name="area", fn=lambda x, A: np.sqrt(1.0 + _norm(A) ** 2), growth_M=1.0, lip_A=1.0,
        recession_fn=lambda x, A: _norm(A),
        subgradient_fn=lambda x, A: A / np.sqrt(1.0 + _norm(A) ** 2)[..., None],
        convex=True, quasiconvex=True,
    )


def make_two_well(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    """dist(A, {-P0, +P0})."""
    P0 = _vector(params.get("P0"), N, "P0")

    def fn(x, A):
        return np.minimum(_norm(A - P0), _norm(A + P0))

    def subgradient(x, A):
        to_plus, to_minus = A - P0, A + P0
        nearer_plus = (_norm(to_plus) <= _norm(to_minus))[..., None]
        return _unit_or_zero(np.where(nearer_plus, to_plus, to_minus))

    return Integrand(
        name="twowell", fn=fn, growth_M=max(1.0, float(np.linalg.norm(P0))), lip_A=1.0,
        recession_fn=lambda x, A: _norm(A), subgradient_fn=subgradient,
        params={"P0": P0},
    )


def make_anisotropic(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    """a |A| + b |A . e|."""
    a = _scalar(params, "a", 1.0)
    b = _scalar(params, "b", 1.0)
    e = _vector(params.get("e"), N, "e")
    e = e / np.linalg.norm(e)

    def fn(x, A):
        return a * _norm(A) + b * np.abs(A @ e)

    def subgradient(x, A):
        return a * _unit_or_zero(A) + b * np.sign(A @ e)[..., None] * e

    convex = a >= 0 and b >= 0
    return Integrand(
        name="anisotropic", fn=fn, growth_M=abs(a) + abs(b), lip_A=abs(a) + abs(b),
        recession_fn=fn, subgradient_fn=subgradient, convex=convex, quasiconvex=convex,
        params={"a": a, "b": b, "e": e},
    )


def make_component(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    """The linear functional A . e (e defaults to the first coordinate)."""
    if "index" in params and N is not None:
        index = params["index"]
        if not isinstance(index, int) or isinstance(index, bool) or not 0 <= index < N:
            raise ConfigError(f"parameter 'index' must be an integer in [0, {N}), got {index!r}")
        e = np.eye(N)[index]
    else:
        e = _vector(params.get("e"), N, "e")
    scale = float(np.linalg.norm(e))
    return Integrand(
        name="component", fn=lambda x, A: A @ e, growth_M=scale, lip_A=scale,
        recession_fn=lambda x, A: A @ e,
        subgradient_fn=lambda x, A: np.broadcast_to(e, A.shape).copy(),
        convex=True, quasiconvex=True, params={"e": e},
    )


def make_oscillating_slope(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    """|A| (2 + sin log(1 + |A|)) / 2, whose upper and lower recessions differ."""

    def fn(x, A):
        r = _norm(A)
        return r * (2.0 + np.sin(np.log1p(r))) / 2.0

    def subgradient(x, A):
        r = _norm(A)
        slope = (2.0 + np.sin(np.log1p(r))) / 2.0 + r * np.cos(np.log1p(r)) / (2.0 * (1.0 + r))
        return slope[..., None] * _unit_or_zero(A)

    return Integrand(name="oscillating_slope", fn=fn, growth_M=1.5, lip_A=2.0,
                     subgradient_fn=subgradient)


def make_constant(params: Dict[str, Any], N: Optional[int] = None) -> Integrand:
    c = _scalar(params, "c", 1.0)
    return Integrand(
        name="constant", fn=lambda x, A: np.full(A.shape[:-1], c), growth_M=abs(c), lip_A=0.0,
        recession_fn=lambda x, A: np.zeros(A.shape[:-1]),
        subgradient_fn=lambda x, A: np.zeros_like(A),
        convex=True, quasiconvex=True, params={"c": c},
    )


INTEGRAND_BUILDERS = {
    "norm": make_norm,
    "area": make_area,
    "twowell": make_two_well,
    "anisotropic": make_anisotropic,
    "component": make_component,
    "oscillating_slope": make_oscillating_slope,
    "constant": make_constant,
}

INTEGRAND_DISPLAY_NAMES = {
    "norm": "Euclidean norm |A|",
    "area": "Area integrand sqrt(1+|A|^2)",
    "twowell": "Two-well distance dist(A, {-P0, P0})",
    "anisotropic": "Anisotropic a|A| + b|A.e|",
    "component": "Linear functional A.e",
    "oscillating_slope": "Oscillating slope |A|(2+sin log(1+|A|))/2",
    "constant": "Constant",
    "tabulated": "Tabulated along a line",
    "envelope_recession": "Recession of the quasiconvex envelope",
}


def get_integrand_display_name(name: str) -> str:
    base = name.split("*")[0]
    return INTEGRAND_DISPLAY_NAMES.get(base, name)


def _modulus_factor(x, x0: np.ndarray, c: float):
    if x is None:
        return 1.0
    return 1.0 + c * np.linalg.norm(np.asarray(x, dtype=float) - x0, axis=-1)


def with_modulus(f: Integrand, x0: Sequence[float], c: float) -> Integrand:
    """f(x, A) (1 + c |x - x0|), the only x-dependence built-ins support."""
    x0 = np.asarray(x0, dtype=float)
    c = float(c)

    def scaled(g):
        if g is None:
            return None
        return lambda x, A: _modulus_factor(x, x0, c) * g(x, A)

    def scaled_vector(g):
        if g is None:
            return None
        return lambda x, A: np.asarray(_modulus_factor(x, x0, c))[..., None] * g(x, A)

    return Integrand(
        name=f"{f.name}*modulus", fn=scaled(f.fn), growth_M=f.growth_M,
        lip_A=f.lip_A, modulus=lambda t: f.growth_M * c * t,
        recession_fn=scaled(f.recession_fn), subgradient_fn=scaled_vector(f.subgradient_fn),
        convex=f.convex, quasiconvex=f.quasiconvex,
        params={**f.params, "x0": x0, "modulus_c": c},
    )


def build_integrand(name: str, params: Optional[Dict[str, Any]] = None, N: Optional[int] = None) -> Integrand:
    """
    Look up a built-in integrand by name.

    A "modulus": {"x0": [...], "c": ...} entry in params wraps the result in the
    multiplicative factor (1 + c |x - x0|).
    """
    params = dict(params or {})
    builder = INTEGRAND_BUILDERS.get(name)
    if builder is None:
        raise UnknownName(f"unknown integrand {name!r}; choose from {', '.join(INTEGRAND_BUILDERS)}")
    modulus = params.pop("modulus", None)
    f = builder(params, N)
    if modulus is not None:
        if not isinstance(modulus, dict) or modulus.get("x0") is None:
            raise ConfigError("parameter 'modulus' needs an 'x0' point, e.g. {\"x0\": [0, 0], \"c\": 1}")
        x0 = _vector(modulus["x0"], None, "modulus.x0")
        f = with_modulus(f, x0, _scalar(modulus, "c", 1.0))
    return f


def tabulated_integrand(base: Sequence[float], direction: Sequence[float], ts: Sequence[float],
                        values: Sequence[float], lip: float, name: str = "tabulated") -> Integrand:
    """
    Piecewise-linear profile g(A0 + t P) = values(t), extended off the line by
    lip * dist(A, line) and linearly beyond the tabulated range.
    """
    A0 = np.asarray(base, dtype=float)
    P = np.asarray(direction, dtype=float)
    length = float(np.linalg.norm(P))
    u = P / length
    taus = np.asarray(ts, dtype=float) * length
    vals = np.asarray(values, dtype=float)
    order = np.argsort(taus)
    taus, vals = taus[order], vals[order]
    if len(taus) < 2:
        raise ConfigError("a tabulated integrand needs at least two samples")
    slopes = np.diff(vals) / np.diff(taus)
    left, right = slopes[0], slopes[-1]

    def split(A):
        rel = A - A0
        tau = rel @ u
        perp = rel - tau[..., None] * u
        return tau, perp

    def profile(tau):
        inside = np.interp(tau, taus, vals)
        below = vals[0] + left * (tau - taus[0])
        above = vals[-1] + right * (tau - taus[-1])
        return np.where(tau < taus[0], below, np.where(tau > taus[-1], above, inside))

    def slope_at(tau):
        idx = np.clip(np.searchsorted(taus, tau, side="right") - 1, 0, len(slopes) - 1)
        return slopes[idx]

    def fn(x, A):
        tau, perp = split(A)
        return profile(tau) + lip * _norm(perp)

    def subgradient(x, A):
        tau, perp = split(A)
        return slope_at(tau)[..., None] * u + lip * _unit_or_zero(perp)

    def recession(x, A):
        tau = A @ u
        perp = A - tau[..., None] * u
        return np.where(tau >= 0, right * tau, left * tau) + lip * _norm(perp)

    growth = max(abs(vals).max(), abs(left), abs(right), lip, 1.0)
    return Integrand(name=name, fn=fn, growth_M=growth, lip_A=max(abs(left), abs(right), lip),
                     recession_fn=recession, subgradient_fn=subgradient,
                     params={"base": A0, "direction": P})


def recession_grid(t_max: float = config.RECESSION_T_MAX, levels: Optional[int] = None,
                   base: float = config.RECESSION_BASE) -> np.ndarray:
    if t_max < 1e3:
        raise ConfigError(f"t_max must be at least 1e3, got {t_max}")
    if levels is None:
        levels = int(math.floor(math.log(t_max) / math.log(base) + 1e-12)) + 1
        return base ** np.arange(levels)
    if levels < 20:
        raise ConfigError(f"levels must be at least 20, got {levels}")
    return np.geomspace(1.0, t_max, levels)


def estimate_recession(f: Integrand, x, A, t_max: float = config.RECESSION_T_MAX,
                       levels: Optional[int] = None, tol: float = config.RECESSION_TOL) -> RecessionEstimate:
    """
    Upper and lower recession of f at (x, A) from f(x, tA)/t on a geometric grid.

    The extremes are taken over the top half of the grid, on A/|A|, and scaled
    back by |A|.
    """
    if f.lip_A is None:
        warnings.warn(f"integrand {f.name!r} has no Lipschitz constant in A; "
                      "using the t-only recession limits anyway", MissingLipschitz)
    t_grid = recession_grid(t_max, levels)
    A = np.asarray(A, dtype=float)
    size = float(np.linalg.norm(A))
    if size == 0.0:
        return RecessionEstimate(upper=0.0, lower=0.0, exists=True, t_grid=t_grid, tol=tol)
    unit = A / size
    ratios = f.value(x, t_grid[:, None] * unit[None, :]) / t_grid
    top = ratios[len(ratios) // 2:]
    upper, lower = float(top.max()) * size, float(top.min()) * size
    exists = abs(upper - lower) <= tol * (1.0 + abs(upper))
    return RecessionEstimate(upper=upper, lower=lower, exists=bool(exists), t_grid=t_grid, tol=tol)


def s_transform(f: Integrand, x, Ahat) -> float:
    """(1 - |Ahat|) f(x, Ahat / (1 - |Ahat|)) on the open unit ball."""
    Ahat = np.asarray(Ahat, dtype=float)
    size = float(np.linalg.norm(Ahat))
    if size >= 1.0:
        raise OutOfBall(f"|Ahat| = {size} is not below 1")
    return float((1.0 - size) * f.value(x, Ahat / (1.0 - size)))


def s_transform_boundary(f: Integrand, x, Ahat) -> float:
    """Continuous extension of Sf to the unit sphere, f^inf(x, Ahat)."""
    Ahat = np.asarray(Ahat, dtype=float)
    if abs(np.linalg.norm(Ahat) - 1.0) > 1e-12:
        raise OutOfBall("boundary values need |Ahat| = 1")
    if f.has_recession:
        return float(f.recession(x, Ahat))
    estimate = estimate_recession(f, x, Ahat)
    if not estimate.exists:
        raise MissingRecession(f"{f.name!r} has no strong recession at {Ahat}: "
                               f"upper {estimate.upper:.6g}, lower {estimate.lower:.6g}")
    return estimate.upper


def lambda_convexity_check(f: Integrand, cone_dirs: Sequence, base_points: Sequence,
                           span: float = 1.0, steps: int = 20, tol: float = 1e-9,
                           x=None) -> LambdaConvexityReport:
    """Midpoint convexity of f along each direction through each base point."""
    report = LambdaConvexityReport()
    s_grid = span * np.arange(1, steps + 1) / steps
    for A in base_points:
        A = np.asarray(A, dtype=float)
        fA = float(f.value(x, A))
        for P in cone_dirs:
            P = np.asarray(P, dtype=float)
            shifts = s_grid[:, None] * P[None, :]
            gaps = fA - 0.5 * (f.value(x, A - shifts) + f.value(x, A + shifts))
            report.checks += len(s_grid)
            report.worst_gap = max(report.worst_gap, float(gaps.max()))
            for s, gap in zip(s_grid, gaps):
                if gap > tol:
                    report.violations.append(LambdaViolation(A=A, P=P, step=float(s), gap=float(gap)))
    logger.debug("Lambda-convexity: %d checks, %d violations, worst gap %.3e",
                 report.checks, len(report.violations), report.worst_gap)
    return report
