"""
Numerical A-quasiconvex envelopes.

Q_A f(x0, A0) is estimated as the smallest cell average of f(x0, A0 + w)
over zero-mean periodic A-free fields w on a grid. Feasibility is kept by
construction: every iterate is w = P z for the projector table of the
operator, and descent directions are projected subgradients. The result is
an upper bound on the discrete infimum; laminates give certified upper
bounds to compare against.
"""
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize

import config
from errors import ConfigError, MissingSubgradient, NonHomogeneousOperator, NotInWaveCone, ShapeError, ZeroVector
from integrand import Integrand, RecessionEstimate
from pde_operator import OperatorSpec
from spectral_projection import (PeriodicField, ProjectorTable, afree_residual, build_projector_table,
                                 mollify_periodic, node_coordinates, project_afree)
from wave_cone import SphereSampling, symbol_kernel, wavecone_membership

logger = logging.getLogger(__name__)

DEFAULT_GRIDS = {1: (256,), 2: (64, 64), 3: (16, 16, 16)}


@dataclass
class EnvelopeConfig:
    grid: Optional[Tuple[int, ...]] = None
    restarts: int = 8
    max_iters: int = 500
    initial_step: float = 1.0
    backtrack_shrink: float = 0.5
    max_backtracks: int = 30
    armijo: float = 1e-4
    stop_rel: float = 1e-6
    stop_window: int = 50
    warm_starts: bool = True
    laminate_eps_cells: int = 4
    init_scale: float = 0.5
    seed: int = 0
    threads: Optional[int] = None
    time_limit: Optional[float] = None  # seconds per envelope call, shared by all restarts

    def __post_init__(self):
        if self.time_limit is not None and not self.time_limit > 0:
            raise ConfigError(f"time_limit must be positive seconds, got {self.time_limit}")
        if self.restarts < 1:
            raise ConfigError(f"restarts must be at least 1, got {self.restarts}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        if not 0 < self.backtrack_shrink < 1:
            raise ConfigError(f"backtrack_shrink must lie in (0, 1), got {self.backtrack_shrink}")
        if self.grid is not None:
            self.grid = tuple(int(M) for M in self.grid)

    def resolved_grid(self, d: int) -> Tuple[int, ...]:
        if self.grid is not None:
            if len(self.grid) != d:
                raise ConfigError(f"envelope grid {self.grid} does not match d={d}")
            return self.grid
        return DEFAULT_GRIDS.get(d, (8,) * d)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid"] = list(self.grid) if self.grid is not None else None
        return data

    @classmethod
    def from_dict(cls, data: Optional[Dict[str, Any]]) -> 'EnvelopeConfig':
        data = dict(data or {})
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown envelope settings: {', '.join(sorted(unknown))}")
        return cls(**data)


@dataclass
class Laminate:
    """Two-phase laminate A0 + (1-theta) s P and A0 - theta s P."""
    value: float
    theta: float
    scale: float
    direction: np.ndarray

    def to_dict(self):
        return {"value": self.value, "theta": self.theta, "scale": self.scale,
                "direction": self.direction.tolist()}


@dataclass
class EnvelopeResult:
    value: float
    argmin_field: PeriodicField
    trace: List[float]
    restarts_summary: List[Dict[str, Any]] = field(default_factory=list)
    traces: List[List[float]] = field(default_factory=list)
    f_at_A0: float = float("nan")
    afree_residual: float = 0.0
    grid: Tuple[int, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "value": self.value,
            "f_at_A0": self.f_at_A0,
            "grid": list(self.grid),
            "afree_residual": self.afree_residual,
            "argmin_mean": self.argmin_field.mean.tolist(),
            "iterations": len(self.trace) - 1,
            "restarts": self.restarts_summary,
        }


@dataclass
class _Start:
    index: int
    kind: str
    field: np.ndarray
    note: Dict[str, Any] = field(default_factory=dict)


@dataclass
class EnvelopeContext:
    """Read-only data shared by all restarts of one envelope call."""
    op: OperatorSpec
    f: Integrand
    x0: Optional[np.ndarray]
    A0: np.ndarray
    table: ProjectorTable
    cfg: EnvelopeConfig

    started_at: float = 0.0

    def out_of_time(self) -> bool:
        limit = self.cfg.time_limit
        return limit is not None and time.time() - self.started_at >= limit

    @property
    def grid(self) -> Tuple[int, ...]:
        return self.table.grid

    def states(self, w: np.ndarray) -> np.ndarray:
        """A0 + w(y) at every node, shape (*grid, N)."""
        return np.moveaxis(w, 0, -1) + self.A0

    def objective(self, w: np.ndarray) -> float:
        return float(np.mean(self.f.value(self.x0, self.states(w))))

    def project(self, values: np.ndarray) -> np.ndarray:
        return project_afree(self.table, PeriodicField(values)).values

    def direction(self, w: np.ndarray) -> np.ndarray:
        """Projected subgradient; P is self-adjoint so this is a true subgradient of the objective."""
        G = np.moveaxis(self.f.subgradient(self.x0, self.states(w)), -1, 0)
        return self.project(G)


def chi_profile(theta: float, eps: float, phase: np.ndarray, resolution: int = 4096) -> np.ndarray:
    """
    The zero-mean 1-periodic two-level profile, (1-theta) on [0, theta) and
    -theta on [theta, 1), mollified at scale eps (in periods).
    """
    phase = np.mod(np.asarray(phase, dtype=float), 1.0)
    if eps <= 0.0:
        return np.where(phase < theta, 1.0 - theta, -theta)
    s = (np.arange(resolution) + 0.5) / resolution
    step = np.where(s < theta, 1.0 - theta, -theta)
    offsets = np.fft.fftfreq(resolution, 1.0 / resolution) / resolution
    kernel = np.where(np.abs(offsets) < eps, (1.0 - (offsets / eps) ** 2) ** 2, 0.0)
    kernel /= kernel.sum()
    smooth = np.real(np.fft.ifft(np.fft.fft(step) * np.fft.fft(kernel)))
    return np.interp(phase, s, smooth, period=1.0)


def best_laminate(f: Integrand, x0, A0, P0, theta_points: int = 1001, s_points: int = 241,
                  refine: bool = True) -> Laminate:
    """
    Best two-point laminate along P0 over a theta grid and a geometric s grid,
    polished by Nelder-Mead in (theta, log s). s -> 0 (value f(A0)) is always
    a candidate.
    """
    A0 = np.asarray(A0, dtype=float)
    P0 = np.asarray(P0, dtype=float)
    size = float(np.linalg.norm(P0))
    if size == 0.0:
        raise ZeroVector("laminate direction must be nonzero")
    f0 = float(f.value(x0, A0))

    def laminate_value(theta, s):
        theta = np.asarray(theta, dtype=float)
        s = np.asarray(s, dtype=float)
        plus = A0 + ((1.0 - theta) * s)[..., None] * P0
        minus = A0 - (theta * s)[..., None] * P0
        return theta * f.value(x0, plus) + (1.0 - theta) * f.value(x0, minus)

    reference = (1.0 + float(np.linalg.norm(A0))) / size
    thetas = np.linspace(0.0, 1.0, theta_points)
    scales = np.geomspace(1e-3 * reference, 1e3 * reference, s_points)
    TH, S = np.meshgrid(thetas, scales, indexing="ij")
    values = laminate_value(TH, S)
    i, j = np.unravel_index(np.argmin(values), values.shape)
    best = Laminate(value=float(values[i, j]), theta=float(thetas[i]), scale=float(scales[j]), direction=P0)

    if refine:
        def objective(p):
            theta = min(max(p[0], 0.0), 1.0)
            return float(laminate_value(theta, np.exp(p[1])))

        out = minimize(objective, np.array([best.theta, np.log(best.scale)]), method="Nelder-Mead",
                       options={"xatol": 1e-12, "fatol": 1e-15, "maxiter": 2000})
        if out.fun < best.value:
            best = Laminate(value=float(out.fun), theta=float(min(max(out.x[0], 0.0), 1.0)),
                            scale=float(np.exp(out.x[1])), direction=P0)

    if f0 <= best.value:
        return Laminate(value=f0, theta=0.5, scale=0.0, direction=P0)
    return best


def laminate_oracle(f: Integrand, x0, A0, P0, op: Optional[OperatorSpec] = None,
                    sampling: Optional[SphereSampling] = None,
                    tol_member: float = config.MEMBER_TOL) -> float:
    """Laminate upper bound on Q_A f(x0, A0); with `op`, P0 must be in the wave cone."""
    if op is not None:
        report = wavecone_membership(op, P0, sampling, tol_member)
        if not report.member:
            raise NotInWaveCone(f"{report.query} is not in the wave cone (residual {report.residual:.3e})")
    return best_laminate(f, x0, A0, P0).value


def _lattice_directions(d: int) -> List[np.ndarray]:
    dirs = [np.eye(d)[i] for i in range(d)]
    for i in range(d):
        for j in range(i + 1, d):
            for sign in (1.0, -1.0):
                v = np.zeros(d)
                v[i], v[j] = 1.0, sign
                dirs.append(v)
    return dirs


def _laminate_starts(ctx: EnvelopeContext) -> List[_Start]:
    """Laminates along kernel directions of small integer frequencies."""
    y = node_coordinates(ctx.grid)
    eps = ctx.cfg.laminate_eps_cells / max(ctx.grid)
    starts = []
    for xi in _lattice_directions(ctx.op.d):
        kernel = symbol_kernel(ctx.op, xi)
        for c in range(kernel.shape[1]):
            P = kernel[:, c]
            lam = best_laminate(ctx.f, ctx.x0, ctx.A0, P)
            if lam.scale == 0.0:
                continue
            phase = np.tensordot(xi, y, axes=(0, 0))
            # phases along an integer direction sit on a lattice of spacing 1/cells; whole cells keep the mean at zero
            cells = int(np.lcm.reduce([ctx.grid[a] for a in np.flatnonzero(xi)]))
            theta = min(max(round(lam.theta * cells), 1), cells - 1) / cells
            for width in (eps, 0.0):
                profile = chi_profile(theta, width, phase)
                w = lam.scale * P.reshape((-1,) + (1,) * ctx.op.d) * profile
                starts.append(_Start(index=-1, kind="laminate", field=ctx.project(w),
                                     note={"xi": xi.tolist(), "theta": theta, "scale": lam.scale,
                                           "eps": width, "laminate_value": lam.value}))
    return starts


def _descend(ctx: EnvelopeContext, start: _Start) -> Dict[str, Any]:
    """Projected subgradient descent with Armijo backtracking and a monotone trace."""
    cfg = ctx.cfg
    w = start.field
    J = ctx.objective(w)
    trace = [J]
    step = cfg.initial_step
    failures = 0
    diminishing = 0
    initial = J
    timed_out = False

    for it in range(cfg.max_iters):
        if ctx.out_of_time():
            timed_out = True
            logger.warning("restart %d: time limit of %gs reached after %d iterations",
                           start.index, cfg.time_limit, it)
            break
        D = ctx.direction(w)
        g2 = float(np.mean(np.sum(D * D, axis=0)))
        if g2 <= 1e-30:
            break
        if diminishing == 0:
            tau = step
            accepted = False
            for _ in range(cfg.max_backtracks):
                candidate = w - tau * D
                Jc = ctx.objective(candidate)
                if Jc <= J - cfg.armijo * tau * g2:
                    accepted = True
                    break
                tau *= cfg.backtrack_shrink
            if accepted:
                w, J = candidate, Jc
                step = min(2.0 * tau, cfg.initial_step)
                failures = 0
            else:
                failures += 1
                if failures >= 2:
                    diminishing = 1
                    logger.debug("restart %d: backtracking failed twice, switching to diminishing steps",
                                 start.index)
        else:
            tau = cfg.initial_step / (diminishing + 1) / np.sqrt(g2)
            diminishing += 1
            candidate = w - tau * D
            Jc = ctx.objective(candidate)
            if Jc <= J:
                w, J = candidate, Jc
        trace.append(J)

        window = cfg.stop_window
        if len(trace) > window:
            old = trace[-window - 1]
            if old - J <= cfg.stop_rel * max(abs(old), 1e-12):
                break

    w = ctx.project(w)
    J_final = ctx.objective(w)
    if J_final > trace[-1]:
        # reprojection only removes rounding; keep the trace monotone
        trace.append(trace[-1])
    else:
        trace.append(J_final)
    logger.info("restart %d (%s): %.6g -> %.6g in %d iterations",
                start.index, start.kind, initial, J_final, len(trace) - 2)
    return {"index": start.index, "kind": start.kind, "initial": initial, "final": J_final,
            "iterations": len(trace) - 2, "timed_out": timed_out, "field": w, "trace": trace, **start.note}


def quasiconvex_envelope(op: OperatorSpec, f: Integrand, x0, A0,
                         cfg: Optional[EnvelopeConfig] = None) -> EnvelopeResult:
    """
    Estimate Q_A f(x0, A0).

    Args:
        op: homogeneous operator with constant rank
        f: integrand with a subgradient in A
        x0: frozen spatial point (None for x-independent f)
        A0: average state
        cfg: optimizer settings

    Returns:
        EnvelopeResult with the best value over all starts
    """
    cfg = cfg or EnvelopeConfig()
    if not op.is_homogeneous:
        raise NonHomogeneousOperator(f"envelopes need a homogeneous operator, orders present: {op.orders}")
    if not f.has_subgradient:
        raise MissingSubgradient(f"integrand {f.name!r} has no subgradient")
    A0 = np.asarray(A0, dtype=float).ravel()
    if A0.shape != (op.N,):
        raise ShapeError(f"A0 has {A0.size} entries, operator acts on R^{op.N}")
    x0 = None if x0 is None else np.asarray(x0, dtype=float)

    table = build_projector_table(op, cfg.resolved_grid(op.d))
    ctx = EnvelopeContext(op=op, f=f, x0=x0, A0=A0, table=table, cfg=cfg, started_at=time.time())
    shape = (op.N,) + ctx.grid

    starts: List[_Start] = [_Start(index=0, kind="zero", field=np.zeros(shape))]
    if cfg.warm_starts:
        warm = _laminate_starts(ctx)
        warm.sort(key=lambda s: ctx.objective(s.field))
        starts.extend(warm[:max(cfg.restarts - 1, 0)])
    random_count = max(cfg.restarts - (len(starts) - 1), 1)
    for r in range(random_count):
        rng = np.random.default_rng([cfg.seed, r])
        z = rng.standard_normal(shape) * cfg.init_scale * (1.0 + float(np.linalg.norm(A0)))
        starts.append(_Start(index=-1, kind="random", field=ctx.project(mollify_periodic(z, 2)),
                             note={"seed": [cfg.seed, r]}))
    for i, start in enumerate(starts):
        start.index = i

    workers = cfg.threads or config.thread_limit()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(lambda s: _descend(ctx, s), starts))
    else:
        outcomes = [_descend(ctx, s) for s in starts]

    best = min(outcomes, key=lambda o: (o["final"], o["index"]))
    argmin = PeriodicField(best["field"])
    summary = [{k: v for k, v in o.items() if k not in ("field", "trace")} for o in outcomes]
    result = EnvelopeResult(
        value=float(best["final"]),
        argmin_field=argmin,
        trace=best["trace"],
        restarts_summary=summary,
        traces=[o["trace"] for o in outcomes],
        f_at_A0=float(f.value(x0, A0)),
        afree_residual=afree_residual(op, argmin),
        grid=ctx.grid,
    )
    logger.info("Q_A f at %s ~ %.6g (f = %.6g, best start %d/%s, %.2fs)", A0, result.value,
                result.f_at_A0, best["index"], best["kind"], time.time() - ctx.started_at)
    return result


def envelope_recession(op: OperatorSpec, f: Integrand, x0, direction,
                       t_grid: Sequence[float] = (16.0, 32.0, 64.0, 128.0),
                       cfg: Optional[EnvelopeConfig] = None, tol: float = 2e-2) -> RecessionEstimate:
    """(Q_A f)^# along `direction` from envelope values at t * direction / |direction|."""
    direction = np.asarray(direction, dtype=float).ravel()
    size = float(np.linalg.norm(direction))
    if size == 0.0:
        raise ZeroVector("recession direction must be nonzero")
    unit = direction / size
    ts = np.asarray(sorted(t_grid), dtype=float)
    ratios = np.array([quasiconvex_envelope(op, f, x0, t * unit, cfg).value / t for t in ts])
    top = ratios[len(ratios) // 2:]
    upper, lower = float(top.max()) * size, float(top.min()) * size
    exists = abs(upper - lower) <= tol * (1.0 + abs(upper))
    return RecessionEstimate(upper=upper, lower=lower, exists=bool(exists), t_grid=ts, tol=tol)


def envelope_recession_integrand(op: OperatorSpec, f: Integrand, x0,
                                 t_grid: Sequence[float] = (16.0, 32.0, 64.0, 128.0),
                                 cfg: Optional[EnvelopeConfig] = None) -> Integrand:
    """g = (Q_A f)^#, evaluated lazily on unit directions and cached."""
    cache: Dict[Tuple[float, ...], float] = {}

    def at_unit(unit: np.ndarray) -> float:
        key = tuple(np.round(unit, 12) + 0.0)
        if key not in cache:
            cache[key] = envelope_recession(op, f, x0, unit, t_grid, cfg).upper
        return cache[key]

    def fn(x, A):
        A = np.asarray(A, dtype=float)
        flat = A.reshape(-1, A.shape[-1])
        out = np.zeros(len(flat))
        for i, row in enumerate(flat):
            size = float(np.linalg.norm(row))
            if size > 0.0:
                out[i] = size * at_unit(row / size)
        return out.reshape(A.shape[:-1])

    return Integrand(name="envelope_recession", fn=fn, growth_M=f.growth_M, lip_A=f.lip_A,
                     recession_fn=fn, quasiconvex=True, params={"base": f.name})


def grid_refinement_series(op: OperatorSpec, f: Integrand, x0, A0,
                           grids: Sequence[Tuple[int, ...]] = ((32, 32), (64, 64), (128, 128)),
                           cfg: Optional[EnvelopeConfig] = None) -> List[Dict[str, Any]]:
    """Envelope values under grid refinement; monitored, no rate is asserted."""
    cfg = cfg or EnvelopeConfig()
    series = []
    for grid in grids:
        local = EnvelopeConfig.from_dict({**cfg.to_dict(), "grid": tuple(grid)})
        result = quasiconvex_envelope(op, f, x0, A0, local)
        series.append({"grid": list(grid), "value": result.value})
    return series
