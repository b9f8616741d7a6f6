"""
Fourier-multiplier projection onto zero-mean periodic A-free fields.

Fields live on the torus Q = (-1/2, 1/2)^d sampled at cell centres and are
stored component-first, values[c, i_1, ..., i_d]. The projector at a
frequency xi is the orthogonal projection onto ker M(xi); P(0) = 0 removes
the mean and un-paired Nyquist modes are zeroed.
"""
import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
import scipy.ndimage

import config
from errors import (ConfigError, ConstantRankViolation, GridMismatch, NonHomogeneousOperator,
                    NonzeroMean, NotInKernel, ShapeError)
from pde_operator import OperatorSpec, full_symbol, principal_symbol_batch
from wave_cone import rank_profile, sphere_sampling

logger = logging.getLogger(__name__)

Grid = Tuple[int, ...]


@dataclass(eq=False)
class PeriodicField:
    """Real N-vector field on a uniform torus grid, shape (N, M_1, ..., M_d)."""
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim < 2:
            raise ShapeError(f"field values need shape (N, M_1, ..., M_d), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("field values must be finite")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def grid(self) -> Grid:
        return tuple(self.values.shape[1:])

    @property
    def d(self) -> int:
        return len(self.grid)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.grid))

    @property
    def dx(self) -> float:
        return 1.0 / self.n_nodes

    @property
    def mean(self) -> np.ndarray:
        return self.values.reshape(self.N, -1).mean(axis=1)

    def pointwise_norm(self) -> np.ndarray:
        return np.sqrt(np.sum(self.values ** 2, axis=0))

    def l1_norm(self) -> float:
        return float(self.pointwise_norm().sum() * self.dx)

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(self.values ** 2) * self.dx))

    def sup_norm(self) -> float:
        return float(self.pointwise_norm().max())

    @classmethod
    def zeros(cls, N: int, grid: Sequence[int]) -> 'PeriodicField':
        return cls(np.zeros((N,) + tuple(grid)))

    @classmethod
    def from_function(cls, fn, grid: Sequence[int]) -> 'PeriodicField':
        """Sample fn(x) -> (N, *grid) where x has shape (d, *grid)."""
        return cls(np.asarray(fn(node_coordinates(grid)), dtype=float))


@dataclass(frozen=True, eq=False)
class ProjectorTable:
    op: OperatorSpec
    grid: Grid
    matrices: np.ndarray  # (N, N, M_1, ..., M_d)
    rank: int

    def at(self, xi: Sequence[int]) -> np.ndarray:
        """P(xi) for an integer frequency inside the lattice."""
        index = tuple(int(k) % M for k, M in zip(xi, self.grid))
        return self.matrices[(slice(None), slice(None)) + index]


@dataclass
class CorrectionResult:
    field: PeriodicField
    input_residual: float
    cutoff_mass: float
    removed_mean: np.ndarray
    l1_change: float

    def to_dict(self):
        return {
            "input_residual": self.input_residual,
            "cutoff_mass": self.cutoff_mass,
            "removed_mean": self.removed_mean.tolist(),
            "l1_change": self.l1_change,
        }


def node_coordinates(grid: Sequence[int]) -> np.ndarray:
    """Cell centres of Q, shape (d, M_1, ..., M_d)."""
    axes = [-0.5 + (np.arange(M) + 0.5) / M for M in grid]
    return np.array(np.meshgrid(*axes, indexing="ij"))


def lattice_frequencies(grid: Sequence[int]) -> np.ndarray:
    """Integer frequencies in [-M/2, M/2) in FFT order, shape (M_1, ..., M_d, d)."""
    axes = [np.fft.fftfreq(M, 1.0 / M) for M in grid]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def nyquist_mask(grid: Sequence[int]) -> np.ndarray:
    freqs = lattice_frequencies(grid)
    mask = np.zeros(tuple(grid), dtype=bool)
    for axis, M in enumerate(grid):
        if M % 2 == 0:
            mask |= freqs[..., axis] == -M // 2
    return mask


def _negated_index(arr: np.ndarray, axes: Sequence[int]) -> np.ndarray:
    """arr evaluated at -xi along the given FFT-ordered axes."""
    out = arr
    for axis in axes:
        out = np.roll(np.flip(out, axis=axis), 1, axis=axis)
    return out


_TABLE_CACHE: "OrderedDict[Tuple[str, Grid], ProjectorTable]" = OrderedDict()
_TABLE_LOCK = threading.Lock()


def _check_grid(op: OperatorSpec, grid) -> Grid:
    grid = tuple(int(M) for M in grid)
    if len(grid) != op.d:
        raise GridMismatch(f"grid {grid} has {len(grid)} axes, operator lives in d={op.d}")
    if any(M < 1 for M in grid):
        raise GridMismatch(f"grid {grid} has an empty axis")
    return grid


def build_projector_table(op: OperatorSpec, grid: Sequence[int],
                          tol: float = config.NULLSPACE_TOL) -> ProjectorTable:
    """
    Tabulate P(xi) = V_ker V_ker^T on every lattice frequency.

    Args:
        op: homogeneous operator with constant rank
        grid: resolution per axis
        tol: relative singular value cutoff for the kernel

    Returns:
        ProjectorTable, cached per (op, grid); the least recently used
        table is dropped once config.PROJECTOR_CACHE_SIZE are held
    """
    grid = _check_grid(op, grid)
    key = (op.canonical_key(), grid)
    with _TABLE_LOCK:
        cached = _TABLE_CACHE.get(key)
        if cached is not None:
            _TABLE_CACHE.move_to_end(key)
    if cached is not None:
        return cached

    if not op.is_homogeneous:
        raise NonHomogeneousOperator(f"projection needs a homogeneous operator, orders present: {op.orders}")
    profile = rank_profile(op, sphere_sampling(op.d))
    if not profile.is_constant:
        raise ConstantRankViolation(
            f"rank of the symbol varies between {profile.min_rank} (at {profile.witness_min}) "
            f"and {profile.max_rank} (at {profile.witness_max})")

    freqs = lattice_frequencies(grid).reshape(-1, op.d)
    active = np.any(freqs != 0, axis=1) & ~nyquist_mask(grid).reshape(-1)
    Ms = principal_symbol_batch(op, freqs)
    _, s, Vh = np.linalg.svd(Ms, full_matrices=True)
    ranks = np.sum(s > tol * s[:, :1], axis=1)
    rank = profile.max_rank
    if np.any(active):
        lattice_ranks = ranks[active]
        if lattice_ranks.min() != lattice_ranks.max():
            raise ConstantRankViolation(
                f"rank of the symbol varies between {lattice_ranks.min()} and {lattice_ranks.max()} on the lattice")
        rank = int(lattice_ranks[0])

    kernel = Vh[:, rank:, :]
    P = np.einsum("fki,fkj->fij", kernel, kernel)
    P[~active] = 0.0
    P = np.moveaxis(P.reshape(grid + (op.N, op.N)), (-2, -1), (0, 1))
    spatial = tuple(range(2, 2 + op.d))
    P = 0.5 * (P + _negated_index(P, spatial))
    P = 0.5 * (P + np.swapaxes(P, 0, 1))
    P.setflags(write=False)

    table = ProjectorTable(op=op, grid=grid, matrices=P, rank=rank)
    with _TABLE_LOCK:
        _TABLE_CACHE[key] = table
        _TABLE_CACHE.move_to_end(key)
        # least recently used tables go first
        while len(_TABLE_CACHE) > config.PROJECTOR_CACHE_SIZE:
            _TABLE_CACHE.popitem(last=False)
    logger.info("projector table for grid %s built: rank %d, kernel dim %d", grid, rank, op.N - rank)
    return table


def _spatial_axes(u: PeriodicField) -> Tuple[int, ...]:
    return tuple(range(1, u.d + 1))


def project_afree(table: ProjectorTable, u: PeriodicField) -> PeriodicField:
    if u.grid != table.grid or u.N != table.op.N:
        raise GridMismatch(f"field is {u.N} x {u.grid}, table expects {table.op.N} x {table.grid}")
    axes = _spatial_axes(u)
    uh = np.fft.fftn(u.values, axes=axes)
    out = np.fft.ifftn(np.einsum("ij...,j...->i...", table.matrices, uh), axes=axes)
    logger.debug("projection imaginary residue %.3e", float(np.abs(out.imag).max(initial=0.0)))
    return PeriodicField(np.ascontiguousarray(out.real))


def apply_operator(op: OperatorSpec, u: PeriodicField) -> PeriodicField:
    """A u computed spectrally; the result has n components."""
    if u.N != op.N or u.d != op.d:
        raise GridMismatch(f"field is {u.N} x {u.grid}, operator maps R^{op.N} fields in d={op.d}")
    axes = _spatial_axes(u)
    symbol = full_symbol(op, lattice_frequencies(u.grid))
    Auh = np.einsum("...ij,j...->i...", symbol, np.fft.fftn(u.values, axes=axes))
    return PeriodicField(np.fft.ifftn(Auh, axes=axes).real)


def afree_residual(op: OperatorSpec, u: PeriodicField) -> float:
    """||A u||_{L2} / ||u||_{L2} with the full complex symbol, 0 for u = 0."""
    if u.N != op.N or u.d != op.d:
        raise GridMismatch(f"field is {u.N} x {u.grid}, operator maps R^{op.N} fields in d={op.d}")
    axes = _spatial_axes(u)
    uh = np.fft.fftn(u.values, axes=axes)
    denom = np.sqrt(np.sum(np.abs(uh) ** 2))
    if denom == 0.0:
        return 0.0
    symbol = full_symbol(op, lattice_frequencies(u.grid))
    Auh = np.einsum("...ij,j...->i...", symbol, uh)
    return float(np.sqrt(np.sum(np.abs(Auh) ** 2)) / denom)


def sobolev_negative_norm(u: PeriodicField, k: int, q: float = 2.0) -> float:
    """L^q norm of the inverse transform of u_hat / |xi|^k (zero-mean u only)."""
    if q <= 1.0:
        raise ConfigError(f"exponent q must exceed 1, got {q}")
    scale = u.sup_norm()
    if np.linalg.norm(u.mean) > 1e-10 * scale:
        raise NonzeroMean(f"field mean {u.mean} is not zero")
    if scale == 0.0:
        return 0.0
    axes = _spatial_axes(u)
    mag = np.linalg.norm(lattice_frequencies(u.grid), axis=-1)
    multiplier = np.zeros_like(mag)
    np.power(mag, -float(k), out=multiplier, where=mag > 0)
    v = np.fft.ifftn(np.fft.fftn(u.values, axes=axes) * multiplier, axes=axes).real
    pointwise = np.sqrt(np.sum(v ** 2, axis=0))
    return float((np.sum(pointwise ** q) * u.dx) ** (1.0 / q))


def bump_profile(s: np.ndarray) -> np.ndarray:
    """Even polynomial bump (1 - s^2)^2 on |s| < 1."""
    s = np.asarray(s, dtype=float)
    return np.where(np.abs(s) < 1.0, (1.0 - s * s) ** 2, 0.0)


def bump_weights(radius: int) -> np.ndarray:
    """Discrete 1D mollifier with `radius` nonzero cells per side, unit sum."""
    offsets = np.arange(-radius, radius + 1)
    w = bump_profile(offsets / (radius + 1.0))
    return w / w.sum()


def smooth_cutoff(grid: Sequence[int], margin: float) -> np.ndarray:
    """psi on Q: 0 on the boundary, 1 at distance >= margin from it."""
    if margin <= 0.0:
        return np.ones(tuple(grid))
    x = node_coordinates(grid)
    t = np.clip((0.5 - np.abs(x)) / margin, 0.0, 1.0)
    step = t ** 3 * (10.0 - 15.0 * t + 6.0 * t * t)
    return np.prod(step, axis=0)


def mollify_periodic(values: np.ndarray, radius: int) -> np.ndarray:
    """Separable periodic convolution of (N, *grid) values with bump_weights."""
    if radius <= 0:
        return np.array(values, dtype=float)
    weights = bump_weights(radius)
    out = np.array(values, dtype=float)
    for axis in range(1, out.ndim):
        out = scipy.ndimage.convolve1d(out, weights, axis=axis, mode="wrap")
    return out


def periodic_afree_correction(op: OperatorSpec, u: PeriodicField, cutoff_margin: float = 0.05,
                              mollify_radius: int = 2) -> CorrectionResult:
    """Cut off near the boundary, mollify, remove the mean, project."""
    table = build_projector_table(op, u.grid)
    input_residual = afree_residual(op, u)
    psi = smooth_cutoff(u.grid, cutoff_margin)
    cutoff_mass = float(np.sum((1.0 - psi) * u.pointwise_norm()) * u.dx)
    smoothed = mollify_periodic(u.values * psi, mollify_radius)
    mean = smoothed.reshape(u.N, -1).mean(axis=1)
    centered = smoothed - mean.reshape((u.N,) + (1,) * u.d)
    z = project_afree(table, PeriodicField(centered))
    change = PeriodicField(z.values - u.values).l1_norm()
    logger.debug("correction: input residual %.3e, cutoff mass %.3e, L1 change %.3e",
                 input_residual, cutoff_mass, change)
    return CorrectionResult(field=z, input_residual=input_residual, cutoff_mass=cutoff_mass,
                            removed_mean=mean, l1_change=change)


def projection_constant(op: OperatorSpec, grid: Sequence[int]) -> float:
    """
    Exact multiplier bound C with ||u - Pu||_2 <= C ||A u||_{W^{-k,2}}.

    C = (2 pi)^{-k} max over lattice directions of ||M(xi/|xi|)^+||.
    """
    table = build_projector_table(op, grid)
    freqs = lattice_frequencies(table.grid).reshape(-1, op.d)
    active = np.any(freqs != 0, axis=1) & ~nyquist_mask(table.grid).reshape(-1)
    if not np.any(active) or table.rank == 0:
        return 0.0
    units = freqs[active] / np.linalg.norm(freqs[active], axis=1, keepdims=True)
    s = np.linalg.svd(principal_symbol_batch(op, units), compute_uv=False)
    return float(np.max(1.0 / s[:, table.rank - 1]) / (2.0 * np.pi) ** op.k)


def projection_bound_ratio(op: OperatorSpec, u: PeriodicField) -> float:
    """||u - Pu||_2 / ||A u||_{W^{-k,2}} for a zero-mean field."""
    table = build_projector_table(op, u.grid)
    leftover = PeriodicField(u.values - project_afree(table, u).values).l2_norm()
    Au = apply_operator(op, u)
    Au = PeriodicField(Au.values - Au.mean.reshape((Au.N,) + (1,) * Au.d))
    denom = sobolev_negative_norm(Au, op.k, 2.0)
    if denom == 0.0:
        return 0.0
    return leftover / denom


def afree_plane_wave(op: OperatorSpec, eta: Sequence[int], grid: Sequence[int],
                     amplitude: float = 1.0) -> PeriodicField:
    """Re(c e^{2 pi i eta.x}) with c in the kernel of the full symbol at eta."""
    grid = _check_grid(op, grid)
    eta = np.asarray(eta, dtype=float)
    symbol = full_symbol(op, eta)
    kernel = scipy.linalg.null_space(symbol, rcond=config.NULLSPACE_TOL)
    if kernel.shape[1] == 0:
        raise NotInKernel(f"the symbol at frequency {eta} has a trivial kernel")
    c = kernel[:, 0]
    c = c * np.exp(-1j * np.angle(c[np.argmax(np.abs(c))]))
    phase = 2.0 * np.pi * np.tensordot(eta, node_coordinates(grid), axes=(0, 0))
    values = amplitude * np.real(c.reshape((-1,) + (1,) * len(grid)) * np.exp(1j * phase))
    return PeriodicField(values)
