"""
Constant-coefficient linear PDE operators and their symbols.

An operator A acting on R^N-valued fields over R^d is stored as a map from
multi-indices alpha to real n x N matrices, A u = sum_alpha A_alpha d^alpha u.
Its principal symbol keeps only the top order k terms,

    M(xi) = sum_{|alpha| = k} xi^alpha A_alpha,

and the scalar factor (2 pi i)^k of the Fourier representation is carried
symbolically as `phase_power`, since it never changes kernels or ranks.
"""
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import NonPositiveScale, OrderError, ParseError, ShapeError, UnknownName

logger = logging.getLogger(__name__)

MultiIndex = Tuple[int, ...]
TermsInput = Union[Dict[MultiIndex, Sequence], Iterable[Tuple[MultiIndex, Sequence]]]

BUILTIN_OPERATORS = ["div", "curl", "curlcurl", "laplace_coeff"]


def _frozen_matrix(matrix) -> np.ndarray:
    arr = np.array(matrix, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class OperatorSpec:
    """A k-th order operator sum_alpha A_alpha d^alpha with n x N coefficients.

    Terms with an all-zero matrix are dropped, and the rest are kept sorted by
    (order descending, multi-index descending). Matrices are read-only.
    """
    d: int
    N: int
    n: int
    k: int
    terms: Tuple[Tuple[MultiIndex, np.ndarray], ...] = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("d", "N", "n"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ShapeError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.k, (int, np.integer)) or self.k < 0:
            raise OrderError(f"order k must be a non-negative integer, got {self.k!r}")

        items = self.terms.items() if isinstance(self.terms, dict) else self.terms
        canonical: Dict[MultiIndex, np.ndarray] = {}
        for alpha, matrix in items:
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != self.d:
                raise ShapeError(f"multi-index {alpha} has length {len(alpha)}, expected d={self.d}")
            if any(a < 0 for a in alpha):
                raise ParseError(f"multi-index {alpha} has a negative entry")
            if sum(alpha) > self.k:
                raise OrderError(f"term {alpha} has order {sum(alpha)} above k={self.k}")
            if alpha in canonical:
                raise ParseError(f"multi-index {alpha} appears twice")
            mat = np.array(matrix, dtype=float)
            if mat.shape != (self.n, self.N):
                raise ShapeError(f"term {alpha} has shape {mat.shape}, expected {(self.n, self.N)}")
            if not np.all(np.isfinite(mat)):
                raise ParseError(f"term {alpha} has non-finite coefficients")
            if np.any(mat != 0.0):
                canonical[alpha] = _frozen_matrix(mat)

        if not any(sum(alpha) == self.k for alpha in canonical):
            raise OrderError(f"no nonzero term of top order k={self.k}")

        ordered = sorted(canonical.items(), key=lambda t: (-sum(t[0]), tuple(-a for a in t[0])))
        object.__setattr__(self, "terms", tuple(ordered))

    @property
    def orders(self) -> List[int]:
        return sorted({sum(alpha) for alpha, _ in self.terms}, reverse=True)

    @property
    def is_homogeneous(self) -> bool:
        return self.orders == [self.k]

    def term_dict(self) -> Dict[MultiIndex, np.ndarray]:
        return {alpha: mat for alpha, mat in self.terms}

    def matrix(self, alpha: MultiIndex) -> np.ndarray:
        return self.term_dict().get(tuple(alpha), np.zeros((self.n, self.N)))

    def canonical_key(self) -> str:
        return format_operator_spec(self)

    def to_dict(self) -> Dict:
        return {
            "d": int(self.d),
            "N": int(self.N),
            "n": int(self.n),
            "k": int(self.k),
            "terms": [{"alpha": list(alpha), "matrix": mat.tolist()} for alpha, mat in self.terms],
        }

    @classmethod
    def from_dict(cls, data: Dict) -> 'OperatorSpec':
        if not isinstance(data, dict):
            raise ParseError("operator spec must be a JSON object")
        missing = [key for key in ("d", "N", "n", "k", "terms") if key not in data]
        if missing:
            raise ParseError(f"operator spec is missing fields: {', '.join(missing)}")
        for key in ("d", "N", "n", "k"):
            if isinstance(data[key], bool) or not isinstance(data[key], int):
                raise ParseError(f"field {key!r} must be an integer, got {data[key]!r}")
        if not isinstance(data["terms"], list):
            raise ParseError("field 'terms' must be a list")

        terms = []
        for i, term in enumerate(data["terms"]):
            if not isinstance(term, dict) or "alpha" not in term or "matrix" not in term:
                raise ParseError(f"term #{i} must have 'alpha' and 'matrix'")
            alpha, matrix = term["alpha"], term["matrix"]
            if not isinstance(alpha, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in alpha):
                raise ParseError(f"term #{i}: alpha must be a list of integers")
            if not isinstance(matrix, list) or not all(isinstance(row, list) for row in matrix):
                raise ParseError(f"term #{i}: matrix must be a list of rows")
            widths = {len(row) for row in matrix}
            if len(widths) > 1:
                raise ShapeError(f"term #{i}: matrix rows have different lengths {sorted(widths)}")
            try:
                mat = np.array(matrix, dtype=float).reshape(len(matrix), widths.pop() if widths else 0)
            except (TypeError, ValueError):
                raise ParseError(f"term #{i}: matrix entries must be numbers")
            terms.append((tuple(alpha), mat))
        return cls(d=data["d"], N=data["N"], n=data["n"], k=data["k"], terms=terms)


@dataclass(frozen=True, eq=False)
class SymbolMatrix:
    """Principal symbol at one frequency, without the (2 pi i)^k factor."""
    xi: np.ndarray
    real_part: np.ndarray
    phase_power: int

    def complex_symbol(self) -> np.ndarray:
        return (2j * np.pi) ** self.phase_power * self.real_part


def parse_operator_spec(text: str) -> OperatorSpec:
    """Parse the JSON operator format `{d, N, n, k, terms: [{alpha, matrix}]}`."""
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, TypeError) as e:
        raise ParseError(f"operator spec is not valid JSON: {e}")
    return OperatorSpec.from_dict(data)


def format_operator_spec(op: OperatorSpec) -> str:
    """Canonical printer; parse_operator_spec(format_operator_spec(op)) is exact."""
    return json.dumps(op.to_dict(), sort_keys=True)


def _monomials(op: OperatorSpec, xis: np.ndarray, order: Optional[int] = None):
    """Yield (alpha, xi^alpha over the leading axes of xis, matrix)."""
    for alpha, mat in op.terms:
        if order is not None and sum(alpha) != order:
            continue
        mono = np.ones(xis.shape[:-1], dtype=xis.dtype)
        for j, a in enumerate(alpha):
            if a:
                mono = mono * xis[..., j] ** a
        yield alpha, mono, mat


def principal_symbol(op: OperatorSpec, xi: Sequence[float]) -> SymbolMatrix:
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (op.d,):
        raise ShapeError(f"xi has shape {xi.shape}, expected ({op.d},)")
    M = np.zeros((op.n, op.N))
    for _, mono, mat in _monomials(op, xi, order=op.k):
        M = M + mono * mat
    return SymbolMatrix(xi=xi.copy(), real_part=M, phase_power=op.k)


def principal_symbol_batch(op: OperatorSpec, xis: np.ndarray) -> np.ndarray:
    """M(xi) for every row of an (..., d) array, shape (..., n, N)."""
    xis = np.asarray(xis, dtype=float)
    if xis.shape[-1] != op.d:
        raise ShapeError(f"frequencies have trailing dimension {xis.shape[-1]}, expected {op.d}")
    out = np.zeros(xis.shape[:-1] + (op.n, op.N))
    for _, mono, mat in _monomials(op, xis, order=op.k):
        out += mono[..., None, None] * mat
    return out


def full_symbol(op: OperatorSpec, freqs: np.ndarray) -> np.ndarray:
    """Complex symbol sum_alpha (2 pi i xi)^alpha A_alpha over an (..., d) array."""
    freqs = np.asarray(freqs, dtype=float)
    out = np.zeros(freqs.shape[:-1] + (op.n, op.N), dtype=complex)
    for alpha, mono, mat in _monomials(op, freqs):
        out += np.asarray((2j * np.pi) ** sum(alpha) * mono)[..., None, None] * mat
    return out


def rescale_operator(op: OperatorSpec, r: float) -> OperatorSpec:
    """The blow-up operator T^r_* A = sum_h r^(k-h) A^h."""
    if not np.isfinite(r) or r <= 0:
        raise NonPositiveScale(f"scale must be a positive finite number, got {r}")
    terms = [(alpha, mat * r ** (op.k - sum(alpha))) for alpha, mat in op.terms]
    return OperatorSpec(d=op.d, N=op.N, n=op.n, k=op.k, terms=terms)


def operator_part(op: OperatorSpec, h: int) -> OperatorSpec:
    """A^h, the homogeneous part of order h, as an operator of order h."""
    terms = [(alpha, mat) for alpha, mat in op.terms if sum(alpha) == h]
    if not terms:
        raise OrderError(f"operator has no terms of order {h}")
    return OperatorSpec(d=op.d, N=op.N, n=op.n, k=h, terms=terms)


def _unit(d: int, j: int) -> MultiIndex:
    return tuple(1 if i == j else 0 for i in range(d))


def _divergence(d: int, m: int) -> OperatorSpec:
    # rows of an m x d matrix field, component (i, j) stored at i*d + j
    terms = []
    for j in range(d):
        mat = np.zeros((m, m * d))
        for i in range(m):
            mat[i, i * d + j] = 1.0
        terms.append((_unit(d, j), mat))
    return OperatorSpec(d=d, N=m * d, n=m, k=1, terms=terms)


def _curl(d: int, m: int) -> OperatorSpec:
    if d < 2:
        raise ShapeError("curl needs d >= 2")
    pairs = [(p, q) for p in range(d) for q in range(p + 1, d)]
    n = m * len(pairs)
    mats = {j: np.zeros((n, m * d)) for j in range(d)}
    for i in range(m):
        for s, (p, q) in enumerate(pairs):
            row = i * len(pairs) + s
            # d_p u_iq - d_q u_ip
            mats[p][row, i * d + q] += 1.0
            mats[q][row, i * d + p] -= 1.0
    return OperatorSpec(d=d, N=m * d, n=n, k=1, terms=[(_unit(d, j), mats[j]) for j in range(d)])


def symmetric_components(d: int) -> List[Tuple[int, int]]:
    """Upper-triangular index pairs (i <= j), the column order of curlcurl."""
    return [(i, j) for i in range(d) for j in range(i, d)]


def _curlcurl(d: int) -> OperatorSpec:
    if d < 2:
        raise ShapeError("curlcurl needs d >= 2")
    comps = symmetric_components(d)
    col = {pair: c for c, pair in enumerate(comps)}
    pairs = [(i, j) for i in range(d) for j in range(i + 1, d)]
    equations = [(a, b) for ia, a in enumerate(pairs) for b in pairs[ia:]]

    accum: Dict[MultiIndex, np.ndarray] = {}

    def add(row, x, y, p, q, sign):
        alpha = [0] * d
        alpha[x] += 1
        alpha[y] += 1
        alpha = tuple(alpha)
        if alpha not in accum:
            accum[alpha] = np.zeros((len(equations), len(comps)))
        accum[alpha][row, col[tuple(sorted((p, q)))]] += sign

    for row, ((i, j), (k, l)) in enumerate(equations):
        add(row, i, k, j, l, 1.0)
        add(row, j, l, i, k, 1.0)
        add(row, i, l, j, k, -1.0)
        add(row, j, k, i, l, -1.0)
    return OperatorSpec(d=d, N=len(comps), n=len(equations), k=2, terms=accum)


def _laplace_coeff(d: int, A0) -> OperatorSpec:
    if A0 is None:
        raise ShapeError("laplace_coeff needs the coefficient matrix A0")
    A0 = np.atleast_2d(np.asarray(A0, dtype=float))
    if A0.ndim != 2:
        raise ShapeError(f"A0 must be a matrix, got shape {A0.shape}")
    terms = [(tuple(2 if i == j else 0 for i in range(d)), A0) for j in range(d)]
    return OperatorSpec(d=d, N=A0.shape[1], n=A0.shape[0], k=2, terms=terms)


def builtin_operator(name: str, d: int, m: int = 1, A0=None) -> OperatorSpec:
    """
    Build one of the standard operators.

    Args:
        name: div, curl, curlcurl or laplace_coeff
        d: spatial dimension
        m: number of rows of the matrix field (div, curl)
        A0: coefficient matrix of A0 * Laplacian (laplace_coeff only)

    Returns:
        OperatorSpec
    """
    if name == "div":
        return _divergence(d, m)
    if name == "curl":
        return _curl(d, m)
    if name == "curlcurl":
        return _curlcurl(d)
    if name == "laplace_coeff":
        return _laplace_coeff(d, A0)
    raise UnknownName(f"unknown operator {name!r}; choose from {', '.join(BUILTIN_OPERATORS)}")


def operator_from_config(entry, base_dir=None) -> OperatorSpec:
    """Resolve an operator entry: inline spec, file path or {"builtin": ...}."""
    if isinstance(entry, OperatorSpec):
        return entry
    if isinstance(entry, str):
        path = Path(entry)
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        try:
            return parse_operator_spec(path.read_text())
        except OSError as e:
            raise ParseError(f"cannot read operator file {path}: {e}")
    if isinstance(entry, dict) and "builtin" in entry:
        return builtin_operator(entry["builtin"], entry.get("d", 2), entry.get("m", 1), entry.get("A0"))
    if isinstance(entry, dict):
        return OperatorSpec.from_dict(entry)
    raise ParseError(f"cannot interpret operator entry {entry!r}")
