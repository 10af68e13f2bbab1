"""Exterior algebra over a single inner-product fiber.

Elements of grade k over an n-dimensional space are stored as coefficient
arrays over increasing multi-indices I = (i_1 < ... < i_k), ordered
lexicographically (0-based). The same coefficient layout is used by the
grid-sampled forms in :mod:`qrforms.forms`, with extra trailing axes for
the grid.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np

from .rng import Xorshift64Star

SYMMETRY_RTOL = 1e-12


@lru_cache(maxsize=None)
def multi_indices(n: int, k: int) -> tuple[tuple[int, ...], ...]:
    """Increasing k-subsets of ``range(n)`` in lexicographic order."""
    return tuple(itertools.combinations(range(n), k))


@lru_cache(maxsize=None)
def index_lookup(n: int, k: int) -> dict[tuple[int, ...], int]:
    return {I: a for a, I in enumerate(multi_indices(n, k))}


def merge_sign(I: tuple[int, ...], J: tuple[int, ...]) -> int:
    """Sign of the permutation sorting the concatenation ``I + J`` (disjoint)."""
    inversions = sum(1 for i in I for j in J if i > j)
    return -1 if inversions % 2 else 1


@lru_cache(maxsize=None)
def wedge_table(n: int, ka: int, kb: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Index arrays ``(a, b, c, sign)`` with e_a ^ e_b = sign * e_c."""
    A, B, C, S = [], [], [], []
    out = index_lookup(n, ka + kb)
    for a, I in enumerate(multi_indices(n, ka)):
        for b, J in enumerate(multi_indices(n, kb)):
            if set(I) & set(J):
                continue
            A.append(a)
            B.append(b)
            C.append(out[tuple(sorted(I + J))])
            S.append(merge_sign(I, J))
    return (np.array(A, dtype=int), np.array(B, dtype=int),
            np.array(C, dtype=int), np.array(S, dtype=float))


def wedge_coeffs(a: np.ndarray, b: np.ndarray, n: int, ka: int, kb: int) -> np.ndarray:
    """Wedge of coefficient arrays with the multi-index on axis 0.

    Trailing axes broadcast, so this works both for single fibers and for
    whole grids of samples.
    """
    if ka + kb > n:
        raise ValueError(f"grade overflow: {ka} + {kb} > {n}")
    ia, ib, ic, sign = wedge_table(n, ka, kb)
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    trail = np.broadcast_shapes(a.shape[1:], b.shape[1:])
    out = np.zeros((comb(n, ka + kb),) + trail)
    if len(ia):
        terms = sign.reshape((-1,) + (1,) * len(trail)) * a[ia] * b[ib]
        np.add.at(out, ic, terms)
    return out


def compound_matrix(A: np.ndarray, k: int) -> np.ndarray:
    """k-th compound matrix: entry (I, J) is the minor det A[I, J].

    ``A`` may carry leading batch axes (``(..., n, n)``). This is the matrix
    of the induced map on k-vectors in the multi-index basis.
    """
    A = np.asarray(A, dtype=float)
    n = A.shape[-1]
    idx = multi_indices(n, k)
    batch = A.shape[:-2]
    if k == 0:
        return np.ones(batch + (1, 1))
    rows = np.array(idx)
    sub = A[..., rows[:, None, :, None], rows[None, :, None, :]]
    return np.linalg.det(sub)


# --------------------------------------------------------------------------
# Values


@dataclass(frozen=True, eq=False)
class Metric:
    """Positive-definite Gram matrix on one tangent fiber."""

    gram: np.ndarray

    def __post_init__(self):
        g = np.array(self.gram, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("Gram matrix must be square")
        if not np.all(np.isfinite(g)):
            raise ValueError("Gram matrix has non-finite entries")
        scale = max(np.abs(g).max(), 1.0)
        if np.abs(g - g.T).max() > SYMMETRY_RTOL * scale:
            raise ValueError("Gram matrix is not symmetric")
        g = 0.5 * (g + g.T)
        if np.linalg.eigvalsh(g)[0] <= 0:
            raise ValueError("Gram matrix is not positive definite")
        g.setflags(write=False)
        object.__setattr__(self, "gram", g)

    @classmethod
    def identity(cls, n: int) -> Metric:
        return cls(np.eye(n))

    @property
    def dim(self) -> int:
        return self.gram.shape[0]

    @property
    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.gram)

    def sqrt(self) -> np.ndarray:
        w, V = np.linalg.eigh(self.gram)
        return (V * np.sqrt(w)) @ V.T

    def inv_sqrt(self) -> np.ndarray:
        w, V = np.linalg.eigh(self.gram)
        return (V / np.sqrt(w)) @ V.T

    def to_json(self) -> str:
        return json.dumps({"type": "metric", "dim": self.dim, "gram": self.gram.tolist()})

    @classmethod
    def from_json(cls, text: str) -> Metric:
        data = json.loads(text)
        if data.get("type") != "metric":
            raise ValueError("not a metric record")
        m = cls(np.array(data["gram"], dtype=float))
        if m.dim != data["dim"]:
            raise ValueError("dim field disagrees with gram shape")
        return m


@dataclass(frozen=True, eq=False)
class _Graded:
    dim: int
    grade: int
    coeffs: np.ndarray

    _kind = "graded"

    def __post_init__(self):
        n, k = int(self.dim), int(self.grade)
        if n < 1:
            raise ValueError("dimension must be >= 1")
        if not 0 <= k <= n:
            raise ValueError(f"grade {k} outside [0, {n}]")
        c = np.array(self.coeffs, dtype=float).reshape(-1)
        if c.size != comb(n, k):
            raise ValueError(f"expected {comb(n, k)} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise ValueError("coefficients must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "dim", n)
        object.__setattr__(self, "grade", k)
        object.__setattr__(self, "coeffs", c)

    @classmethod
    def basis(cls, dim: int, index):
        """Basis element for a multi-index given as an iterable of 0-based axes."""
        I = tuple(sorted(index))
        k = len(I)
        c = np.zeros(comb(dim, k))
        c[index_lookup(dim, k)[I]] = 1.0
        return cls(dim, k, c)

    @classmethod
    def from_vector(cls, v):
        v = np.asarray(v, dtype=float)
        return cls(v.size, 1, v)

    @classmethod
    def scalar(cls, dim: int, value: float):
        return cls(dim, 0, [value])

    def _same(self, other):
        if type(other) is not type(self):
            raise TypeError(f"cannot combine {type(self).__name__} with {type(other).__name__}")
        if other.dim != self.dim or other.grade != self.grade:
            raise ValueError("dimension/grade mismatch")

    def __add__(self, other):
        self._same(other)
        return type(self)(self.dim, self.grade, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._same(other)
        return type(self)(self.dim, self.grade, self.coeffs - other.coeffs)

    def __neg__(self):
        return type(self)(self.dim, self.grade, -self.coeffs)

    def __mul__(self, c: float):
        return type(self)(self.dim, self.grade, float(c) * self.coeffs)

    __rmul__ = __mul__

    def __xor__(self, other):
        return wedge(self, other)

    def allclose(self, other, atol: float = 1e-12) -> bool:
        self._same(other)
        return bool(np.allclose(self.coeffs, other.coeffs, rtol=0, atol=atol))

    def to_json(self) -> str:
        return json.dumps({"type": self._kind, "dim": self.dim, "grade": self.grade,
                           "coeffs": self.coeffs.tolist()})

    @classmethod
    def from_json(cls, text: str):
        data = json.loads(text)
        if data.get("type") != cls._kind:
            raise ValueError(f"expected a {cls._kind} record")
        return cls(data["dim"], data["grade"], data["coeffs"])

    def __repr__(self):
        terms = [f"{c:+.6g}*e{list(I)}" for c, I in zip(self.coeffs, multi_indices(self.dim, self.grade)) if c]
        return f"{type(self).__name__}(n={self.dim}, k={self.grade}: {' '.join(terms) or '0'})"


class KVector(_Graded):
    """Element of the k-th exterior power of a tangent fiber."""

    _kind = "kvector"


class KCovector(_Graded):
    """Element of the k-th exterior power of a cotangent fiber."""

    _kind = "kcovector"


# --------------------------------------------------------------------------
# Operations


def wedge(a, b):
    if type(a) is not type(b):
        raise TypeError("wedge operands must both be k-vectors or both k-covectors")
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.grade + b.grade > a.dim:
        raise ValueError(f"grade overflow: {a.grade} + {b.grade} > {a.dim}")
    c = wedge_coeffs(a.coeffs, b.coeffs, a.dim, a.grade, b.grade)
    return type(a)(a.dim, a.grade + b.grade, c)


def wedge_all(factors):
    out = factors[0]
    for f in factors[1:]:
        out = wedge(out, f)
    return out


def _check_metric(x, g: Metric):
    if g.dim != x.dim:
        raise ValueError(f"metric dimension {g.dim} does not match element dimension {x.dim}")


def grassmann_inner(a, b, g: Metric | None = None) -> float:
    """Inner product induced on k-vectors (or k-covectors) by ``g``.

    On k-vectors the Gram matrix of the basis e_I is the k-th compound of
    ``g``; on covectors it is the compound of ``g^{-1}``.
    """
    a._same(b)
    g = g or Metric.identity(a.dim)
    _check_metric(a, g)
    G = g.gram if isinstance(a, KVector) else g.inverse
    return float(a.coeffs @ compound_matrix(G, a.grade) @ b.coeffs)


def norm(a, g: Metric | None = None) -> float:
    return float(np.sqrt(max(grassmann_inner(a, a, g), 0.0)))


def metric_flat(v: KVector, g: Metric) -> KCovector:
    if not isinstance(v, KVector):
        raise TypeError("metric_flat expects a KVector")
    _check_metric(v, g)
    return KCovector(v.dim, v.grade, compound_matrix(g.gram, v.grade) @ v.coeffs)


def metric_sharp(alpha: KCovector, g: Metric) -> KVector:
    if not isinstance(alpha, KCovector):
        raise TypeError("metric_sharp expects a KCovector")
    _check_metric(alpha, g)
    return KVector(alpha.dim, alpha.grade, compound_matrix(g.inverse, alpha.grade) @ alpha.coeffs)


def evaluate(alpha: KCovector, v: KVector) -> float:
    """Pairing alpha(v) of a k-covector with a k-vector (dual bases)."""
    if alpha.dim != v.dim or alpha.grade != v.grade:
        raise ValueError("dimension/grade mismatch")
    return float(alpha.coeffs @ v.coeffs)


@dataclass(frozen=True)
class Orthogonalized:
    factors: list
    degenerate: bool


def simple_orthogonalize(factors, g: Metric | None = None, rtol: float = 1e-12) -> Orthogonalized:
    """Gram-Schmidt on the factors of a simple k-vector, keeping the wedge.

    Each factor is reduced by its g-projection on the previously processed
    factors; this leaves the wedge unchanged. A factor whose remainder is
    negligible relative to its length makes the wedge zero; the result is
    then flagged degenerate and that factor is replaced by the zero vector.
    """
    factors = list(factors)
    if not factors:
        raise ValueError("need at least one factor")
    n = factors[0].dim
    if len(factors) > n:
        raise ValueError(f"{len(factors)} factors exceed dimension {n}")
    for f in factors:
        if not isinstance(f, KVector) or f.grade != 1 or f.dim != n:
            raise ValueError("factors must be grade-1 KVectors of one dimension")
    g = g or Metric.identity(n)
    _check_metric(factors[0], g)
    G = g.gram
    out: list[np.ndarray] = []
    degenerate = False
    for f in factors:
        v = f.coeffs.copy()
        length = np.sqrt(v @ G @ v)
        for _ in range(2):  # second pass restores orthogonality lost to rounding
            for u in out:
                uu = u @ G @ u
                if uu > 0:
                    v = v - (u @ G @ v) / uu * u
        if np.sqrt(max(v @ G @ v, 0.0)) <= rtol * max(length, np.finfo(float).tiny):
            degenerate = True
            v = np.zeros(n)
        out.append(v)
    return Orthogonalized([KVector(n, 1, v) for v in out], degenerate)


@dataclass(frozen=True)
class ComassBudget:
    starts: int = 64
    samples: int = 100_000
    max_sweeps: int = 2000
    tol: float = 1e-15
    seed: int = 20240611


@dataclass(frozen=True)
class ComassResult:
    lower: float
    certified: bool
    norm: float


def _minors(U: np.ndarray, k: int) -> np.ndarray:
    """k x k row-minors of a batch of n x k frames, shape (..., C(n, k))."""
    rows = np.array(multi_indices(U.shape[-2], k))
    return np.linalg.det(U[..., rows, :])


def _frame_values(beta: np.ndarray, U: np.ndarray, k: int) -> np.ndarray:
    return _minors(U, k) @ beta


def comass_norm(alpha: KCovector, g: Metric | None = None,
                budget: ComassBudget | None = None) -> ComassResult:
    """Lower bound for the comass of ``alpha`` (sup over unit simple k-vectors).

    Grades 0, 1, n-1 and n are exact: every k-vector is simple there, so the
    comass equals the Grassmann norm. Other grades maximize
    alpha(v_1 ^ ... ^ v_k) over orthonormal frames by block-coordinate
    ascent (the objective is linear in each frame column) from coordinate
    frames plus random starts, and by dense random sampling. Coordinate
    starts guarantee ``lower >= max_I |alpha_I|`` in whitened coordinates.
    """
    budget = budget or ComassBudget()
    g = g or Metric.identity(alpha.dim)
    _check_metric(alpha, g)
    n, k = alpha.dim, alpha.grade
    full = norm(alpha, g)
    if k in (0, 1, n - 1, n):
        return ComassResult(full, True, full)

    # whitened coordinates: g-orthonormal frames become Euclidean-orthonormal
    beta = compound_matrix(g.inv_sqrt(), k) @ alpha.coeffs
    rng = Xorshift64Star(budget.seed)
    best = 0.0

    if budget.samples > 0:
        chunk = 20_000
        left = budget.samples
        while left > 0:
            m = min(chunk, left)
            W = rng.normal((m, n, k))
            D = _minors(W, k)
            lengths = np.linalg.norm(D, axis=-1)
            ok = lengths > 1e-12
            vals = np.abs(D[ok] @ beta) / lengths[ok]
            if vals.size:
                best = max(best, float(vals.max()))
            left -= m

    eye = np.eye(n)
    starts = [eye[:, list(I)] for I in multi_indices(n, k)]
    for _ in range(budget.starts):
        Q, _ = np.linalg.qr(rng.normal((n, k)))
        starts.append(Q)
    U = np.array(starts)
    # orient each start so the objective is nonnegative
    U[..., 0] *= np.where(_frame_values(beta, U, k) < 0, -1.0, 1.0)[:, None]

    # gradient w.r.t. column j: replace column j by each basis vector e_i
    S = U.shape[0]
    prev = _frame_values(beta, U, k)
    for _ in range(budget.max_sweeps):
        for j in range(k):
            trial = np.repeat(U[:, None, :, :], n, axis=1)  # (S, n, n, k)
            trial[:, :, :, j] = eye[None, :, :]
            grad = _frame_values(beta, trial, k)  # (S, n)
            others = np.delete(U, j, axis=2)
            proj = grad - np.einsum("sik,sk->si", others, np.einsum("sik,si->sk", others, grad))
            length = np.linalg.norm(proj, axis=1)
            move = length > 1e-300
            U[move, :, j] = proj[move] / length[move, None]
        cur = _frame_values(beta, U, k)
        if np.max(np.abs(cur - prev)) <= budget.tol * max(1.0, float(np.max(np.abs(cur)))):
            prev = cur
            break
        prev = cur
    best = max(best, float(np.max(prev)) if S else 0.0)
    return ComassResult(min(best, full), False, full)
