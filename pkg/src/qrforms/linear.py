"""Singular-value analysis of linear maps between metric fibers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exterior import KCovector, Metric, compound_matrix


@dataclass(frozen=True, eq=False)
class FiberLinearMap:
    """Square matrix of a linear map T_xM -> T_yN in chosen coordinate bases.

    Orientation signs are +1 when the coordinate bases are positively
    oriented and -1 otherwise.
    """

    matrix: np.ndarray
    src_metric: Metric | None = None
    dst_metric: Metric | None = None
    src_orientation: int = 1
    dst_orientation: int = 1

    def __post_init__(self):
        M = np.array(self.matrix, dtype=float)
        if M.ndim != 2 or M.shape[0] != M.shape[1]:
            raise ValueError("FiberLinearMap needs a square matrix")
        if not np.all(np.isfinite(M)):
            raise ValueError("matrix has non-finite entries")
        n = M.shape[0]
        M.setflags(write=False)
        object.__setattr__(self, "matrix", M)
        for name in ("src_metric", "dst_metric"):
            g = getattr(self, name)
            if g is None:
                object.__setattr__(self, name, Metric.identity(n))
            elif g.dim != n:
                raise ValueError(f"{name} has dimension {g.dim}, map has {n}")
        for name in ("src_orientation", "dst_orientation"):
            if getattr(self, name) not in (1, -1):
                raise ValueError(f"{name} must be +1 or -1")

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def whitened(self) -> np.ndarray:
        """Matrix in orthonormal bases: G_dst^{1/2} M G_src^{-1/2}."""
        return self.dst_metric.sqrt() @ self.matrix @ self.src_metric.inv_sqrt()

    def compose(self, other: FiberLinearMap) -> FiberLinearMap:
        """``self`` after ``other``."""
        return FiberLinearMap(self.matrix @ other.matrix, other.src_metric, self.dst_metric,
                              other.src_orientation, self.dst_orientation)


@dataclass(frozen=True, eq=False)
class SvdSummary:
    """Singular-value data; fields are floats, or arrays for batched input."""

    singvals: np.ndarray
    opnorm: np.ndarray
    lmin: np.ndarray
    absdet: np.ndarray
    signed_jac: np.ndarray

    @property
    def dim(self) -> int:
        return np.shape(self.singvals)[-1]


def jacobi_singular_values(A: np.ndarray, max_sweeps: int = 60) -> np.ndarray:
    """Singular values by one-sided (Hestenes) Jacobi, sorted descending.

    ``A`` has shape ``(..., m, n)``; column pairs are rotated in lock-step
    across the batch until every pair is orthogonal to machine precision.
    """
    X = np.array(A, dtype=float, copy=True)
    n = X.shape[-1]
    eps = np.finfo(float).eps
    for _ in range(max_sweeps):
        rotated = False
        for p in range(n - 1):
            for q in range(p + 1, n):
                ap, aq = X[..., :, p], X[..., :, q]
                alpha = np.sum(ap * ap, axis=-1)
                beta = np.sum(aq * aq, axis=-1)
                gamma = np.sum(ap * aq, axis=-1)
                active = np.abs(gamma) > eps * np.sqrt(alpha * beta)
                if not np.any(active):
                    continue
                rotated = True
                safe = np.where(active, gamma, 1.0)
                zeta = (beta - alpha) / (2.0 * safe)
                sgn = np.where(zeta >= 0, 1.0, -1.0)
                t = np.where(active, sgn / (np.abs(zeta) + np.sqrt(1.0 + zeta * zeta)), 0.0)
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c[..., None] * ap - s[..., None] * aq
                new_q = s[..., None] * ap + c[..., None] * aq
                X[..., :, p] = new_p
                X[..., :, q] = new_q
        if not rotated:
            break
    sv = np.linalg.norm(X, axis=-2)
    return -np.sort(-sv, axis=-1)


def _sym_sqrt_batch(G: np.ndarray, inverse: bool = False) -> np.ndarray:
    w, V = np.linalg.eigh(G)
    if np.any(w <= 0):
        raise ValueError("metric field is not positive definite")
    d = 1.0 / np.sqrt(w) if inverse else np.sqrt(w)
    return (V * d[..., None, :]) @ np.swapaxes(V, -1, -2)


def svd_fields(matrices: np.ndarray, src_gram: np.ndarray | None = None,
               dst_gram: np.ndarray | None = None, orientation: int = 1) -> SvdSummary:
    """Batched singular-value summary for matrices of shape ``(..., n, n)``.

    Optional Gram fields broadcast against the batch; ``orientation`` is the
    product of the source and target orientation signs.
    """
    W = np.asarray(matrices, dtype=float)
    if src_gram is not None:
        W = W @ _sym_sqrt_batch(np.asarray(src_gram, dtype=float), inverse=True)
    if dst_gram is not None:
        W = _sym_sqrt_batch(np.asarray(dst_gram, dtype=float)) @ W
    sv = jacobi_singular_values(W)
    absdet = np.prod(sv, axis=-1)
    sign = np.sign(np.linalg.det(W)) * orientation
    return SvdSummary(sv, sv[..., 0], sv[..., -1], absdet, sign * absdet)


def svd_analysis(L: FiberLinearMap) -> SvdSummary:
    W = L.whitened()
    sv = jacobi_singular_values(W)
    absdet = float(np.prod(sv))
    sign = float(np.sign(np.linalg.det(W))) * L.src_orientation * L.dst_orientation
    return SvdSummary(sv, float(sv[0]), float(sv[-1]), absdet, sign * absdet)


@dataclass(frozen=True)
class JacobianResiduals:
    lower: float  # lmin^n - absdet, should be <= 0
    upper: float  # absdet - opnorm^n, should be <= 0
    scale: float
    ok: bool


def jacobian_inequalities(s: SvdSummary, rtol: float = 1e-12) -> JacobianResiduals:
    n = s.dim
    lo = float(s.lmin) ** n
    hi = float(s.opnorm) ** n
    d = float(s.absdet)
    scale = max(hi, np.finfo(float).tiny)
    lower, upper = lo - d, d - hi
    return JacobianResiduals(lower, upper, scale, bool(lower <= rtol * scale and upper <= rtol * scale))


@dataclass(frozen=True)
class Dilatation:
    K_outer: float
    K_inner: float
    undefined: bool


def dilatation(s: SvdSummary) -> Dilatation:
    """Outer and inner dilatation of a single summary."""
    n = s.dim
    J, top, low = float(s.signed_jac), float(s.opnorm), float(s.lmin)
    K_outer = top**n / J if J > 0 else np.inf
    if low > 0:
        return Dilatation(K_outer, J / low**n, False)
    if J > 0:
        return Dilatation(K_outer, np.inf, False)
    return Dilatation(K_outer, np.nan, True)


def dilatation_arrays(s: SvdSummary) -> tuple[np.ndarray, np.ndarray]:
    """Elementwise ``(K_outer, K_inner)`` for batched summaries; NaN marks undefined."""
    n = s.dim
    J = np.asarray(s.signed_jac, dtype=float)
    top = np.asarray(s.opnorm, dtype=float)
    low = np.asarray(s.lmin, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        K_outer = np.where(J > 0, top**n / np.where(J > 0, J, 1.0), np.inf)
        K_inner = np.where(low > 0, J / np.where(low > 0, low, 1.0) ** n,
                           np.where(J > 0, np.inf, np.nan))
    return K_outer, K_inner


def pullback_linear(alpha: KCovector, L: FiberLinearMap) -> KCovector:
    """(L^* alpha)(v_1 ^ ... ^ v_k) = alpha(L v_1 ^ ... ^ L v_k)."""
    if alpha.dim != L.dim:
        raise ValueError(f"covector dimension {alpha.dim} does not match map dimension {L.dim}")
    C = compound_matrix(L.matrix, alpha.grade)
    return KCovector(alpha.dim, alpha.grade, C.T @ alpha.coeffs)
