"""Catalogue of differentiable maps and the quasiregularity checks run on them.

Points are arrays of shape ``(n,) + S`` for any batch shape ``S``; a map
returns ``(m,) + S`` and its derivative ``(m, n) + S``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .exterior import compound_matrix
from .forms import (GridDomain, Region, SampledForm, TestFormFamily, coverage, integrate,
                    weak_derivative_residual)
from .linear import FiberLinearMap, svd_fields
from .rng import Xorshift64Star


@dataclass(frozen=True, eq=False)
class DifferentiableMap:
    """A map R^n -> R^m with an analytic derivative and a finite-difference fallback.

    ``preimages(y)`` (optional) returns every preimage of the points ``y``
    as an array ``(n, count) + S``; ``planar_factor`` marks products of a
    planar map with the identity on the remaining axes.
    """

    name: str
    src_dim: int
    dst_dim: int
    func: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-6
    is_proper: bool = False
    known_degree: int | None = None
    branch_locus: str | None = None
    preimages: Callable[[np.ndarray], np.ndarray] | None = None
    planar_factor: DifferentiableMap | None = None
    params: dict = field(default_factory=dict)

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[0] != self.src_dim:
            raise ValueError(f"{self.name} expects points of dimension {self.src_dim}")
        return np.asarray(self.func(x), dtype=float)

    def derivative(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.jac is None:
            return self.fd_derivative(x)
        if x.shape[0] != self.src_dim:
            raise ValueError(f"{self.name} expects points of dimension {self.src_dim}")
        return np.asarray(self.jac(x), dtype=float)

    def fd_derivative(self, x, step: float | None = None) -> np.ndarray:
        """Centered differences, one column per source axis."""
        x = np.asarray(x, dtype=float)
        h = self.fd_step if step is None else step
        cols = []
        for i in range(self.src_dim):
            e = np.zeros((self.src_dim,) + (1,) * (x.ndim - 1))
            e[i] = h
            cols.append((self(x + e) - self(x - e)) / (2 * h))
        return np.stack(cols, axis=1)

    def fiber_map(self, x) -> FiberLinearMap:
        return FiberLinearMap(self.derivative(np.asarray(x, dtype=float)))

    def check_derivative(self, points) -> DerivativeCheck:
        """Analytic derivative against centered differences at ``points`` (shape (n, P)).

        Tolerance is max(1e-6, 10 * truncation), with the truncation error
        estimated by Richardson comparison of steps h and 2h.
        """
        if self.jac is None:
            raise ValueError(f"{self.name} has no analytic derivative")
        pts = np.asarray(points, dtype=float)
        exact = self.derivative(pts)
        fd = self.fd_derivative(pts)
        fd2 = self.fd_derivative(pts, 2 * self.fd_step)
        err = float(np.max(np.abs(exact - fd)))
        trunc = float(np.max(np.abs(fd2 - fd))) / 3.0
        tol = max(1e-6, 10 * trunc)
        return DerivativeCheck(err, tol, err <= tol)


@dataclass(frozen=True)
class DerivativeCheck:
    max_error: float
    tolerance: float
    ok: bool


def compose(outer: DifferentiableMap, inner: DifferentiableMap, name: str | None = None) -> DifferentiableMap:
    """``outer`` after ``inner`` with the chain rule for the derivative."""
    if inner.dst_dim != outer.src_dim:
        raise ValueError("dimension mismatch in composition")

    def func(x):
        return outer(inner(x))

    def jac(x):
        return np.einsum("ij...,jk...->ik...", outer.derivative(inner(x)), inner.derivative(x))

    return DifferentiableMap(name or f"{outer.name}.{inner.name}", inner.src_dim, outer.dst_dim,
                             func, jac)


# --------------------------------------------------------------------------
# Catalogue


def _expand(mat: np.ndarray, batch: tuple[int, ...]) -> np.ndarray:
    return np.broadcast_to(mat.reshape(mat.shape + (1,) * len(batch)), mat.shape + batch).copy()


def identity_map(n: int = 2) -> DifferentiableMap:
    return DifferentiableMap(
        "identity", n, n, lambda x: x.copy(), lambda x: _expand(np.eye(n), x.shape[1:]),
        is_proper=True, known_degree=1, preimages=lambda y: np.asarray(y, dtype=float)[:, None],
        params={"n": n})


def linear_map(A) -> DifferentiableMap:
    A = np.array(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("linear map needs a matrix")
    m, n = A.shape
    square = m == n and abs(np.linalg.det(A)) > 0
    pre = None
    if square:
        Ainv = np.linalg.inv(A)
        pre = lambda y: np.tensordot(Ainv, np.asarray(y, dtype=float), axes=1)[:, None]  # noqa: E731
    deg = int(np.sign(np.linalg.det(A))) if square else None
    return DifferentiableMap(
        "linear", n, m, lambda x: np.tensordot(A, x, axes=1), lambda x: _expand(A, x.shape[1:]),
        is_proper=square, known_degree=deg, preimages=pre, params={"A": A.tolist()})


def _winding_value(x, k):
    r = np.hypot(x[0], x[1])
    t = np.arctan2(x[1], x[0])
    return np.array([r * np.cos(k * t), r * np.sin(k * t)])


def _winding_jac(x, k):
    t = np.arctan2(x[1], x[0])
    c1, s1 = np.cos(t), np.sin(t)
    ck, sk = np.cos(k * t), np.sin(k * t)
    # R(k t) diag(1, k) R(-t)
    J = np.array([[ck * c1 + k * sk * s1, ck * s1 - k * sk * c1],
                  [sk * c1 - k * ck * s1, sk * s1 + k * ck * c1]])
    if k > 1:
        J = np.where(np.hypot(x[0], x[1]) == 0, 0.0, J)
    return J


def _winding_preimages(y, k):
    y = np.asarray(y, dtype=float)
    r = np.hypot(y[0], y[1])
    phi = np.arctan2(y[1], y[0])
    angles = (phi[None] + 2 * np.pi * np.arange(k).reshape((k,) + (1,) * phi.ndim)) / k
    return np.array([r * np.cos(angles), r * np.sin(angles)])


def winding2d(k: int) -> DifferentiableMap:
    """(r, t) -> (r, k t) in polar coordinates; branched at the origin for k > 1."""
    k = _positive_int(k, "k")
    return DifferentiableMap(
        f"winding2d({k})", 2, 2, lambda x: _winding_value(x, k), lambda x: _winding_jac(x, k),
        is_proper=True, known_degree=k, branch_locus="origin" if k > 1 else None,
        preimages=lambda y: _winding_preimages(y, k), params={"k": k})


def winding3d(k: int) -> DifferentiableMap:
    """Planar winding in (x1, x2), identity in x3; branched along the x3 axis."""
    k = _positive_int(k, "k")
    planar = winding2d(k)

    def func(x):
        return np.concatenate([_winding_value(x[:2], k), x[2:3]])

    def jac(x):
        J = np.zeros((3, 3) + x.shape[1:])
        J[:2, :2] = _winding_jac(x[:2], k)
        J[2, 2] = 1.0
        return J

    def pre(y):
        y = np.asarray(y, dtype=float)
        p = _winding_preimages(y[:2], k)
        return np.concatenate([p, np.broadcast_to(y[2:3, None], (1,) + p.shape[1:])])

    return DifferentiableMap(f"winding3d({k})", 3, 3, func, jac, is_proper=True, known_degree=k,
                             branch_locus="x3 axis" if k > 1 else None, preimages=pre,
                             planar_factor=planar, params={"k": k})


def radial_stretch(a: float, n: int = 2) -> DifferentiableMap:
    """x -> |x|^(a-1) x; singular values (a r^(a-1), r^(a-1), ...)."""
    a = float(a)
    if not a > 0:
        raise ValueError("radial_stretch needs a > 0")

    def func(x):
        r = np.sqrt(np.sum(x**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, r ** (a - 1), 0.0 if a > 1 else 1.0)
        return s * x

    def jac(x):
        r = np.sqrt(np.sum(x**2, axis=0))
        safe = np.where(r > 0, r, 1.0)
        u = x / safe
        s = np.where(r > 0, safe ** (a - 1), 1.0 if a == 1 else 0.0)
        J = np.eye(n).reshape((n, n) + (1,) * r.ndim) + (a - 1) * u[:, None] * u[None, :]
        return s * J

    def pre(y):
        y = np.asarray(y, dtype=float)
        r = np.sqrt(np.sum(y**2, axis=0))
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(r > 0, r ** (1.0 / a - 1.0), 0.0)
        return (s * y)[:, None]

    return DifferentiableMap(f"radial_stretch({a:g})", n, n, func, jac, is_proper=True,
                             known_degree=1, branch_locus="origin" if a != 1 else None,
                             preimages=pre, params={"a": a, "n": n})


def _complex_param(v) -> complex:
    if isinstance(v, (list, tuple)):
        return complex(float(v[0]), float(v[1]))
    return complex(v)


def mobius2d(a=1.0, b=0.0, c=0.0, d=1.0) -> DifferentiableMap:
    """z -> (a z + b) / (c z + d) on the plane identified with C."""
    a, b, c, d = (_complex_param(v) for v in (a, b, c, d))
    det = a * d - b * c
    if det == 0:
        raise ValueError("mobius2d needs ad - bc != 0")

    def func(x):
        z = x[0] + 1j * x[1]
        w = (a * z + b) / (c * z + d)
        return np.array([w.real, w.imag])

    def jac(x):
        z = x[0] + 1j * x[1]
        fp = det / (c * z + d) ** 2
        return np.array([[fp.real, -fp.imag], [fp.imag, fp.real]])

    def pre(y):
        w = np.asarray(y[0], dtype=float) + 1j * np.asarray(y[1], dtype=float)
        z = (d * w - b) / (a - c * w)
        return np.array([z.real, z.imag])[:, None]

    params = {key: [v.real, v.imag] for key, v in zip("abcd", (a, b, c, d))}
    return DifferentiableMap("mobius2d", 2, 2, func, jac, known_degree=1, preimages=pre,
                             params=params)


def chart_conjugate(f: DifferentiableMap, phi, psi) -> DifferentiableMap:
    """psi o f o phi^{-1} for charts ``phi`` of the source and ``psi`` of the target."""
    g = compose(psi.forward_map(), compose(f, phi.inverse_map()))
    return DifferentiableMap(f"conj[{phi.name}|{f.name}|{psi.name}]", phi.dim, psi.dim, g.func, g.jac,
                             params={"f": f.name, "phi": phi.name, "psi": psi.name})


def _positive_int(v, name: str) -> int:
    if int(v) != v or int(v) < 1:
        raise ValueError(f"{name} must be an integer >= 1, got {v}")
    return int(v)


MAP_NAMES = ("identity", "linear", "winding2d", "winding3d", "radial_stretch", "mobius2d",
             "chart_conjugate")


def map_library(name: str, params: dict | None = None) -> DifferentiableMap:
    """Catalogue lookup by name with a parameter dictionary.

    ``chart_conjugate`` takes ``{"f": {name, params}, "phi": chart spec, "psi": chart spec}``
    where a chart spec is understood by :func:`qrforms.manifolds.chart_from_spec`.
    """
    params = dict(params or {})
    if name == "identity":
        return identity_map(int(params.get("n", 2)))
    if name == "linear":
        if "A" not in params:
            raise ValueError("linear map needs parameter A")
        return linear_map(params["A"])
    if name == "winding2d":
        return winding2d(params.get("k", 2))
    if name == "winding3d":
        return winding3d(params.get("k", 2))
    if name == "radial_stretch":
        return radial_stretch(params.get("a", 2.0), int(params.get("n", 2)))
    if name == "mobius2d":
        return mobius2d(*(params.get(key, default) for key, default in
                          zip("abcd", (1.0, 0.0, 0.0, 1.0))))
    if name == "chart_conjugate":
        from .manifolds import chart_from_spec

        f = params["f"]
        if isinstance(f, dict):
            f = map_library(f["name"], f.get("params"))
        phi, psi = params["phi"], params["psi"]
        phi = chart_from_spec(phi) if isinstance(phi, dict) else phi
        psi = chart_from_spec(psi) if isinstance(psi, dict) else psi
        return chart_conjugate(f, phi, psi)
    raise ValueError(f"unknown map {name!r}; expected one of {', '.join(MAP_NAMES)}")


# --------------------------------------------------------------------------
# Dilatation fields


@dataclass(frozen=True)
class QRVerdict:
    K_hat: float
    sobolev_proxy: float
    orientation_ok: float
    passed: bool
    K_tested: float
    inequality_violations: dict
    excluded_nodes: int


@dataclass(frozen=True, eq=False)
class DilatationField:
    K_outer: np.ndarray  # NaN at excluded nodes
    K_inner: np.ndarray
    jacobian: np.ndarray
    opnorm: np.ndarray
    lmin: np.ndarray
    valid: np.ndarray
    j_tol: float
    verdict: QRVerdict


def _derivative_field(f: DifferentiableMap, domain: GridDomain) -> np.ndarray:
    D = f.derivative(domain.coords())
    return np.moveaxis(D, (0, 1), (-2, -1))


def dilatation_field(f: DifferentiableMap, domain: GridDomain, region: Region | None = None,
                     K: float | None = None, rtol: float = 1e-10) -> DilatationField:
    """Pointwise dilatation of ``f`` over the grid nodes in ``region``.

    Nodes with |J_f| below j_tol = 1e-10 * max |Df|^n are treated as
    branch-degenerate and left out of K_hat. The verdict passes at ``K``
    (default: K_hat) when every node is sense-preserving, the L^n proxy of
    |Df| is finite and K_hat <= K; the four pointwise inequalities
    K^-1 |Df|^n <= J <= |Df|^n and l^n <= J <= K^(n-1) l^n are checked with K.
    """
    if f.src_dim != f.dst_dim:
        raise ValueError("dilatation needs an equidimensional map")
    n = f.src_dim
    cov = coverage(domain, region) if region is not None else np.ones(domain.shape)
    inside = cov > 0
    s = svd_fields(_derivative_field(f, domain))
    J, top, low = s.signed_jac, s.opnorm, s.lmin
    scale = float(np.max(top[inside] ** n)) if np.any(inside) else 0.0
    j_tol = 1e-10 * scale
    valid = inside & (np.abs(J) >= j_tol) & (scale > 0)
    if not np.any(valid):
        raise ValueError(f"{f.name}: all sampled nodes are branch-degenerate")
    with np.errstate(divide="ignore", invalid="ignore"):
        K_out = np.where(valid, np.where(J > 0, top**n / np.where(J > 0, J, 1.0), np.inf), np.nan)
        K_in = np.where(valid & (low > 0), J / np.where(low > 0, low, 1.0) ** n, np.nan)
    K_hat = float(np.nanmax(K_out))
    orientation_ok = float(np.mean(J[inside] >= -j_tol))
    sobolev = integrate(domain, top**n, cov) ** (1.0 / n)
    K_test = K_hat if K is None else float(K)

    violations = {}
    if np.isfinite(K_test):
        Jv, tv, lv = J[valid], top[valid] ** n, low[valid] ** n
        sc = np.maximum(tv, np.finfo(float).tiny)
        checks = {
            "outer_lower": (tv / K_test - Jv) / sc,
            "outer_upper": (Jv - tv) / sc,
            "inner_lower": (lv - Jv) / sc,
            "inner_upper": (Jv - K_test ** (n - 1) * lv) / sc,
        }
        violations = {key: float(max(v.max(), 0.0)) for key, v in checks.items()}
    inequalities_ok = bool(violations) and all(v <= rtol for v in violations.values())
    passed = (orientation_ok == 1.0 and np.isfinite(sobolev) and np.isfinite(K_hat)
              and K_hat <= K_test * (1 + rtol) and inequalities_ok)
    verdict = QRVerdict(K_hat, float(sobolev), orientation_ok, bool(passed), K_test, violations,
                        int(np.sum(inside & ~valid)))
    return DilatationField(K_out, K_in, J, top, low, valid, j_tol, verdict)


@dataclass(frozen=True)
class ChartVerdict:
    passed: bool
    K_conjugate: float
    K_prime: float
    K_map: float | None
    L_phi: float
    L_psi: float
    predicted_bound: float | None
    consistent: bool


def chart_definition_verdict(f: DifferentiableMap, phi, psi, K_prime: float,
                             samples: int = 65, K_map: float | None = None) -> ChartVerdict:
    """Test psi o f o phi^{-1} on phi's chart domain for K'-quasiregularity.

    The chart constants are measured with
    :func:`qrforms.manifolds.bilipschitz_constant_estimate`. When the
    dilatation K of ``f`` itself is known (or measurable, for Euclidean
    ``f``), the conjugate must also satisfy K_conj <= K (L_phi L_psi)^(2n).
    """
    from .manifolds import bilipschitz_constant_estimate

    grid = phi.grid(samples)
    inside = phi.contains_coords(grid.coords())
    pts = phi.inverse(grid.coords()[:, inside])
    image = f(pts)
    if not np.all(psi.contains_point(image)):
        raise ValueError("f(U) is not contained in the target chart domain")
    g = chart_conjugate(f, phi, psi)
    field = dilatation_field(g, grid, phi.contains_coords, K=K_prime)
    n = phi.dim
    if K_map is None and f.src_dim == f.dst_dim == n:
        K_map = dilatation_field(f, grid_on_points_domain(pts), None).verdict.K_hat
    L_phi = bilipschitz_constant_estimate(phi)
    L_psi = bilipschitz_constant_estimate(psi)
    bound = None if K_map is None else K_map * (L_phi * L_psi) ** (2 * n)
    consistent = bound is None or field.verdict.K_hat <= bound * (1 + 1e-9)
    return ChartVerdict(field.verdict.passed, field.verdict.K_hat, float(K_prime), K_map,
                        L_phi, L_psi, bound, consistent)


def grid_on_points_domain(pts: np.ndarray, samples: int = 33) -> GridDomain:
    """Bounding-box grid of a point cloud (used to sample a Euclidean map's own dilatation)."""
    lo = pts.min(axis=1)
    hi = pts.max(axis=1)
    pad = np.maximum(hi - lo, 1e-9) * 1e-6
    return GridDomain(tuple(lo), tuple(hi + pad), (samples,) * pts.shape[0])


# --------------------------------------------------------------------------
# Pull-backs


def _sample_at(omega, points: np.ndarray) -> np.ndarray:
    """Coefficients of ``omega`` at ``points`` (shape (n,) + S) as (C,) + S."""
    if callable(omega) and not isinstance(omega, SampledForm):
        return np.asarray(omega(points), dtype=float)
    d = omega.domain
    if not np.all(d.contains(points, pad=1e-12 * max(d.spacing))):
        raise ValueError("image of the source grid leaves the target grid box")
    interp = RegularGridInterpolator(d.axes(), np.moveaxis(omega.values, 0, -1), method="linear",
                                     bounds_error=False, fill_value=None)
    flat = points.reshape(points.shape[0], -1).T
    vals = interp(flat)
    return np.moveaxis(vals, -1, 0).reshape((omega.values.shape[0],) + points.shape[1:])


def pullback_form(f: DifferentiableMap, omega, domain: GridDomain, grade: int | None = None,
                  mask: np.ndarray | None = None) -> SampledForm:
    """f^* omega on ``domain``; omega is a SampledForm on the target grid or a callable.

    Sampled forms are read at f(x) by multilinear interpolation per
    coefficient. The pull-back of the coefficients is C_k(Df)^T. Nodes
    outside the optional boolean ``mask`` are left at zero.
    """
    if f.src_dim != domain.dim:
        raise ValueError("map source dimension does not match the grid")
    k = omega.grade if isinstance(omega, SampledForm) else grade
    if k is None:
        raise ValueError("grade is required for callable forms")
    sel = np.ones(domain.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    x = domain.coords()[:, sel]
    vals = _sample_at(omega, f(x))
    out = np.zeros((comb(f.src_dim, k),) + domain.shape)
    if k == 0:
        out[:, sel] = vals
    else:
        D = np.moveaxis(f.derivative(x), (0, 1), (-2, -1))
        C = compound_matrix(D, k)  # (P, C, C)
        out[:, sel] = np.einsum("...ji,j...->i...", C, vals)
    return SampledForm(domain, k, out)


def volume_pullback_residual(f: DifferentiableMap, domain: GridDomain) -> float:
    """max |f^* vol - J_f vol| over the grid, J_f from the singular-value route."""
    n = f.src_dim
    vol = pullback_form(f, lambda y: np.ones((1,) + y.shape[1:]), domain, n)
    J = svd_fields(_derivative_field(f, domain)).signed_jac
    return float(np.max(np.abs(vol.values[0] - J)))


def pointwise_pullback_bounds(f: DifferentiableMap, omega, domain: GridDomain,
                              grade: int | None = None) -> float:
    """Largest violation of C^-1/2 l^k |w| <= |f^* w| <= C^1/2 |Df|^k |w| over the grid."""
    pb = pullback_form(f, omega, domain, grade)
    k, n = pb.grade, f.src_dim
    w = np.sqrt(np.sum(_sample_at(omega, f(domain.coords())) ** 2, axis=0))
    s = svd_fields(_derivative_field(f, domain))
    c = comb(n, k) ** 0.5
    mid = pb.norm_field()
    lower = s.lmin**k * w / c - mid
    upper = mid - c * s.opnorm**k * w
    scale = np.maximum(c * s.opnorm**k * w, np.finfo(float).tiny)
    return float(max(np.max(lower / scale), np.max(upper / scale), 0.0))


@dataclass(frozen=True)
class LpBandCheck:
    exponent: float
    pullback_integral: float
    weighted_integral: float
    ratio: float
    lower_constant: float
    upper_constant: float
    K: float
    ok: bool
    proper: dict | None = None


def pullback_lp_check(f: DifferentiableMap, omega: SampledForm, src: GridDomain,
                      region: Region | None, K: float | None = None,
                      slack: float = 0.02) -> LpBandCheck:
    """Two-sided conformal-exponent estimate for f^* omega over E = ``region``.

    C^(-n/2k) K^-(n+1) int N |w|^(n/k) <= int_E |f^* w|^(n/k) <= C^(n/2k) K int N |w|^(n/k)
    with C = C(n, k) and N = N(f, ., E). For k = 0 the sup norms over E and
    f(E) are compared instead. When ``f`` is tagged proper with a known
    degree, the global form of the estimate is also evaluated.
    """
    from .degree import multiplicity_field

    n, k = f.src_dim, omega.grade
    dst = omega.domain
    if K is None:
        K = dilatation_field(f, src, region).verdict.K_hat
    N = multiplicity_field(f, dst, region, src)
    cov = coverage(src, region)
    pb = pullback_form(f, omega, src, mask=cov > 0)
    if k == 0:
        sup_pb = float(np.max(np.where(cov > 0, np.abs(pb.values[0]), 0.0)))
        sup_w = float(np.max(np.where(N > 0, np.abs(omega.values[0]), 0.0)))
        rel = abs(sup_pb - sup_w) / max(sup_w, np.finfo(float).tiny)
        return LpBandCheck(np.inf, sup_pb, sup_w, sup_pb / max(sup_w, np.finfo(float).tiny),
                           1.0, 1.0, float(K), rel <= slack)
    p = n / k
    C = comb(n, k)
    mid = integrate(src, pb.norm_field() ** p, cov)
    weighted = integrate(dst, N * omega.norm_field() ** p)
    lo = C ** (-p / 2) * K ** (-(n + 1))
    hi = C ** (p / 2) * K
    ratio = mid / weighted if weighted > 0 else np.inf
    ok = lo * weighted <= mid * (1 + slack) and mid <= hi * weighted * (1 + slack)
    proper = None
    if f.is_proper and f.known_degree:
        deg = f.known_degree
        norm_pb = mid ** (1 / p)
        norm_w = integrate(dst, (N / deg) * omega.norm_field() ** p) ** (1 / p)
        plo = deg ** (k / n) / (C**0.5 * K ** (k * (n - 1) / n)) * norm_w
        phi = C**0.5 * K ** (k / n) * deg ** (k / n) * norm_w
        proper = {"degree": deg, "norm_pullback": norm_pb, "norm_form": norm_w,
                  "lower": plo, "upper": phi,
                  "ok": bool(plo <= norm_pb * (1 + slack) and norm_pb <= phi * (1 + slack))}
        ok = ok and proper["ok"]
    return LpBandCheck(p, mid, weighted, ratio, lo, hi, float(K), bool(ok), proper)


@dataclass(frozen=True)
class ChangeOfVariables:
    lhs: float  # int_E (g o f) J_f
    rhs: float  # int N(f, ., E) g
    jacobian_integral: float
    residual: float


def change_of_variables_check(f: DifferentiableMap, g: Callable, src: GridDomain,
                              region: Region | None, dst: GridDomain) -> ChangeOfVariables:
    """Both sides of int_E (g o f) J_f = int N(f, y, E) g(y) dy by quadrature.

    The residual is relative to max(|rhs|, int N |g|) so that signed
    integrands cancelling to zero are still measured on a meaningful scale.
    """
    from .degree import multiplicity_field

    cov = coverage(src, region)
    J = svd_fields(_derivative_field(f, src)).signed_jac
    x = src.coords()
    gf = np.asarray(g(f(x)), dtype=float)
    lhs = integrate(src, gf * J, cov)
    jint = integrate(src, J, cov)
    N = multiplicity_field(f, dst, region, src)
    gy = np.asarray(g(dst.coords()), dtype=float)
    rhs = integrate(dst, N * gy)
    scale = max(abs(rhs), integrate(dst, N * np.abs(gy)), np.finfo(float).tiny)
    return ChangeOfVariables(lhs, rhs, jint, abs(lhs - rhs) / scale)


def pullback_commutation_residual(f: DifferentiableMap, omega, d_omega, src: GridDomain,
                                  tests: TestFormFamily, grade: int | None = None) -> float:
    """Weak residual of (f^* w, f^* dw) against the test family on the source grid."""
    pw = pullback_form(f, omega, src, grade)
    pdw = pullback_form(f, d_omega, src, pw.grade + 1)
    return weak_derivative_residual(pw, pdw, tests)


# --------------------------------------------------------------------------
# Sobolev composition constants


def measured_bilipschitz(h: DifferentiableMap, domain: GridDomain, region: Region | None = None) -> float:
    """max over nodes of max(|Dh|, 1 / l(Dh)); embedded maps use the induced metric."""
    D = _derivative_field(h, domain)
    if h.dst_dim == h.src_dim:
        s = svd_fields(D)
        top, low = s.opnorm, s.lmin
    else:
        ev = np.linalg.eigvalsh(np.swapaxes(D, -1, -2) @ D)
        top, low = np.sqrt(ev[..., -1]), np.sqrt(np.maximum(ev[..., 0], 0.0))
    mask = coverage(domain, region) > 0 if region is not None else np.ones(domain.shape, bool)
    with np.errstate(divide="ignore"):
        L = np.maximum(top, 1.0 / low)
    return float(np.max(L[mask]))


@dataclass(frozen=True)
class CompositionCheck:
    norm_composed: float
    norm_original: float
    ratio: float
    L: float
    bound: float
    ok: bool


def sobolev_norm(domain: GridDomain, values: np.ndarray, grad_sq: np.ndarray, p: float,
                 weights: np.ndarray | None = None) -> float:
    """(int |u|^p + |grad u|^p)^(1/p); ``weights`` carries a volume density."""
    w = np.ones(domain.shape) if weights is None else weights
    return integrate(domain, w * (np.abs(values) ** p + grad_sq ** (p / 2))) ** (1.0 / p)


def composition_constant_check(u: Callable, grad_u: Callable, h: DifferentiableMap,
                               src: GridDomain, p: float, dst: GridDomain | None = None,
                               L: float | None = None, slack: float = 0.05) -> CompositionCheck:
    """Check ||u o h||_{1,p} <= L^(1 + n/p) ||u||_{1,p} for a bilipschitz ``h``.

    ``u`` and its gradient are callables on target points. For Euclidean
    ``h`` the norm of ``u`` is computed on the target grid ``dst``; for a
    parametrization of an embedded surface it is computed on ``src`` with
    the induced metric G = Dh^T Dh, where |grad u|_G^2 = d^T G^-1 d for the
    coordinate differential d = Dh^T grad u.
    """
    n = h.src_dim
    x = src.coords()
    y = h(x)
    D = _derivative_field(h, src)  # (*S, m, n)
    grad = np.moveaxis(np.asarray(grad_u(y), dtype=float), 0, -1)  # (*S, m)
    d = np.einsum("...mi,...m->...i", D, grad)
    uc = np.asarray(u(y), dtype=float)
    composed = sobolev_norm(src, uc, np.sum(d**2, axis=-1), p)
    if L is None:
        L = measured_bilipschitz(h, src)
    if h.dst_dim == n:
        if dst is None:
            raise ValueError("Euclidean composition needs the target grid")
        yy = dst.coords()
        g2 = np.sum(np.asarray(grad_u(yy), dtype=float) ** 2, axis=0)
        original = sobolev_norm(dst, np.asarray(u(yy), dtype=float), g2, p)
    else:
        G = np.swapaxes(D, -1, -2) @ D
        Ginv_d = np.linalg.solve(G, d[..., None])[..., 0]
        density = np.sqrt(np.linalg.det(G))
        original = sobolev_norm(src, uc, np.sum(d * Ginv_d, axis=-1), p, density)
    bound = L ** (1 + n / p)
    ratio = composed / original
    return CompositionCheck(composed, original, ratio, float(L), bound, bool(ratio <= bound * (1 + slack)))


# --------------------------------------------------------------------------
# Colocal and Lusin surrogates


def colocal_check(f: DifferentiableMap, functionals, points: np.ndarray) -> float:
    """max |D(u o f)(x) - Du(f(x)) Df(x)| over test functionals u and sample points.

    Each functional is a pair ``(u, grad_u)`` of callables on target points;
    D(u o f) is taken by centered differences of the composition.
    """
    pts = np.asarray(points, dtype=float)
    Df = f.derivative(pts)
    worst = 0.0
    for u, grad_u in functionals:
        comp = DifferentiableMap("u.f", f.src_dim, 1, lambda x, u=u: np.asarray(u(f(x)))[None],
                                 fd_step=f.fd_step)
        fd = comp.fd_derivative(pts)[0]
        chain = np.einsum("m...,mi...->i...", np.asarray(grad_u(f(pts)), dtype=float), Df)
        worst = max(worst, float(np.max(np.abs(fd - chain))))
    return worst


def bump_functionals(centers, radius: float):
    """Compactly supported smooth functions exp(-1/(1-|y-c|^2/r^2)) with gradients."""
    out = []
    for c in centers:
        c = np.asarray(c, dtype=float)

        def u(y, c=c):
            t2 = np.sum((y - c.reshape((-1,) + (1,) * (y.ndim - 1))) ** 2, axis=0) / radius**2
            with np.errstate(divide="ignore", over="ignore"):
                return np.where(t2 < 1, np.exp(-1.0 / np.maximum(1 - t2, 1e-300)), 0.0)

        def grad(y, c=c):
            dy = y - c.reshape((-1,) + (1,) * (y.ndim - 1))
            t2 = np.sum(dy**2, axis=0) / radius**2
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                one = np.maximum(1 - t2, 1e-300)
                val = np.where(t2 < 1, np.exp(-1.0 / one) * -2.0 / one**2 / radius**2, 0.0)
            return val * dy

        out.append((u, grad))
    return out


@dataclass(frozen=True)
class LusinRecord:
    measures: list
    image_measures: list
    ratios: list
    monotone: bool
    sup_jacobian: float
    ok: bool


def lusin_surrogate(f: DifferentiableMap, src: GridDomain, dst: GridDomain,
                    fractions=(0.01, 0.05, 0.2), seed: int = 5, subsamples: int = 4) -> LusinRecord:
    """Image measure of nested random cell sets under ``f``, rasterized on ``dst``.

    Only monotonicity is asserted: for nested sets S1 < S2 < S3 the
    image measures must be nondecreasing. The ratios |f(S)| / |S| are
    reported next to sup |J_f| for inspection.
    """
    rng = Xorshift64Star(seed, lanes=16)
    cells = [s - 1 for s in src.shape]
    total = int(np.prod(cells))
    order = np.argsort(rng.uniform(total), kind="stable")
    h = np.array(src.spacing)
    off = (np.arange(subsamples) + 0.5) / subsamples
    grids = np.meshgrid(*([off] * src.dim), indexing="ij")
    local = np.array([g.ravel() for g in grids])  # (n, s^n)
    J = svd_fields(_derivative_field(f, src)).absdet
    supJ = float(J.max())
    dst_h = np.array(dst.spacing)
    dst_cells = np.array([s - 1 for s in dst.shape])
    cell_area = float(np.prod(src.spacing))
    measures, images = [], []
    for frac in sorted(fractions):
        chosen = order[: max(1, int(frac * total))]
        idx = np.array(np.unravel_index(chosen, cells))
        lower = np.array(src.lower)[:, None] + idx * h[:, None]
        pts = (lower[:, :, None] + local[:, None, :] * h[:, None, None]).reshape(src.dim, -1)
        fy = f(pts)
        cid = np.floor((fy - np.array(dst.lower)[:, None]) / dst_h[:, None]).astype(np.int64)
        keep = np.all((cid >= 0) & (cid < dst_cells[:, None]), axis=0)
        flat = np.ravel_multi_index(cid[:, keep], tuple(dst_cells))
        measures.append(len(chosen) * cell_area)
        images.append(len(np.unique(flat)) * float(np.prod(dst.spacing)))
    ratios = [b / a for a, b in zip(measures, images)]
    monotone = all(b >= a for a, b in zip(images, images[1:]))
    # informational: rasterization inflates small images by up to one target cell per sample
    return LusinRecord(measures, images, ratios, monotone, supJ, bool(monotone))
