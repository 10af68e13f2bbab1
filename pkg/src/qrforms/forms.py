"""Differential forms sampled on regular grids over open boxes in R^n.

Coefficient arrays put the multi-index on axis 0 and the grid on the
remaining axes (``values.shape == (C(n, k),) + domain.shape``). Coordinate
arrays follow the same convention: ``x[i]`` is the i-th coordinate of every
node, with ``indexing="ij"``.

Quadrature is the composite trapezoid rule per axis. Regions are predicates
on coordinate arrays; :func:`coverage` turns one into fractional node
weights by supersampling each node's dual cell.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from math import comb
from typing import Callable, Sequence

import numpy as np
from scipy.signal import fftconvolve

from .exterior import index_lookup, multi_indices, wedge_coeffs
from .rng import Xorshift64Star

Region = Callable[[np.ndarray], np.ndarray]


class QuadratureWarning(UserWarning):
    pass


@dataclass(frozen=True)
class GridDomain:
    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        sh = tuple(int(v) for v in self.shape)
        if not (len(lo) == len(hi) == len(sh)) or not sh:
            raise ValueError("lower, upper and shape must have one entry per axis")
        if any(u <= l for l, u in zip(lo, hi)):
            raise ValueError("upper corner must exceed lower corner on every axis")
        if any(s < 3 for s in sh):
            raise ValueError("need at least 3 samples per axis")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "shape", sh)

    @classmethod
    def cube(cls, dim: int, lower: float, upper: float, samples: int) -> GridDomain:
        return cls((lower,) * dim, (upper,) * dim, (samples,) * dim)

    @property
    def dim(self) -> int:
        return len(self.shape)

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple((u - l) / (s - 1) for l, u, s in zip(self.lower, self.upper, self.shape))

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> list[np.ndarray]:
        return [np.linspace(l, u, s) for l, u, s in zip(self.lower, self.upper, self.shape)]

    def coords(self) -> np.ndarray:
        """Node coordinates, shape ``(n,) + shape``."""
        return np.array(np.meshgrid(*self.axes(), indexing="ij"))

    def trapezoid_weights(self) -> np.ndarray:
        w = None
        for h, s in zip(self.spacing, self.shape):
            axis = np.full(s, h)
            axis[0] = axis[-1] = h / 2
            w = axis if w is None else np.multiply.outer(w, axis)
        return w

    def contains(self, x: np.ndarray, pad: float = 0.0) -> np.ndarray:
        x = np.asarray(x)
        inside = np.ones(x.shape[1:], dtype=bool)
        for i in range(self.dim):
            inside &= (x[i] >= self.lower[i] - pad) & (x[i] <= self.upper[i] + pad)
        return inside

    def interior(self, margin: int) -> GridDomain:
        """Sub-grid dropping ``margin`` nodes on every side."""
        h = self.spacing
        return GridDomain(tuple(l + margin * d for l, d in zip(self.lower, h)),
                          tuple(u - margin * d for u, d in zip(self.upper, h)),
                          tuple(s - 2 * margin for s in self.shape))

    def boundary_mask(self, width: int = 1) -> np.ndarray:
        m = np.zeros(self.shape, dtype=bool)
        for ax in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[ax] = slice(0, width)
            m[tuple(idx)] = True
            idx[ax] = slice(-width, None)
            m[tuple(idx)] = True
        return m


def cell_average(domain: GridDomain, func: Callable[[np.ndarray], np.ndarray],
                 subsamples: int = 8) -> np.ndarray:
    """Average of ``func`` over each node's dual cell, clipped to the box.

    The cell is sampled at ``subsamples`` midpoints per axis; samples that
    fall outside the box are dropped.
    """
    h = np.array(domain.spacing)
    offsets = (np.arange(subsamples) + 0.5) / subsamples - 0.5
    x = domain.coords()
    total = np.zeros(domain.shape)
    count = np.zeros(domain.shape)
    grids = np.meshgrid(*([offsets] * domain.dim), indexing="ij")
    for shift in zip(*(g.ravel() for g in grids)):
        p = x + (np.array(shift) * h).reshape((-1,) + (1,) * domain.dim)
        inside = domain.contains(p)
        total += np.where(inside, np.asarray(func(p), dtype=float), 0.0)
        count += inside
    return total / np.maximum(count, 1)


def coverage(domain: GridDomain, region: Region | None, subsamples: int = 8) -> np.ndarray:
    """Fraction of each node's dual cell (clipped to the box) inside ``region``.

    Multiplying by the trapezoid weights gives a quadrature for the region
    whose boundary error shrinks with ``subsamples``.
    """
    if region is None:
        return np.ones(domain.shape)
    return cell_average(domain, lambda p: np.asarray(region(p), dtype=bool), subsamples)


def integrate(domain: GridDomain, values: np.ndarray, mask=None) -> float:
    """Trapezoid integral of a scalar field; ``mask`` may be boolean or fractional."""
    w = domain.trapezoid_weights()
    if mask is not None:
        mask = np.asarray(mask, dtype=float)
        if not np.any(mask):
            warnings.warn("empty integration mask", QuadratureWarning, stacklevel=2)
            return 0.0
        w = w * mask
    return float(np.sum(w * values))


# --------------------------------------------------------------------------
# Sampled forms


@dataclass(frozen=True, eq=False)
class SampledForm:
    domain: GridDomain
    grade: int
    values: np.ndarray

    def __post_init__(self):
        n, k = self.domain.dim, int(self.grade)
        if not 0 <= k <= n:
            raise ValueError(f"grade {k} outside [0, {n}]")
        v = np.asarray(self.values, dtype=float)
        expected = (comb(n, k),) + self.domain.shape
        if v.shape != expected:
            raise ValueError(f"values have shape {v.shape}, expected {expected}")
        if not np.all(np.isfinite(v)):
            raise ValueError("sampled coefficients must be finite")
        object.__setattr__(self, "grade", k)
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, domain: GridDomain, grade: int, func: Callable) -> SampledForm:
        """Sample ``func(x) -> (C(n, k), ...)`` at the grid nodes."""
        x = domain.coords()
        vals = np.asarray(func(x), dtype=float)
        vals = np.broadcast_to(vals, (comb(domain.dim, grade),) + domain.shape).copy()
        return cls(domain, grade, vals)

    @classmethod
    def constant(cls, domain: GridDomain, grade: int, coeffs) -> SampledForm:
        c = np.asarray(coeffs, dtype=float).reshape((-1,) + (1,) * domain.dim)
        return cls(domain, grade, np.broadcast_to(c, (c.shape[0],) + domain.shape).copy())

    @property
    def dim(self) -> int:
        return self.domain.dim

    def norm_field(self) -> np.ndarray:
        """Pointwise Grassmann norm (the basis eps_I is orthonormal)."""
        return np.sqrt(np.sum(self.values**2, axis=0))

    def restrict(self, margin: int) -> SampledForm:
        sl = (slice(None),) + (slice(margin, -margin),) * self.dim if margin else (slice(None),)
        return SampledForm(self.domain.interior(margin), self.grade, self.values[sl])

    def _like(self, other: SampledForm):
        if other.domain != self.domain:
            raise ValueError("forms live on different grids")
        if other.grade != self.grade:
            raise ValueError("grade mismatch")

    def __add__(self, other):
        self._like(other)
        return SampledForm(self.domain, self.grade, self.values + other.values)

    def __sub__(self, other):
        self._like(other)
        return SampledForm(self.domain, self.grade, self.values - other.values)

    def __mul__(self, c):
        """Scalar or scalar-field multiple."""
        return SampledForm(self.domain, self.grade, self.values * np.asarray(c, dtype=float))

    __rmul__ = __mul__

    def __neg__(self):
        return SampledForm(self.domain, self.grade, -self.values)


def exterior_derivative_from_partials(partials: np.ndarray, n: int, k: int) -> np.ndarray:
    """Coefficients of d(eta) from ``partials[i, c] = d/dx_i eta_c``.

    (d eta)_I = sum_j (-1)^j d_{I_j} eta_{I minus I_j}, with j counted from 0.
    """
    lookup = index_lookup(n, k)
    out = np.zeros((comb(n, k + 1),) + partials.shape[2:])
    for a, I in enumerate(multi_indices(n, k + 1)):
        for j, axis in enumerate(I):
            rest = I[:j] + I[j + 1:]
            term = partials[axis, lookup[rest]]
            out[a] += term if j % 2 == 0 else -term
    return out


def exterior_derivative_fd(omega: SampledForm) -> SampledForm:
    """Finite-difference exterior derivative.

    Centered differences in the interior, second-order one-sided at the
    boundary; exact when each coefficient is quadratic in the
    differentiated variable.
    """
    n, k = omega.dim, omega.grade
    if k >= n:
        raise ValueError("exterior derivative of a top-degree form")
    h = omega.domain.spacing
    partials = np.array([np.gradient(omega.values, h[i], axis=1 + i, edge_order=2)
                         for i in range(n)])
    return SampledForm(omega.domain, k + 1, exterior_derivative_from_partials(partials, n, k))


def integrate_top_form(omega: SampledForm, mask=None) -> float:
    if omega.grade != omega.dim:
        raise ValueError(f"integrate_top_form needs grade {omega.dim}, got {omega.grade}")
    return integrate(omega.domain, omega.values[0], mask)


def lp_norm(omega: SampledForm, p: float, mask=None) -> float:
    if not p >= 1:
        raise ValueError("p must be >= 1")
    mag = omega.norm_field()
    if np.isinf(p):
        if mask is not None:
            mag = np.where(np.asarray(mask, dtype=float) > 0, mag, 0.0)
        return float(mag.max())
    return integrate(omega.domain, mag**p, mask) ** (1.0 / p)


def wedge_sampled(omega: SampledForm, other: SampledForm) -> SampledForm:
    if omega.domain != other.domain:
        raise ValueError("forms live on different grids")
    n = omega.dim
    if omega.grade + other.grade > n:
        raise ValueError(f"grade overflow: {omega.grade} + {other.grade} > {n}")
    vals = wedge_coeffs(omega.values, other.values, n, omega.grade, other.grade)
    return SampledForm(omega.domain, omega.grade + other.grade, vals)


def wedge_norm_bound(omega: SampledForm, other: SampledForm) -> tuple[float, float]:
    """Largest nodewise ratio |w ^ w'| / (|w| |w'|) and the admissible constant.

    The constant is C(k + k', k) * C(n, k + k')^{1/2}: the shuffle count
    bounds the comass of the wedge, and the Grassmann norm is at most
    C(n, k + k')^{1/2} times the comass.
    """
    n, k, kk = omega.dim, omega.grade, other.grade
    w = wedge_sampled(omega, other).norm_field()
    denom = omega.norm_field() * other.norm_field()
    ok = denom > 0
    ratio = float(np.max(w[ok] / denom[ok])) if np.any(ok) else 0.0
    return ratio, comb(k + kk, k) * comb(n, k + kk) ** 0.5


# --------------------------------------------------------------------------
# Mollifiers and test forms


def bump(t: np.ndarray) -> np.ndarray:
    """exp(-1 / (1 - t^2)) on |t| < 1, zero elsewhere."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def bump_derivative_factor(t: np.ndarray) -> np.ndarray:
    """b'(t) / (t b(t)) = -2 / (1 - t^2)^2 inside the support, zero outside."""
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1
    out[inside] = -2.0 / (1.0 - t[inside] ** 2) ** 2
    return out


@dataclass(frozen=True)
class Mollifier:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("mollifier radius must be positive")

    def kernel(self, spacing: Sequence[float]) -> np.ndarray:
        """Stencil weights summing to one (unit mass under grid quadrature)."""
        half = [int(np.ceil(self.radius / h)) for h in spacing]
        axes = [np.arange(-m, m + 1) * h for m, h in zip(half, spacing)]
        X = np.meshgrid(*axes, indexing="ij")
        r = np.sqrt(sum(x**2 for x in X)) / self.radius
        K = bump(r)
        total = K.sum()
        if total <= 0:
            raise ValueError("mollifier is not resolved by the grid")
        return K / total

    def margin(self, spacing: Sequence[float]) -> int:
        return max(int(np.ceil(self.radius / h)) for h in spacing)


def convolve_form(omega: SampledForm, sigma: Mollifier) -> SampledForm:
    """Coefficient-wise convolution, returned on the sub-grid the stencil fits in."""
    h = omega.domain.spacing
    if sigma.radius < 2 * max(h):
        raise ValueError(f"mollifier radius {sigma.radius} below 2h = {2 * max(h)}")
    K = sigma.kernel(h)
    half = [(s - 1) // 2 for s in K.shape]
    if len(set(half)) != 1:
        raise ValueError("anisotropic spacing needs equal stencil margins per axis")
    margin = half[0]
    if any(s - 2 * margin < 3 for s in omega.domain.shape):
        raise ValueError("grid too small for this mollifier")
    vals = np.array([fftconvolve(c, K, mode="valid") for c in omega.values])
    return SampledForm(omega.domain.interior(margin), omega.grade, vals)


@dataclass(frozen=True, eq=False)
class TestFormFamily:
    """Compactly supported smooth test forms with analytic exterior derivatives."""

    __test__ = False  # not a pytest class

    domain: GridDomain
    grade: int
    forms: list = field(default_factory=list)
    derivatives: list = field(default_factory=list)
    centers: list = field(default_factory=list)
    radius: float = 0.0

    @classmethod
    def bumps(cls, domain: GridDomain, grade: int, centers, radius: float,
              seed: int = 7) -> TestFormFamily:
        """Forms eta_J = b(|x - c| / r) * (a_J0 + sum_i a_Ji (x_i - c_i) / r).

        Coefficients a come from the xorshift stream for ``seed``; supports
        must stay at least 2h away from the boundary.
        """
        n = domain.dim
        if not 0 <= grade <= n - 1:
            raise ValueError("test forms need grade in [0, n - 1]")
        h = max(domain.spacing)
        centers = [np.asarray(c, dtype=float) for c in centers]
        if not centers:
            raise ValueError("empty test form family")
        for c in centers:
            if np.any(c - radius < np.array(domain.lower) + 2 * h) or \
                    np.any(c + radius > np.array(domain.upper) - 2 * h):
                raise ValueError(f"test form at {c.tolist()} reaches within 2h of the boundary")
        rng = Xorshift64Star(seed, lanes=8)
        x = domain.coords()
        m = comb(n, grade)
        forms, derivs = [], []
        for c in centers:
            y = (x - c.reshape((-1,) + (1,) * n)) / radius
            t = np.sqrt(np.sum(y**2, axis=0))
            b = bump(t)
            fac = bump_derivative_factor(t)
            a = rng.uniform((m, n + 1), -1.0, 1.0)
            a[:, 0] += np.where(a[:, 0] >= 0, 1.0, -1.0)  # keep a nonzero mean
            poly = a[:, :1].reshape((m,) + (1,) * n) + np.tensordot(a[:, 1:], y, axes=(1, 0))
            vals = b * poly
            partials = np.empty((n, m) + domain.shape)
            for i in range(n):
                db = fac * b * y[i] / radius
                partials[i] = db * poly + b * (a[:, 1 + i].reshape((m,) + (1,) * n) / radius)
            forms.append(SampledForm(domain, grade, vals))
            derivs.append(SampledForm(domain, grade + 1,
                                      exterior_derivative_from_partials(partials, n, grade)))
        return cls(domain, grade, forms, derivs, [c.tolist() for c in centers], radius)

    @classmethod
    def lattice(cls, domain: GridDomain, grade: int, per_axis: int = 2,
                fill: float = 0.8, seed: int = 7, region: Region | None = None) -> TestFormFamily:
        """Bumps centered on a regular lattice; optionally keep only supports inside ``region``."""
        n = domain.dim
        h = max(domain.spacing)
        lo = np.array(domain.lower) + 3 * h
        hi = np.array(domain.upper) - 3 * h
        cell = (hi - lo) / per_axis
        radius = 0.5 * fill * float(cell.min())
        axes = [lo[i] + cell[i] * (np.arange(per_axis) + 0.5) for i in range(n)]
        centers = [np.array(c) for c in zip(*(g.ravel() for g in np.meshgrid(*axes, indexing="ij")))]
        if region is not None:
            centers = [c for c in centers if _ball_inside(region, c, radius)]
        return cls.bumps(domain, grade, centers, radius, seed)

    def __len__(self):
        return len(self.forms)


def _ball_inside(region: Region, center: np.ndarray, radius: float, samples: int = 64) -> bool:
    n = center.size
    rng = Xorshift64Star(11, lanes=8)
    dirs = rng.normal((n, samples))
    dirs /= np.linalg.norm(dirs, axis=0)
    pts = center[:, None] + radius * np.concatenate([dirs, np.zeros((n, 1))], axis=1)
    return bool(np.all(region(pts)))


def weak_derivative_residuals(omega: SampledForm, tau: SampledForm,
                              tests: TestFormFamily) -> np.ndarray:
    """|int w ^ d(eta) - (-1)^{k+1} int tau ^ eta| for each test form eta."""
    k, n = omega.grade, omega.dim
    if tau.grade != k + 1:
        raise ValueError("tau must have grade k + 1")
    if tau.domain != omega.domain or tests.domain != omega.domain:
        raise ValueError("forms and tests must share one grid")
    if tests.grade != n - k - 1:
        raise ValueError(f"test forms must have grade {n - k - 1}")
    if not len(tests):
        raise ValueError("empty test family")
    sign = -1.0 if (k + 1) % 2 else 1.0
    out = []
    for eta, deta in zip(tests.forms, tests.derivatives):
        lhs = integrate_top_form(wedge_sampled(omega, deta))
        rhs = integrate_top_form(wedge_sampled(tau, eta))
        out.append(abs(lhs - sign * rhs))
    return np.array(out)


def weak_derivative_residual(omega: SampledForm, tau: SampledForm, tests: TestFormFamily) -> float:
    return float(weak_derivative_residuals(omega, tau, tests).max())


def leibniz_residual(omega: SampledForm, d_omega: SampledForm, other: SampledForm,
                     d_other: SampledForm, tests: TestFormFamily) -> float:
    """Weak residual of d(w ^ w') against dw ^ w' + (-1)^k w ^ dw'."""
    k = omega.grade
    prod = wedge_sampled(omega, other)
    rhs = wedge_sampled(d_omega, other)
    second = wedge_sampled(omega, d_other)
    rhs = rhs + (second if k % 2 == 0 else -second)
    return weak_derivative_residual(prod, rhs, tests)


# --------------------------------------------------------------------------
# Serialization
#
# CSV layout:
#   line 1: "# qrforms sampled form"
#   line 2: "n=<n>,k=<k>,shape=<s1>x<s2>...,lower=<l1>;<l2>...,upper=<u1>;<u2>..."
#   then one line per grid node in row-major (C) order, holding the
#   C(n, k) coefficients of that node separated by commas.
#
# Binary layout (little endian):
#   b"QRSF", int32 n, int32 k, n x int32 shape, n x float64 lower,
#   n x float64 upper, then float64 coefficients node-major
#   (all coefficients of node 0, then node 1, ... in row-major node order).


def _node_major(form: SampledForm) -> np.ndarray:
    return np.moveaxis(form.values, 0, -1).reshape(-1, form.values.shape[0])


def write_form_csv(path, form: SampledForm) -> None:
    d = form.domain
    header = "n={},k={},shape={},lower={},upper={}".format(
        d.dim, form.grade, "x".join(map(str, d.shape)),
        ";".join(repr(v) for v in d.lower), ";".join(repr(v) for v in d.upper))
    rows = _node_major(form)
    with open(path, "w") as fh:
        fh.write("# qrforms sampled form\n")
        fh.write(header + "\n")
        for r in rows:
            fh.write(",".join(repr(float(v)) for v in r) + "\n")


def read_form_csv(path) -> SampledForm:
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "# qrforms sampled form":
            raise ValueError("not a sampled-form CSV file")
        fields = dict(item.split("=", 1) for item in fh.readline().strip().split(","))
        rows = np.loadtxt(fh, delimiter=",", ndmin=2)
    n, k = int(fields["n"]), int(fields["k"])
    shape = tuple(int(s) for s in fields["shape"].split("x"))
    lower = tuple(float(s) for s in fields["lower"].split(";"))
    upper = tuple(float(s) for s in fields["upper"].split(";"))
    domain = GridDomain(lower, upper, shape)
    if len(shape) != n:
        raise ValueError("header dimension disagrees with shape")
    vals = np.moveaxis(rows.reshape(shape + (comb(n, k),)), -1, 0)
    return SampledForm(domain, k, vals)


def write_form_binary(path, form: SampledForm) -> None:
    d = form.domain
    with open(path, "wb") as fh:
        fh.write(b"QRSF")
        fh.write(struct.pack(f"<ii{d.dim}i", d.dim, form.grade, *d.shape))
        fh.write(struct.pack(f"<{d.dim}d{d.dim}d", *d.lower, *d.upper))
        fh.write(np.ascontiguousarray(_node_major(form), dtype="<f8").tobytes())


def read_form_binary(path) -> SampledForm:
    with open(path, "rb") as fh:
        if fh.read(4) != b"QRSF":
            raise ValueError("not a sampled-form binary file")
        n, k = struct.unpack("<ii", fh.read(8))
        shape = struct.unpack(f"<{n}i", fh.read(4 * n))
        bounds = struct.unpack(f"<{2 * n}d", fh.read(16 * n))
        data = np.frombuffer(fh.read(), dtype="<f8")
    domain = GridDomain(bounds[:n], bounds[n:], shape)
    vals = np.moveaxis(data.reshape(tuple(shape) + (comb(n, k),)), -1, 0)
    return SampledForm(domain, k, vals.copy())
