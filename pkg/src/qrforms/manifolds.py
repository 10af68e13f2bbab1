"""Concrete Riemannian manifolds with explicit atlases.

Manifold points live in an ambient Euclidean space (R^3 for the unit
sphere, R^2 for the flat torus with points in [0, 1)^2, R^n for Euclidean
boxes). A chart maps manifold points to coordinates in R^n; the metric in
chart coordinates is G = J^T J with J the ambient derivative of the inverse
chart.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .forms import GridDomain, bump, integrate
from .linear import svd_fields
from .maps import DifferentiableMap
from .rng import Xorshift64Star

SHRINK = 0.9  # partition-of-unity supports shrink 10% inside chart domains


@dataclass(frozen=True, eq=False)
class Chart:
    """One chart: coordinates on a disk or box domain in R^n.

    ``inverse`` maps coordinates (n,) + S to ambient points (m,) + S;
    ``inverse_jacobian`` returns (m, n) + S; ``forward`` maps ambient points
    back to coordinates.
    """

    name: str
    dim: int
    ambient_dim: int
    forward: Callable[[np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    inverse_jacobian: Callable[[np.ndarray], np.ndarray]
    kind: str  # "disk" or "box"
    center: tuple
    radius: float = 0.0
    lower: tuple = ()
    upper: tuple = ()
    point_filter: Callable[[np.ndarray], np.ndarray] | None = None

    # ---- domain

    def contains_coords(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        c = np.array(self.center).reshape((-1,) + (1,) * (u.ndim - 1))
        if self.kind == "disk":
            return np.sqrt(np.sum((u - c) ** 2, axis=0)) < self.radius
        lo = np.array(self.lower).reshape(c.shape)
        hi = np.array(self.upper).reshape(c.shape)
        return np.all((u > lo) & (u < hi), axis=0)

    def contains_point(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        ok = self.contains_coords(self.forward(p))
        if self.point_filter is not None:
            ok &= self.point_filter(p)
        return ok

    def bounds(self) -> tuple[tuple, tuple]:
        if self.kind == "disk":
            c = np.array(self.center)
            return tuple(c - self.radius), tuple(c + self.radius)
        return self.lower, self.upper

    def grid(self, samples: int) -> GridDomain:
        lo, hi = self.bounds()
        return GridDomain(lo, hi, (samples,) * self.dim)

    def sample_coords(self, count: int, seed: int = 0) -> np.ndarray:
        """Center, a ring on the closed boundary, and uniform interior points."""
        rng = Xorshift64Star(seed, lanes=16)
        c = np.array(self.center, dtype=float)
        pts = [c[:, None]]
        if self.kind == "disk":
            if self.dim == 2:
                t = np.linspace(0, 2 * np.pi, 64, endpoint=False)
                pts.append(c[:, None] + self.radius * np.array([np.cos(t), np.sin(t)]))
            rest = max(count - sum(p.shape[1] for p in pts), 0)
            d = rng.normal((self.dim, rest))
            d /= np.linalg.norm(d, axis=0)
            r = self.radius * rng.uniform(rest) ** (1.0 / self.dim)
            pts.append(c[:, None] + r * d)
        else:
            lo, hi = np.array(self.lower), np.array(self.upper)
            corners = np.array(np.meshgrid(*zip(lo, hi), indexing="ij")).reshape(self.dim, -1)
            pts.append(corners)
            rest = max(count - sum(p.shape[1] for p in pts), 0)
            pts.append(lo[:, None] + (hi - lo)[:, None] * rng.uniform((self.dim, rest)))
        return np.concatenate(pts, axis=1)[:, :max(count, 1)]

    # ---- geometry

    def metric(self, u) -> np.ndarray:
        """Gram matrix field (n, n) + S of the pulled-back ambient metric."""
        J = self.inverse_jacobian(np.asarray(u, dtype=float))
        return np.einsum("mi...,mj...->ij...", J, J)

    def volume_density(self, u) -> np.ndarray:
        G = np.moveaxis(self.metric(u), (0, 1), (-2, -1))
        return np.sqrt(np.linalg.det(G))

    def forward_jacobian(self, p) -> np.ndarray:
        """Derivative of the chart on tangent vectors: (J^T J)^-1 J^T, shape (n, m) + S."""
        u = self.forward(np.asarray(p, dtype=float))
        J = np.moveaxis(self.inverse_jacobian(u), (0, 1), (-2, -1))
        Jt = np.swapaxes(J, -1, -2)
        L = np.linalg.solve(Jt @ J, Jt)
        return np.moveaxis(L, (-2, -1), (0, 1))

    def partition_bump(self, u) -> np.ndarray:
        """Unnormalized partition function, supported in the domain shrunk by 10%."""
        u = np.asarray(u, dtype=float)
        c = np.array(self.center).reshape((-1,) + (1,) * (u.ndim - 1))
        if self.kind == "disk":
            return bump(np.sqrt(np.sum((u - c) ** 2, axis=0)) / (SHRINK * self.radius))
        half = (np.array(self.upper) - np.array(self.lower)).reshape(c.shape) / 2
        mid = (np.array(self.upper) + np.array(self.lower)).reshape(c.shape) / 2
        return np.prod(bump((u - mid) / (SHRINK * half)), axis=0)

    def inverse_map(self) -> DifferentiableMap:
        return DifferentiableMap(f"{self.name}^-1", self.dim, self.ambient_dim, self.inverse,
                                 self.inverse_jacobian)

    def forward_map(self) -> DifferentiableMap:
        """The chart as a map on ambient points; its derivative acts on tangent vectors."""
        return DifferentiableMap(self.name, self.ambient_dim, self.dim, self.forward,
                                 self.forward_jacobian)


@dataclass(frozen=True, eq=False)
class ChartAtlas:
    manifold_id: str
    charts: list
    sampler: Callable[[int, int], np.ndarray]  # (count, seed) -> ambient points
    distance: Callable[[np.ndarray, np.ndarray], np.ndarray]
    normal: Callable[[np.ndarray], np.ndarray] | None = None  # outward unit normal, embedded surfaces
    probe: tuple = ()  # (center point, radius) of a bump used to compare charts
    area: float | None = None  # closed-form total volume, when known
    info: dict = field(default_factory=dict)

    def chart_orientations(self, samples: int = 200, seed: int = 3) -> list[float]:
        """Smallest orientation determinant per chart; positive means consistent."""
        out = []
        for ch in self.charts:
            u = ch.sample_coords(samples, seed)
            u = u[:, ch.contains_coords(u)] if np.any(ch.contains_coords(u)) else u
            J = ch.inverse_jacobian(u)
            if self.normal is None:
                d = np.linalg.det(np.moveaxis(J, (0, 1), (-2, -1)))
            else:
                p = ch.inverse(u)
                M = np.concatenate([J, self.normal(p)[:, None]], axis=1)
                d = np.linalg.det(np.moveaxis(M, (0, 1), (-2, -1)))
            out.append(float(d.min()))
        return out


# --------------------------------------------------------------------------
# Sphere


def _stereo_inverse(u, pole: int, reflect: bool):
    a = u[0]
    b = -u[1] if reflect else u[1]
    s = a * a + b * b
    z = (s - 1) / (s + 1) if pole > 0 else (1 - s) / (1 + s)
    return np.array([2 * a / (1 + s), 2 * b / (1 + s), z])


def _stereo_inverse_jac(u, pole: int, reflect: bool):
    a = u[0]
    sb = -1.0 if reflect else 1.0
    b = sb * u[1]
    s = a * a + b * b
    q = (1 + s) ** 2
    dz = 4 / q if pole > 0 else -4 / q
    # derivatives with respect to (a, b), then chain through b = sb * u2
    J = np.array([[2 * (1 + s - 2 * a * a) / q, -4 * a * b / q],
                  [-4 * a * b / q, 2 * (1 + s - 2 * b * b) / q],
                  [dz * a, dz * b]])
    J[:, 1] *= sb
    return J


def _stereo_forward(p, pole: int, reflect: bool):
    denom = 1 - p[2] if pole > 0 else 1 + p[2]
    with np.errstate(divide="ignore", invalid="ignore"):
        a = p[0] / denom
        b = p[1] / denom
    return np.array([a, -b if reflect else b])


def stereographic_chart(pole: str, radius: float = 2.0, reflect: bool | None = None) -> Chart:
    """Projection from the north ("N") or south ("S") pole onto the equatorial plane.

    The north-pole projection is orientation-reversing against the outward
    normal, so by default its second coordinate is reflected.
    """
    sgn = {"N": 1, "S": -1}[pole]
    if reflect is None:
        reflect = pole == "N"
    pole_point = np.array([0.0, 0.0, float(sgn)])

    def away_from_pole(p):
        return np.sum((p - pole_point.reshape((3,) + (1,) * (p.ndim - 1))) ** 2, axis=0) > 1e-24

    return Chart(f"stereo_{pole}{'_refl' if reflect else ''}", 2, 3,
                 lambda p: _stereo_forward(p, sgn, reflect),
                 lambda u: _stereo_inverse(u, sgn, reflect),
                 lambda u: _stereo_inverse_jac(u, sgn, reflect),
                 "disk", (0.0, 0.0), radius=float(radius), point_filter=away_from_pole)


def _tangent_frame(center: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    c = center / np.linalg.norm(center)
    helper = np.array([1.0, 0.0, 0.0]) if abs(c[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ c) * c
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(c, e1)  # (e1, e2, c) positively oriented
    return e1, e2


def exp_chart(center=(0.0, 0.0, 1.0), radius: float = 0.5, frame=None) -> Chart:
    """Normal coordinates on the unit sphere: inverse of the exponential map at ``center``.

    In these coordinates the metric has singular values 1 (radial) and
    sin(r)/r (angular), so the bilipschitz constant over the disk of radius
    R is R / sin R.
    """
    if not 0 < radius < np.pi:
        raise ValueError("exp_chart radius must lie in (0, pi)")
    c = np.asarray(center, dtype=float)
    c = c / np.linalg.norm(c)
    if frame is None:
        e1, e2 = _tangent_frame(c)
    else:
        e1, e2 = (np.asarray(v, dtype=float) for v in frame)
        if abs(e1 @ c) > 1e-12 or abs(e2 @ c) > 1e-12 or abs(e1 @ e2) > 1e-12:
            raise ValueError("frame must be orthonormal and tangent at the center")
    E = np.stack([e1, e2], axis=1)  # (3, 2)

    def inverse(u):
        rho = np.sqrt(u[0] ** 2 + u[1] ** 2)
        sinc = np.sinc(rho / np.pi)  # sin(rho) / rho
        w = np.tensordot(E, u, axes=1)
        return np.cos(rho) * c.reshape((3,) + (1,) * rho.ndim) + sinc * w

    def inverse_jac(u):
        rho = np.sqrt(u[0] ** 2 + u[1] ** 2)
        safe = np.where(rho > 0, rho, 1.0)
        sinc = np.sinc(rho / np.pi)
        # d(sinc)/d rho / rho = (rho cos rho - sin rho) / rho^3, finite limit -1/3
        small = rho < 1e-4
        g = np.where(small, -1.0 / 3.0 + rho**2 / 30.0,
                     (safe * np.cos(safe) - np.sin(safe)) / safe**3)
        cc = c.reshape((3, 1) + (1,) * rho.ndim)
        w = np.tensordot(E, u, axes=1)  # (3,) + S
        # column i: -s u_i c + (s'(rho) / rho) u_i w + s e_i, with s = sin(rho) / rho
        J = (-sinc)[None, None] * cc * u[None] \
            + (g * 1.0)[None, None] * w[:, None] * u[None] \
            + sinc[None, None] * E.reshape((3, 2) + (1,) * rho.ndim)
        return J

    def forward(p):
        dot = np.clip(np.tensordot(c, p, axes=1), -1.0, 1.0)
        theta = np.arccos(dot)
        scale = np.where(theta > 1e-8, theta / np.sin(np.maximum(theta, 1e-300)), 1.0 + theta**2 / 6)
        tang = np.tensordot(E.T, p, axes=1)
        return scale * tang

    def within(p):
        return np.tensordot(c, p, axes=1) > np.cos(radius)

    return Chart(f"exp[{radius:g}]", 2, 3, forward, inverse, inverse_jac, "disk", (0.0, 0.0),
                 radius=float(radius), point_filter=within)


def _sphere_sampler(count: int, seed: int) -> np.ndarray:
    rng = Xorshift64Star(seed)
    p = rng.normal((3, count))
    return p / np.linalg.norm(p, axis=0)


def _sphere_distance(p, q):
    return np.arccos(np.clip(np.sum(p * q, axis=0), -1.0, 1.0))


def sphere_atlas(radius: float = 2.0, reflect: bool = True) -> ChartAtlas:
    """Two stereographic charts on the unit sphere; ``reflect=False`` leaves them inconsistently oriented."""
    charts = [stereographic_chart("N", radius, reflect=reflect), stereographic_chart("S", radius, reflect=False)]
    return ChartAtlas("sphere", charts, _sphere_sampler, _sphere_distance,
                      normal=lambda p: p / np.linalg.norm(p, axis=0),
                      probe=(np.array([1.0, 0.3, 0.15]) / np.linalg.norm([1.0, 0.3, 0.15]), 0.45), area=4 * np.pi,
                      info={"chart_radius": radius})


# --------------------------------------------------------------------------
# Flat torus and Euclidean boxes


def torus_chart(offset) -> Chart:
    o = np.asarray(offset, dtype=float)

    def forward(p):
        return np.mod(p - o.reshape((2,) + (1,) * (p.ndim - 1)), 1.0)

    def inverse(u):
        return np.mod(u + o.reshape((2,) + (1,) * (u.ndim - 1)), 1.0)

    def inverse_jac(u):
        return np.broadcast_to(np.eye(2).reshape((2, 2) + (1,) * (u.ndim - 1)),
                               (2, 2) + u.shape[1:]).copy()

    return Chart(f"torus[{o[0]:g},{o[1]:g}]", 2, 2, forward, inverse, inverse_jac, "box", (0.5, 0.5),
                 lower=(0.0, 0.0), upper=(1.0, 1.0))


def _torus_distance(p, q):
    d = np.abs(p - q) % 1.0
    d = np.minimum(d, 1.0 - d)
    return np.sqrt(np.sum(d**2, axis=0))


def torus_atlas() -> ChartAtlas:
    """Flat torus R^2 / Z^2 with four translation charts on (0, 1)^2."""
    charts = [torus_chart((a, b)) for a in (0.0, 0.5) for b in (0.0, 0.5)]

    def sampler(count, seed):
        return Xorshift64Star(seed).uniform((2, count))

    return ChartAtlas("flat_torus", charts, sampler, _torus_distance,
                      probe=(np.array([0.3, 0.7]), 0.1), area=1.0)


def linear_chart(A, lower=(-1.0, -1.0), upper=(1.0, 1.0), name: str | None = None) -> Chart:
    """Chart x -> A x on a Euclidean box; the chart domain is the image box given by ``lower``/``upper``."""
    A = np.array(A, dtype=float)
    n = A.shape[0]
    Ainv = np.linalg.inv(A)
    lo, hi = tuple(float(v) for v in lower), tuple(float(v) for v in upper)
    return Chart(name or "linear", n, n, lambda p: np.tensordot(A, p, axes=1),
                 lambda u: np.tensordot(Ainv, u, axes=1),
                 lambda u: np.broadcast_to(Ainv.reshape((n, n) + (1,) * (u.ndim - 1)),
                                           (n, n) + u.shape[1:]).copy(),
                 "box", tuple((a + b) / 2 for a, b in zip(lo, hi)), lower=lo, upper=hi)


def euclidean_box_atlas(A=None, lower=(0.0, 0.0), upper=(1.0, 1.0)) -> ChartAtlas:
    """A single linear chart on an open box of R^n (identity by default)."""
    n = len(lower)
    A = np.eye(n) if A is None else np.array(A, dtype=float)
    image = np.tensordot(A, np.array(np.meshgrid(*zip(lower, upper), indexing="ij")).reshape(n, -1), axes=1)
    chart = linear_chart(A, image.min(axis=1), image.max(axis=1))
    lo, hi = np.array(lower), np.array(upper)

    def sampler(count, seed):
        return lo[:, None] + (hi - lo)[:, None] * Xorshift64Star(seed).uniform((n, count))

    return ChartAtlas("euclidean_box", [chart], sampler,
                      lambda p, q: np.sqrt(np.sum((p - q) ** 2, axis=0)), area=float(np.prod(hi - lo)))


MANIFOLDS = ("sphere", "flat_torus", "euclidean_box")


def atlas_by_id(manifold_id: str) -> ChartAtlas:
    if manifold_id == "sphere":
        return sphere_atlas()
    if manifold_id == "flat_torus":
        return torus_atlas()
    if manifold_id == "euclidean_box":
        return euclidean_box_atlas()
    raise ValueError(f"unknown manifold {manifold_id!r}; expected one of {', '.join(MANIFOLDS)}")


def chart_from_spec(spec: dict) -> Chart:
    """Chart from a config record: {"chart": "identity" | "linear" | "exp" | "stereographic", ...}."""
    kind = spec.get("chart")
    if kind == "identity":
        n = int(spec.get("n", 2))
        return linear_chart(np.eye(n), spec.get("lower", (-1.0,) * n), spec.get("upper", (1.0,) * n),
                            name="identity")
    if kind == "linear":
        return linear_chart(spec["A"], spec.get("lower", (-1.0, -1.0)), spec.get("upper", (1.0, 1.0)))
    if kind == "exp":
        return exp_chart(spec.get("center", (0.0, 0.0, 1.0)), float(spec.get("radius", 0.5)))
    if kind == "stereographic":
        return stereographic_chart(spec.get("pole", "S"), float(spec.get("radius", 2.0)))
    raise ValueError(f"unknown chart kind {kind!r}")


# --------------------------------------------------------------------------
# Measurements


def bilipschitz_constant_estimate(chart: Chart, samples: int = 1000, seed: int = 0) -> float:
    """max over sampled coordinates of max(|Dphi|, 1 / l(Dphi)) in the ambient metric.

    The singular values of the chart differential are the reciprocals of
    those of the inverse chart, so the estimate is max(s_max, 1 / s_min)
    over the inverse-chart Jacobian. Samples include the domain center and
    its closed boundary; a degenerate differential gives +inf.
    """
    u = chart.sample_coords(samples, seed)
    J = np.moveaxis(chart.inverse_jacobian(u), (0, 1), (-2, -1))
    if chart.ambient_dim == chart.dim:
        sv = svd_fields(J).singvals
    else:
        sv = np.sqrt(np.maximum(np.linalg.eigvalsh(np.swapaxes(J, -1, -2) @ J), 0.0))[..., ::-1]
    top, low = sv[..., 0], sv[..., -1]
    if np.any(low <= 0) or np.any(top <= 0):
        return float("inf")
    return float(np.max(np.maximum(top, 1.0 / low)))


@dataclass(frozen=True)
class PartitionReport:
    max_deviation: float
    uncovered: int
    ok: bool


def partition_check(atlas: ChartAtlas, samples: int = 10_000, seed: int = 1) -> PartitionReport:
    """Normalized bump partition must sum to one at every sampled manifold point."""
    p = atlas.sampler(samples, seed)
    raw = np.array([np.where(ch.contains_point(p), _raw_bump(atlas, ch, ch.forward(p)), 0.0)
                    for ch in atlas.charts])
    total = raw.sum(axis=0)
    uncovered = int(np.sum(total <= 0))
    with np.errstate(invalid="ignore", divide="ignore"):
        psum = np.where(total > 0, (raw / np.where(total > 0, total, 1.0)).sum(axis=0), 0.0)
    dev = float(np.max(np.abs(psum - 1.0)))
    return PartitionReport(dev, uncovered, dev <= 1e-8 and uncovered == 0)


def _raw_bump(atlas: ChartAtlas, chart: Chart, u: np.ndarray) -> np.ndarray:
    """Unnormalized partition function; a one-chart atlas uses the indicator of its domain."""
    if len(atlas.charts) == 1:
        if chart.kind == "box":  # closed box, so trapezoid boundary nodes keep their weight
            lo = np.array(chart.lower).reshape((-1,) + (1,) * (u.ndim - 1))
            hi = np.array(chart.upper).reshape(lo.shape)
            return np.all((u >= lo) & (u <= hi), axis=0).astype(float)
        return chart.contains_coords(u).astype(float)
    return chart.partition_bump(u)


def _partition_weight(atlas: ChartAtlas, index: int, u: np.ndarray) -> np.ndarray:
    """psi_i / sum_j psi_j at the points with coordinates ``u`` in chart ``index``."""
    ch = atlas.charts[index]
    own = _raw_bump(atlas, ch, u)
    p = ch.inverse(u)
    total = np.zeros_like(own)
    for other in atlas.charts:
        inside = other.contains_point(p)
        val = np.zeros_like(own)
        if np.any(inside):
            val[inside] = _raw_bump(atlas, other, other.forward(p[:, inside]))
        total += val
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(own > 0, own / np.where(total > 0, total, 1.0), 0.0)


def riemannian_integral(atlas: ChartAtlas, f: Callable, resolution: int = 256,
                        check_partition: bool = True) -> float:
    """Sum over charts of the integral of (psi_i f) o phi_i^-1 times the volume density.

    ``f`` takes ambient points (m,) + S. Raises when the normalized partition
    of unity fails its unit-sum check on 10^4 sample points.
    """
    if check_partition:
        rep = partition_check(atlas)
        if not rep.ok:
            raise ValueError(f"partition of unity fails: deviation {rep.max_deviation:.3g}, "
                             f"{rep.uncovered} uncovered samples")
    total = 0.0
    for i, ch in enumerate(atlas.charts):
        grid = ch.grid(resolution)
        u = grid.coords()
        w = _partition_weight(atlas, i, u)
        active = w > 0
        vals = np.zeros(grid.shape)
        if np.any(active):
            ua = u[:, active]
            vals[active] = w[active] * np.asarray(f(ch.inverse(ua)), dtype=float) * ch.volume_density(ua)
        total += integrate(grid, vals)
    return total


def chart_integral(chart: Chart, f: Callable, resolution: int = 256) -> float:
    """Integral of a function supported inside one chart, computed in that chart alone."""
    grid = chart.grid(resolution)
    u = grid.coords()
    inside = chart.contains_coords(u)
    vals = np.zeros(grid.shape)
    ua = u[:, inside]
    vals[inside] = np.asarray(f(chart.inverse(ua)), dtype=float) * chart.volume_density(ua)
    return integrate(grid, vals)


@dataclass(frozen=True)
class TransitionReport:
    pairs: list
    min_jacobian: float
    max_roundtrip: float
    max_integral_gap: float
    orientation_consistent: bool
    ok: bool


def transition_check(atlas: ChartAtlas, samples: int = 1000, resolution: int = 256,
                     seed: int = 2) -> TransitionReport:
    """Sample chart overlaps: transition Jacobians, round trips, and a shared bump integral.

    Orientation problems are reported in the result, never corrected.
    """
    if len(atlas.charts) < 2:
        raise ValueError("transition check needs at least two charts")
    p_all = atlas.sampler(20 * samples, seed)
    center, rad = atlas.probe

    def probe(p):
        return bump(atlas.distance(p, center.reshape((-1,) + (1,) * (p.ndim - 1))) / rad)

    pairs = []
    min_jac, max_rt, max_gap = np.inf, 0.0, 0.0
    for i, a in enumerate(atlas.charts):
        for j, b in enumerate(atlas.charts):
            if i >= j:
                continue
            both = a.contains_point(p_all) & b.contains_point(p_all)
            p = p_all[:, both][:, :samples]
            if p.shape[1] == 0:
                continue
            ua = a.forward(p)
            ub = b.forward(a.inverse(ua))
            # D(phi_b o phi_a^-1) = Dphi_b . Dphi_a^-1 on tangent vectors
            T = np.einsum("ik...,kj...->ij...", b.forward_jacobian(a.inverse(ua)), a.inverse_jacobian(ua))
            jac = np.linalg.det(np.moveaxis(T, (0, 1), (-2, -1)))
            rt = np.max(np.abs(a.forward(b.inverse(ub)) - ua))
            record = {"charts": [a.name, b.name], "samples": int(p.shape[1]),
                      "min_jacobian": float(jac.min()), "roundtrip": float(rt)}
            probe_in = _ball_in_chart(a, center, rad, atlas) and _ball_in_chart(b, center, rad, atlas)
            if probe_in:
                ia = chart_integral(a, probe, resolution)
                ib = chart_integral(b, probe, resolution)
                record["integrals"] = [ia, ib]
                max_gap = max(max_gap, abs(ia - ib))
            pairs.append(record)
            min_jac = min(min_jac, float(jac.min()))
            max_rt = max(max_rt, float(rt))
    consistent = min_jac > 0
    ok = consistent and max_rt <= 1e-10 and max_gap <= 1e-4 and bool(pairs)
    return TransitionReport(pairs, float(min_jac), max_rt, max_gap, consistent, ok)


def _ball_in_chart(chart: Chart, center: np.ndarray, radius: float, atlas: ChartAtlas) -> bool:
    """Whether the closed probe ball lies in the chart (checked on its sampled boundary)."""
    p = atlas.sampler(4000, 9)
    near = atlas.distance(p, center[:, None]) <= radius
    pts = np.concatenate([center[:, None], p[:, near]], axis=1)
    return bool(np.all(chart.contains_point(pts)))


def exp_chart_curve(radii=(0.01, 0.1, 0.5, 1.0), center=(0.0, 0.0, 1.0), samples: int = 1000) -> dict:
    """Measured bilipschitz constant of normal-coordinate charts against radius."""
    return {float(r): bilipschitz_constant_estimate(exp_chart(center, r), samples) for r in radii}


def radius_for_bilipschitz(L: float) -> float:
    """Largest normal-coordinate radius whose chart constant R / sin R is at most ``L``."""
    from scipy.optimize import brentq

    if not L > 1:
        raise ValueError("target constant must exceed 1")
    return float(brentq(lambda r: r / np.sin(r) - L, 1e-9, np.pi - 1e-9, xtol=1e-14))
