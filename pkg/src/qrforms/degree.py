"""Numerical degree theory: preimages, local indices, normal neighborhoods, branch sets.

Maps are duck-typed :class:`qrforms.maps.DifferentiableMap` objects. The
local index is computed only in the plane, by the argument principle;
three-dimensional catalogue maps delegate to their planar factor.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .forms import GridDomain, Region, cell_average
from .linear import svd_fields


class UnstableFiberWarning(UserWarning):
    pass


def _as_point(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size != n:
        raise ValueError(f"expected a point of dimension {n}")
    return y


def lipschitz_estimate(f, domain: GridDomain) -> float:
    D = np.moveaxis(f.derivative(domain.coords()), (0, 1), (-2, -1))
    return float(np.max(np.linalg.norm(D, ord=2, axis=(-2, -1))))


def _region_mask(domain: GridDomain, region: Region | None) -> np.ndarray:
    if region is None:
        return np.ones(domain.shape, dtype=bool)
    return np.asarray(region(domain.coords()), dtype=bool)


def _edge_nodes(mask: np.ndarray) -> np.ndarray:
    """Nodes of ``mask`` that touch the grid boundary or a cross-neighbor outside the mask."""
    interior = ndimage.binary_erosion(mask, border_value=0)
    return mask & ~interior


# --------------------------------------------------------------------------
# Fibers


@dataclass(frozen=True)
class PreimageFiber:
    y: np.ndarray
    points: list
    residuals: list
    count: int
    unstable: bool
    boundary_distance: float


def _newton(f, x0: np.ndarray, y: np.ndarray, iters: int = 20) -> tuple[np.ndarray, float]:
    """Damped Newton iteration for f(x) = y, halving the step until the residual drops."""
    x = x0.copy()
    r = f(x) - y
    res = float(np.linalg.norm(r))
    for _ in range(iters):
        if res == 0.0:
            break
        step = np.linalg.pinv(f.derivative(x)) @ r
        t = 1.0
        while t > 1e-4:
            cand = x - t * step
            rc = f(cand) - y
            rn = float(np.linalg.norm(rc))
            if rn < res:
                x, r, res = cand, rc, rn
                break
            t *= 0.5
        else:
            break
    return x, res


def preimage_count(f, y, domain: GridDomain, region: Region | None = None,
                   rtol: float = 1e-8, lip: float | None = None) -> PreimageFiber:
    """Locate f^-1(y) in U = region (within the grid box).

    Grid nodes where |f - y| is a local minimum below 2 Lip h seed a damped
    Newton polish; points are accepted when |f(x) - y| <= rtol * max(1, |y|)
    and merged when closer than h / 2 (polished duplicates agree far more
    closely; distinct points closer than that cannot be told apart by
    the seeds anyway). The fiber is flagged unstable when y
    lies within 2 Lip h of the image of the boundary of U. Pass ``lip`` to
    reuse a Lipschitz estimate across many calls on one grid.
    """
    n = f.src_dim
    y = _as_point(y, f.dst_dim)
    x = domain.coords()
    F = f(x) - y.reshape((-1,) + (1,) * n)
    dist = np.sqrt(np.sum(F**2, axis=0))
    h = max(domain.spacing)
    if lip is None:
        lip = lipschitz_estimate(f, domain)
    mask = _region_mask(domain, region)
    local_min = dist <= ndimage.minimum_filter(dist, size=3, mode="nearest")
    seeds = np.argwhere(local_min & mask & (dist <= 2 * lip * h))
    scale = max(1.0, float(np.linalg.norm(y)))
    found, residuals = [], []
    for idx in seeds:
        x0 = x[(slice(None),) + tuple(idx)]
        xr, res = _newton(f, x0, y)
        if res > rtol * scale:
            continue
        inside = bool(domain.contains(xr[:, None])[0])
        if region is not None:
            inside &= bool(np.asarray(region(xr[:, None]))[0])
        if not inside:
            continue
        if any(np.linalg.norm(xr - p) < 0.5 * h for p in found):
            continue
        found.append(xr)
        residuals.append(res)
    edge = _edge_nodes(mask)
    bdist = float(dist[edge].min()) if np.any(edge) else np.inf
    return PreimageFiber(y, found, residuals, len(found), bdist < 2 * lip * h, bdist)


def _planar(f):
    if f.src_dim == 2:
        return f
    if getattr(f, "planar_factor", None) is not None:
        return f.planar_factor
    raise ValueError("local index is available only for planar maps or planar products")


def winding_number(f, x, radius: float, samples: int = 1024) -> tuple[float, float]:
    """(1 / 2 pi) times the change of arg(f - f(x)) around the circle |z - x| = radius.

    Returns the winding number and min |f - f(x)| / max |f - f(x)| on the
    circle (a small ratio means the circle passes close to the fiber).
    """
    x = np.asarray(x, dtype=float).reshape(2)
    t = np.linspace(0.0, 2 * np.pi, samples, endpoint=False)
    circle = x[:, None] + radius * np.array([np.cos(t), np.sin(t)])
    w = f(circle) - f(x[:, None])
    ang = np.arctan2(w[1], w[0])
    d = np.diff(np.concatenate([ang, ang[:1]]))
    d = (d + np.pi) % (2 * np.pi) - np.pi
    mag = np.hypot(w[0], w[1])
    return float(d.sum() / (2 * np.pi)), float(mag.min() / max(mag.max(), np.finfo(float).tiny))


@dataclass(frozen=True)
class LocalIndex:
    index: int
    winding: float
    rounding_residual: float
    radius: float


def local_index_record(f, x, radius: float = 0.05, samples: int = 1024,
                       retries: int = 4) -> LocalIndex:
    """Argument-principle index at ``x``; radii r and r/2 must round to the same integer.

    On disagreement, a large rounding residual, or a circle passing near
    another fiber point, the radius is halved and the computation retried.
    """
    g = _planar(f)
    x = np.asarray(x, dtype=float).reshape(-1)[:2]
    r = radius
    for _ in range(retries + 1):
        w1, q1 = winding_number(g, x, r, samples)
        w2, q2 = winding_number(g, x, r / 2, samples)
        i1, i2 = round(w1), round(w2)
        resid = max(abs(w1 - i1), abs(w2 - i2))
        if i1 == i2 and resid < 0.1 and min(q1, q2) > 1e-3:
            return LocalIndex(int(i1), w1, resid, r)
        r /= 2
    raise ValueError(f"local index at {x.tolist()} did not stabilize down to radius {r:.3g}")


def local_index_2d(f, x, radius: float = 0.05, samples: int = 1024) -> int:
    return local_index_record(f, x, radius, samples).index


@dataclass(frozen=True)
class DegreeReport:
    fibers: list = field(default_factory=list)
    excluded: list = field(default_factory=list)
    degree: int | None = None
    consistent: bool = False
    generic_match: bool = False


def degree_sum_check(f, ys, domain: GridDomain, region: Region | None = None,
                     samples: int = 1024) -> DegreeReport:
    """Sum of local indices over each fiber; must be one integer for every y.

    At generic values (all indices 1) the fiber count must equal that
    integer as well. Unstable fibers are excluded with a warning.
    """
    if not getattr(f, "is_proper", False):
        raise ValueError(f"{f.name} is not tagged proper")
    fibers, excluded = [], []
    lip = lipschitz_estimate(f, domain)
    for y in ys:
        fib = preimage_count(f, y, domain, region, lip=lip)
        if fib.unstable:
            warnings.warn(f"fiber over {np.asarray(y).tolist()} is unstable; excluded",
                          UnstableFiberWarning, stacklevel=2)
            excluded.append(np.asarray(y, dtype=float).tolist())
            continue
        pts = fib.points
        sep = min((np.linalg.norm(a - b) for i, a in enumerate(pts) for b in pts[i + 1:]), default=np.inf)
        rad = min(0.05, 0.25 * sep)
        idx = [local_index_record(f, p, rad, samples) for p in pts]
        fibers.append({"y": np.asarray(y, dtype=float).tolist(),
                       "points": [p.tolist() for p in pts],
                       "indices": [i.index for i in idx],
                       "winding_residual": max((i.rounding_residual for i in idx), default=0.0),
                       "newton_residual": max(fib.residuals, default=0.0),
                       "count": fib.count,
                       "index_sum": int(sum(i.index for i in idx))})
    sums = {fb["index_sum"] for fb in fibers}
    consistent = len(sums) == 1
    degree = sums.pop() if consistent else None
    generic = [fb for fb in fibers if all(i == 1 for i in fb["indices"])]
    generic_match = consistent and bool(generic) and all(fb["count"] == degree for fb in generic)
    return DegreeReport(fibers, excluded, degree, consistent, generic_match)


# --------------------------------------------------------------------------
# Normal neighborhoods


@dataclass(frozen=True, eq=False)
class NormalNeighborhood:
    center: np.ndarray
    radius: float
    mask: np.ndarray
    diameter: float
    checks: dict
    ok: bool


def normal_neighborhood(f, x, r: float, domain: GridDomain, region: Region | None = None) -> NormalNeighborhood:
    """The x-component of {node : |f(node) - f(x)| < r} under 2n-connectivity.

    Raises when the component touches the grid boundary or contains a second
    point of the fiber over f(x). Otherwise checks that the images of the
    component nodes cover B(f(x), r - 2h) up to the grid image spacing and
    that the images of its edge nodes lie in the shell r - Lip h <= |.| < r.
    """
    n = f.src_dim
    x = _as_point(x, n)
    y = f(x[:, None])[:, 0]
    X = domain.coords()
    FX = f(X)
    dist = np.sqrt(np.sum((FX - y.reshape((-1,) + (1,) * n)) ** 2, axis=0))
    labels, _ = ndimage.label(dist < r)
    h = np.array(domain.spacing)
    node = tuple(np.clip(np.rint((x - np.array(domain.lower)) / h).astype(int), 0,
                         np.array(domain.shape) - 1))
    lab = labels[node]
    if lab == 0:
        raise ValueError("the node nearest x is not in the preimage of the ball")
    comp = labels == lab
    if np.any(comp & domain.boundary_mask()):
        raise ValueError(f"radius {r} too large: component touches the grid boundary")

    fiber = preimage_count(f, y, domain, region)
    inside = []
    for p in fiber.points:
        q = tuple(np.clip(np.rint((p - np.array(domain.lower)) / h).astype(int), 0,
                          np.array(domain.shape) - 1))
        if comp[q]:
            inside.append(p)
    if len(inside) > 1:
        raise ValueError(f"radius {r} too large: component holds {len(inside)} fiber points")

    D = np.moveaxis(f.derivative(X[:, comp]), (0, 1), (-2, -1))
    lip = float(np.max(np.linalg.norm(D, ord=2, axis=(-2, -1))))
    hmax = float(h.max())
    # coverage of the shrunken target ball, sampled on a grid of spacing h
    inner = max(r - 2 * hmax, 0.0)
    m = int(np.ceil(inner / hmax))
    axis = np.arange(-m, m + 1) * hmax
    T = np.array(np.meshgrid(*([axis] * n), indexing="ij")).reshape(n, -1)
    T = T[:, np.sqrt(np.sum(T**2, axis=0)) <= inner] + y[:, None]
    tree = cKDTree(FX[:, comp].T)
    gap, _ = tree.query(T.T) if T.shape[1] else (np.zeros(0), None)
    cover_tol = lip * hmax
    max_gap = float(np.max(gap)) if gap.size else 0.0

    edge = _edge_nodes(comp)
    edge_dist = dist[edge]
    shell_low = r - lip * hmax * (1 + 1e-9)
    shell_ok = bool(np.all(edge_dist >= shell_low) and np.all(edge_dist < r))

    pts = X[:, comp].T
    hull = X[:, edge].T
    diameter = float(pdist(hull).max()) if hull.shape[0] > 1 else 0.0
    checks = {"fiber_points": len(inside), "coverage_gap": max_gap, "coverage_tol": cover_tol,
              "edge_min": float(edge_dist.min()) if edge_dist.size else 0.0,
              "edge_max": float(edge_dist.max()) if edge_dist.size else 0.0,
              "shell_low": shell_low, "nodes": int(pts.shape[0])}
    ok = len(inside) == 1 and max_gap <= cover_tol and shell_ok
    return NormalNeighborhood(x, r, comp, diameter, checks, bool(ok))


# --------------------------------------------------------------------------
# Branch set and multiplicity


@dataclass(frozen=True, eq=False)
class BranchSample:
    mask: np.ndarray
    count: int
    measure: float
    j_tol: float


def branch_set_sample(f, domain: GridDomain) -> BranchSample:
    """Grid nodes with |J_f| < 1e-10 * max |Df|^n and their cell-measure estimate."""
    n = f.src_dim
    D = np.moveaxis(f.derivative(domain.coords()), (0, 1), (-2, -1))
    s = svd_fields(D)
    j_tol = 1e-10 * float(np.max(s.opnorm**n))
    mask = np.abs(s.signed_jac) < j_tol
    count = int(mask.sum())
    return BranchSample(mask, count, count * domain.cell_volume, j_tol)


def _distinct_inside(P: np.ndarray, src: GridDomain, region: Region | None) -> np.ndarray:
    """Number of distinct candidate preimages inside U; P has shape (n, c) + S."""
    c = P.shape[1]
    inside = src.contains(P.reshape(P.shape[0], -1)).reshape(P.shape[1:])
    if region is not None:
        inside &= np.asarray(region(P), dtype=bool)
    tol = 1e-12 * max(1.0, float(np.max(np.abs(P))) if P.size else 1.0)
    count = np.zeros(P.shape[2:])
    for j in range(c):
        new = inside[j].copy()
        for i in range(j):
            new &= np.sqrt(np.sum((P[:, j] - P[:, i]) ** 2, axis=0)) > tol
        count += new
    return count


def multiplicity_field(f, dst: GridDomain, region: Region | None, src: GridDomain,
                       subsamples: int = 4) -> np.ndarray:
    """N(f, y, U) averaged over each target node's dual cell.

    Uses the map's analytic preimages when available; otherwise counts
    fibers with :func:`preimage_count` at the nodes only.
    """
    pre = getattr(f, "preimages", None)
    if pre is not None:
        return cell_average(dst, lambda y: _distinct_inside(pre(y), src, region), subsamples)
    Y = dst.coords().reshape(dst.dim, -1)
    lip = lipschitz_estimate(f, src)
    out = np.array([preimage_count(f, Y[:, i], src, region, lip=lip).count for i in range(Y.shape[1])], float)
    return out.reshape(dst.shape)
