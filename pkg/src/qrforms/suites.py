"""Named verification suites.

Every check measures one number and compares it with a tolerance, either
``value <= tolerance`` (sense "le", errors and residuals) or
``value >= tolerance`` (sense "ge", refinement ratios and detection
margins). Tolerances can be overridden per check id or per check kind.
"""

from __future__ import annotations

import traceback
from dataclasses import dataclass, field
from math import comb
from typing import Callable

import numpy as np

from . import degree as deg
from . import exterior as ext
from . import forms as fm
from . import linear as lin
from . import manifolds as mf
from . import maps as mp
from .report import Check, VerificationReport, clean, digest
from .rng import Xorshift64Star

SUITES = ("algebra", "linear", "forms", "manifolds", "qr", "degree")

DEFAULT_MAPS = (
    {"name": "identity", "params": {}},
    {"name": "linear", "params": {"A": [[2.0, 0.0], [0.0, 1.0]]}},
    {"name": "winding2d", "params": {"k": 2}},
    {"name": "winding2d", "params": {"k": 3}},
    {"name": "winding2d", "params": {"k": 5}},
    {"name": "winding3d", "params": {"k": 2}},
    {"name": "radial_stretch", "params": {"a": 1.5}},
    {"name": "mobius2d", "params": {"a": 1.0, "b": 0.1, "c": 0.2, "d": 1.0}},
)


@dataclass
class Context:
    resolution: int = 64
    seed: int = 0
    maps: list = field(default_factory=lambda: [dict(m) for m in DEFAULT_MAPS])
    tolerances: dict = field(default_factory=dict)

    def rng(self, salt: int) -> Xorshift64Star:
        return Xorshift64Star((self.seed * 1_000_003 + salt) & ((1 << 64) - 1))


@dataclass(frozen=True)
class CheckSpec:
    check_id: str
    kind: str
    anchor: str
    tolerance: float
    run: Callable[[], tuple[float, dict]]
    inputs: dict = field(default_factory=dict)
    sense: str = "le"


def execute(spec: CheckSpec, ctx: Context) -> Check:
    tol = ctx.tolerances.get(spec.check_id, ctx.tolerances.get(spec.kind, spec.tolerance))
    inputs = {"check": spec.check_id, "seed": ctx.seed, "resolution": ctx.resolution, **spec.inputs}
    try:
        value, measured = spec.run()
        value = float(value)
        ok = value <= tol if spec.sense == "le" else value >= tol
        verdict = "pass" if ok and np.isfinite(value) else "fail"
    except Exception as exc:  # a crashing check is a failed check; the run continues
        value, verdict = float("nan"), "fail"
        measured = {"error": f"{type(exc).__name__}: {exc}",
                    "where": traceback.extract_tb(exc.__traceback__)[-1].name}
    return Check(spec.check_id, spec.kind, spec.anchor, digest(inputs), clean(value), spec.sense,
                 float(tol), verdict, clean(measured))


def run_suites(names, ctx: Context, config_digest: str = "") -> VerificationReport:
    report = VerificationReport(seed=ctx.seed, config_digest=config_digest)
    order = SUITES if "all" in names else [s for s in SUITES if s in names]
    for name in order:
        try:
            specs = BUILDERS[name](ctx)
        except Exception as exc:
            report.add(Check(f"{name}.build", "suite", "suite construction", digest({"suite": name}),
                             "nan", "le", 0.0, "fail", {"error": f"{type(exc).__name__}: {exc}"}))
            continue
        for spec in specs:
            report.add(execute(spec, ctx))
    return report


def _map_label(entry: dict) -> str:
    params = entry.get("params") or {}
    if not params:
        return entry["name"]
    parts = ",".join(f"{k}={params[k]}" for k in sorted(params) if not isinstance(params[k], (dict, list)))
    return f"{entry['name']}[{parts}]" if parts else f"{entry['name']}[{digest(params)[:6]}]"


def _disk(radius: float = 1.0, center=(0.0, 0.0)):
    c = np.asarray(center, dtype=float)

    def region(x):
        return np.sum((x - c.reshape((-1,) + (1,) * (x.ndim - 1))) ** 2, axis=0) < radius**2
    return region


def _annulus(inner: float, outer: float):
    def region(x):
        r2 = np.sum(x**2, axis=0)
        return (r2 > inner**2) & (r2 < outer**2)
    return region


def _ball(n: int, radius: float = 1.0):
    def region(x):
        return np.sum(x**2, axis=0) < radius**2
    return region


def _grid(n: int, lo: float, hi: float, cells: int) -> fm.GridDomain:
    return fm.GridDomain.cube(n, lo, hi, cells + 1)


# --------------------------------------------------------------------------
# algebra


def _random_metric(rng, n):
    A = rng.normal((n, n))
    return ext.Metric(A @ A.T + n * np.eye(n))


def algebra_checks(ctx: Context) -> list[CheckSpec]:
    def basis_cases():
        e = [ext.KVector.basis(3, [i]) for i in range(3)]
        errs = [
            np.abs((e[0] ^ e[1]).coeffs - ext.KVector.basis(3, [0, 1]).coeffs).max(),
            np.abs((e[0] ^ e[0]).coeffs).max(),
            np.abs(((e[0] + e[1]) ^ (e[0] - e[1])).coeffs - (-2) * ext.KVector.basis(3, [0, 1]).coeffs).max(),
        ]
        return max(errs), {"cases": 3}

    def gram_det():
        rng = ctx.rng(11)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(2, 6))
            k = int(rng.integers(1, min(3, n) + 1))
            g = _random_metric(rng, n)
            V, W = rng.normal((k, n)), rng.normal((k, n))
            a = ext.wedge_all([ext.KVector.from_vector(v) for v in V])
            b = ext.wedge_all([ext.KVector.from_vector(w) for w in W])
            direct = np.linalg.det(V @ g.gram @ W.T)
            scale = np.prod([np.sqrt(v @ g.gram @ v) for v in V]) * np.prod([np.sqrt(w @ g.gram @ w) for w in W])
            worst = max(worst, abs(ext.grassmann_inner(a, b, g) - direct) / scale)
        return worst, {"trials": 1000}

    def flat_sharp():
        rng = ctx.rng(12)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(1, 6))
            k = int(rng.integers(0, n + 1))
            g = _random_metric(rng, n)
            v = ext.KVector(n, k, rng.normal(comb(n, k)))
            back = ext.metric_sharp(ext.metric_flat(v, g), g)
            worst = max(worst, float(np.abs(back.coeffs - v.coeffs).max() / max(1.0, np.abs(v.coeffs).max())))
        return worst, {"trials": 100}

    def orthogonalize():
        rng = ctx.rng(13)
        worst = 0.0
        for _ in range(300):
            n = int(rng.integers(2, 7))
            k = int(rng.integers(1, n + 1))
            g = _random_metric(rng, n)
            fs = [ext.KVector.from_vector(v) for v in rng.normal((k, n))]
            out = ext.simple_orthogonalize(fs, g)
            w0, w1 = ext.wedge_all(fs), ext.wedge_all(out.factors)
            rel = np.abs(w0.coeffs - w1.coeffs).max() / max(np.abs(w0.coeffs).max(), 1e-300)
            G = np.array([[ext.grassmann_inner(a, b, g) for b in out.factors] for a in out.factors])
            off = np.abs(G - np.diag(np.diag(G))).max() / max(np.diag(G).max(), 1e-300)
            prod = np.prod([ext.norm(f, g) for f in out.factors])
            had = abs(ext.norm(w1, g) - prod) / max(prod, 1e-300)
            worst = max(worst, rel, off, had)
        return worst, {"trials": 300}

    def hadamard():
        rng = ctx.rng(14)
        worst = 0.0
        for _ in range(1000):
            n = int(rng.integers(1, 6))
            k = int(rng.integers(1, n + 1))
            fs = [ext.KVector.from_vector(v) for v in rng.normal((k, n))]
            prod = np.prod([ext.norm(f) for f in fs])
            worst = max(worst, (ext.norm(ext.wedge_all(fs)) - prod) / prod)
        return max(worst, 0.0), {"trials": 1000}

    def comass_sandwich():
        rng = ctx.rng(15)
        budget = ext.ComassBudget(starts=16, samples=2000, seed=ctx.seed + 1)
        worst, count = 0.0, 0
        for n in range(1, 6):
            for k in range(0, n + 1):
                for _ in range(20):
                    a = ext.KCovector(n, k, rng.normal(comb(n, k)))
                    r = ext.comass_norm(a, budget=budget)
                    full = ext.norm(a)
                    viol = max(r.lower - full, full - comb(n, k) ** 0.5 * r.lower, 0.0) / full
                    if r.certified:
                        viol = max(viol, abs(r.lower - full) / full)
                    worst = max(worst, viol)
                    count += 1
        return worst, {"covectors": count}

    def comass_two_planes():
        a = ext.KCovector.basis(4, [0, 1]) + ext.KCovector.basis(4, [2, 3])
        r = ext.comass_norm(a, budget=ext.ComassBudget(seed=ctx.seed + 2))
        return abs(r.lower - 1.0), {"lower": r.lower, "grassmann_norm": ext.norm(a)}

    def comass_skew_oracle():
        rng = ctx.rng(16)
        budget = ext.ComassBudget(starts=16, samples=2000, seed=ctx.seed + 3)
        worst = 0.0
        for n in (4, 5):
            for _ in range(10):
                c = rng.normal(comb(n, 2))
                S = np.zeros((n, n))
                for v, (i, j) in zip(c, ext.multi_indices(n, 2)):
                    S[i, j], S[j, i] = v, -v
                exact = np.linalg.svd(S, compute_uv=False)[0]
                worst = max(worst, abs(ext.comass_norm(ext.KCovector(n, 2, c), budget=budget).lower - exact) / exact)
        return worst, {"trials": 20}

    return [
        CheckSpec("algebra.wedge_basis", "algebra", "wedge product on basis vectors", 1e-15, basis_cases),
        CheckSpec("algebra.grassmann_gram_det", "algebra", "Grassmann inner product equals Gram determinant",
                  1e-10, gram_det),
        CheckSpec("algebra.flat_sharp_inverse", "algebra", "metric duality isomorphisms are inverse", 1e-12,
                  flat_sharp),
        CheckSpec("algebra.simple_orthogonalize", "algebra",
                  "Gram-Schmidt on simple k-vectors preserves the wedge", 1e-10, orthogonalize),
        CheckSpec("algebra.hadamard_bound", "algebra", "|v1^...^vk| <= prod |vi|", 1e-12, hadamard),
        CheckSpec("algebra.comass_sandwich", "comass", "comass sandwich |a| <= C(n,k)^1/2 |a|_mass",
                  1e-9, comass_sandwich),
        CheckSpec("algebra.comass_two_planes", "comass", "comass of e12 + e34 equals one", 1e-6,
                  comass_two_planes),
        CheckSpec("algebra.comass_skew_oracle", "comass", "comass of a 2-form is its top singular value",
                  1e-6, comass_skew_oracle),
    ]


# --------------------------------------------------------------------------
# linear


def _random_map(rng, n, spd_metrics=True):
    M = rng.normal((n, n))
    if not spd_metrics:
        return lin.FiberLinearMap(M)
    return lin.FiberLinearMap(M, _random_metric(rng, n), _random_metric(rng, n))


def linear_checks(ctx: Context) -> list[CheckSpec]:
    def svd_vs_lapack():
        rng = ctx.rng(21)
        worst = 0.0
        for _ in range(200):
            L = _random_map(rng, int(rng.integers(1, 6)))
            s = lin.svd_analysis(L)
            ref = np.linalg.svd(L.whitened(), compute_uv=False)
            worst = max(worst, float(np.abs(s.singvals - ref).max() / max(ref[0], 1e-300)))
        return worst, {"trials": 200}

    def jac_ineq():
        rng = ctx.rng(22)
        worst = 0.0
        for _ in range(1000):
            r = lin.jacobian_inequalities(lin.svd_analysis(_random_map(rng, int(rng.integers(1, 6)))))
            worst = max(worst, r.lower / r.scale, r.upper / r.scale)
        return max(worst, 0.0), {"trials": 1000}

    def dilatation_identity():
        rng = ctx.rng(23)
        worst, used = 0.0, 0
        while used < 1000:
            L = _random_map(rng, int(rng.integers(2, 6)))
            s = lin.svd_analysis(L)
            if s.signed_jac <= 0:
                continue
            d = lin.dilatation(s)
            worst = max(worst, (d.K_inner - d.K_outer ** (s.dim - 1)) / d.K_outer ** (s.dim - 1))
            used += 1
        return max(worst, 0.0), {"trials": used}

    def pullback_sandwich():
        rng = ctx.rng(24)
        worst = 0.0
        for _ in range(500):
            n = int(rng.integers(1, 6))
            k = int(rng.integers(0, n + 1))
            L = lin.FiberLinearMap(rng.normal((n, n)))
            s = lin.svd_analysis(L)
            a = ext.KCovector(n, k, rng.normal(comb(n, k)))
            pb = ext.norm(lin.pullback_linear(a, L))
            c = comb(n, k) ** 0.5
            lo, hi = s.lmin**k * ext.norm(a) / c, c * s.opnorm**k * ext.norm(a)
            worst = max(worst, (lo - pb) / hi, (pb - hi) / hi)
        return max(worst, 0.0), {"trials": 500}

    def multiplicativity():
        rng = ctx.rng(25)
        worst = 0.0
        for _ in range(200):
            n = int(rng.integers(1, 6))
            A, B = rng.normal((n, n)), rng.normal((n, n))
            dAB = lin.svd_analysis(lin.FiberLinearMap(A @ B)).absdet
            dA = lin.svd_analysis(lin.FiberLinearMap(A)).absdet
            dB = lin.svd_analysis(lin.FiberLinearMap(B)).absdet
            worst = max(worst, abs(dAB - dA * dB) / max(dA * dB, 1e-300))
            k = int(rng.integers(0, n + 1))
            a = ext.KCovector(n, k, rng.normal(comb(n, k)))
            lhs = lin.pullback_linear(a, lin.FiberLinearMap(A @ B))
            rhs = lin.pullback_linear(lin.pullback_linear(a, lin.FiberLinearMap(A)), lin.FiberLinearMap(B))
            worst = max(worst, float(np.abs(lhs.coeffs - rhs.coeffs).max() / max(1.0, np.abs(lhs.coeffs).max())))
        return worst, {"trials": 200}

    return [
        CheckSpec("linear.svd_reference", "linear", "metric-adjusted singular values", 1e-9, svd_vs_lapack),
        CheckSpec("linear.jacobian_inequalities", "linear", "l(L)^n <= |det L| <= |L|^n", 1e-12, jac_ineq),
        CheckSpec("linear.inner_outer_dilatation", "linear", "K_inner <= K_outer^(n-1)", 1e-10,
                  dilatation_identity),
        CheckSpec("linear.pullback_sandwich", "linear", "pointwise pull-back norm sandwich", 1e-9,
                  pullback_sandwich),
        CheckSpec("linear.composition_laws", "linear", "determinant multiplicativity and contravariance",
                  1e-10, multiplicativity),
    ]


# --------------------------------------------------------------------------
# forms


def _smooth_one_form(x):
    return np.array([np.sin(2 * x[0]) * np.cos(3 * x[1]), x[0] ** 2 * np.sin(x[1])])


def _smooth_one_form_d(x):
    return np.array([2 * x[0] * np.sin(x[1]) + 3 * np.sin(2 * x[0]) * np.sin(3 * x[1])])


def forms_checks(ctx: Context) -> list[CheckSpec]:
    R = ctx.resolution

    def unit(cells):
        return _grid(2, 0.0, 1.0, cells)

    def d_linear():
        d = unit(R)
        w = fm.SampledForm.from_function(d, 1, lambda x: np.array([x[1], 0 * x[0]]))
        return float(np.abs(fm.exterior_derivative_fd(w).values + 1.0).max()), {}

    def dd_zero():
        d = unit(R)
        f = fm.SampledForm.from_function(d, 0, lambda x: (np.sin(3 * x[0]) * np.cos(2 * x[1]))[None])
        return float(np.abs(fm.exterior_derivative_fd(fm.exterior_derivative_fd(f)).values).max()), {}

    def sine_integral():
        d = unit(4 * R)
        f = fm.SampledForm.from_function(d, 2, lambda x: (np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]))[None])
        v = fm.integrate_top_form(f)
        return abs(v - 4 / np.pi**2), {"integral": v}

    def stokes():
        d = unit(2 * R)
        fam = fm.TestFormFamily.bumps(d, 1, [(0.45, 0.55)], 0.3, seed=ctx.seed)
        v = fm.integrate_top_form(fam.derivatives[0])
        return abs(v), {"integral": v}

    def lp_norm():
        d = unit(2 * R)
        w = fm.SampledForm.from_function(d, 1, lambda x: np.array([x[0], 0 * x[0]]))
        v = fm.lp_norm(w, 2) ** 2
        return abs(v - 1 / 3), {"norm_squared": v}

    def mollifier_mass():
        d = unit(R)
        K = fm.Mollifier(4 * max(d.spacing)).kernel(d.spacing)
        c = fm.SampledForm.constant(d, 1, [1.5, -0.5])
        out = fm.convolve_form(c, fm.Mollifier(4 * max(d.spacing)))
        return max(abs(K.sum() - 1), float(np.abs(out.values - c.values[:, :1, :1]).max())), {}

    def conv_commutes():
        res = []
        for cells in (2 * R, 4 * R):
            d = unit(cells)
            w = fm.SampledForm.from_function(d, 1, _smooth_one_form)
            dw = fm.SampledForm.from_function(d, 2, _smooth_one_form_d)
            s = fm.Mollifier(0.05)
            a = fm.exterior_derivative_fd(fm.convolve_form(w, s))
            b = fm.convolve_form(dw, s)
            res.append(float(np.abs(a.values - b.values).max()))
        return res[0] / res[1], {"residuals": res, "resolutions": [2 * R, 4 * R]}

    def step_convolution():
        d = unit(2 * R)
        st = fm.SampledForm.from_function(d, 1, lambda x: np.array([(x[0] >= 0.5) * 1.0, 0 * x[0]]))
        out = fm.exterior_derivative_fd(fm.convolve_form(st, fm.Mollifier(0.05)))
        return float(np.abs(out.values).max()), {}

    def weak_smooth():
        d = unit(2 * R)
        T = fm.TestFormFamily.lattice(d, 0, 3, seed=ctx.seed)
        w = fm.SampledForm.from_function(d, 1, _smooth_one_form)
        dw = fm.SampledForm.from_function(d, 2, _smooth_one_form_d)
        return fm.weak_derivative_residual(w, dw, T), {"tests": len(T)}

    def weak_step():
        d = unit(2 * R)
        T = fm.TestFormFamily.lattice(d, 0, 3, seed=ctx.seed)
        st = fm.SampledForm.from_function(d, 1, lambda x: np.array([(x[0] >= 0.5) * 1.0, 0 * x[0]]))
        return fm.weak_derivative_residual(st, fm.SampledForm.constant(d, 2, [0.0]), T), {}

    def wrong_tau():
        d = unit(2 * R)
        T = fm.TestFormFamily.lattice(d, 0, 3, seed=ctx.seed)
        w = fm.SampledForm.from_function(d, 1, _smooth_one_form)
        bad = fm.SampledForm.from_function(d, 2, lambda x: _smooth_one_form_d(x) + 1.0)
        res = fm.weak_derivative_residuals(w, bad, T)
        mass = np.array([abs(fm.integrate(d, eta.values[0])) for eta in T.forms])
        i = int(np.argmax(mass))
        return res[i] / mass[i], {"residual": res[i], "eta_mass": mass[i]}

    def leibniz():
        d = unit(2 * R)
        T = fm.TestFormFamily.lattice(d, 0, 3, seed=ctx.seed)
        f0 = fm.SampledForm.from_function(d, 0, lambda x: (x[0] ** 2 * x[1] + x[1])[None])
        df0 = fm.SampledForm.from_function(d, 1, lambda x: np.array([2 * x[0] * x[1], x[0] ** 2 + 1]))
        w = fm.SampledForm.from_function(d, 1, lambda x: np.array([x[1] ** 2, x[0] * x[1]]))
        dw = fm.SampledForm.from_function(d, 2, lambda x: (x[1] - 2 * x[1])[None])
        return fm.leibniz_residual(f0, df0, w, dw, T), {}

    def wedge_bound():
        rng = ctx.rng(31)
        d = _grid(4, 0.0, 1.0, 4)
        worst = 0.0
        for k, kk in ((1, 1), (1, 2), (2, 2), (1, 3)):
            a = fm.SampledForm(d, k, rng.normal((comb(4, k),) + d.shape))
            b = fm.SampledForm(d, kk, rng.normal((comb(4, kk),) + d.shape))
            ratio, C = fm.wedge_norm_bound(a, b)
            worst = max(worst, ratio / C)
        return worst, {}

    def top_wedge_oracle():
        rng = ctx.rng(32)
        d = _grid(2, 0.0, 1.0, 8)
        a = fm.SampledForm(d, 1, rng.normal((2,) + d.shape))
        b = fm.SampledForm(d, 1, rng.normal((2,) + d.shape))
        det = a.values[0] * b.values[1] - a.values[1] * b.values[0]
        return float(np.abs(fm.wedge_sampled(a, b).values[0] - det).max()), {}

    return [
        CheckSpec("forms.d_linear_exact", "derivative", "finite differences exact on linear coefficients",
                  1e-12, d_linear),
        CheckSpec("forms.dd_zero", "derivative", "d(d f) = 0 for sampled f", 1e-8, dd_zero),
        CheckSpec("forms.quadrature_sine", "quadrature", "trapezoid integral of sin(pi x) sin(pi y)", 1e-4,
                  sine_integral),
        CheckSpec("forms.stokes_compact", "quadrature", "integral of d(eta) vanishes for compact support",
                  1e-3, stokes),
        CheckSpec("forms.lp_norm_closed_form", "quadrature", "L2 norm of x dx", 1e-4, lp_norm),
        CheckSpec("forms.mollifier_unit_mass", "convolution", "mollifier has unit mass", 1e-10,
                  mollifier_mass),
        CheckSpec("forms.convolution_commutes", "convolution", "d(w * s) = (dw) * s refinement ratio", 1.5,
                  conv_commutes, sense="ge"),
        CheckSpec("forms.step_convolution", "convolution", "weak differential of a step form vanishes",
                  1e-6, step_convolution),
        CheckSpec("forms.weak_smooth", "quadrature", "weak derivative identity for smooth forms", 1e-3,
                  weak_smooth),
        CheckSpec("forms.weak_step", "quadrature", "step form has weak differential zero", 1e-3, weak_step),
        CheckSpec("forms.weak_detects_error", "quadrature", "wrong weak differential is detected", 0.1,
                  wrong_tau, sense="ge"),
        CheckSpec("forms.leibniz", "quadrature", "weak Leibniz rule", 1e-3, leibniz),
        CheckSpec("forms.wedge_norm_bound", "algebra", "|w ^ w'| <= C |w||w'| nodewise", 1.0 + 1e-12,
                  wedge_bound),
        CheckSpec("forms.top_wedge_determinant", "algebra", "top-degree wedge is a determinant", 1e-12,
                  top_wedge_oracle),
    ]


# --------------------------------------------------------------------------
# manifolds


def manifolds_checks(ctx: Context) -> list[CheckSpec]:
    chart_res = max(4 * ctx.resolution, 64)

    def sphere_area():
        v = mf.riemannian_integral(mf.sphere_atlas(), lambda p: np.ones(p.shape[1:]), chart_res)
        return abs(v - 4 * np.pi), {"area": v}

    def hemisphere():
        v = mf.riemannian_integral(mf.sphere_atlas(), lambda p: 0.5 * (1 + np.tanh(p[2] / 0.1)), chart_res)
        return abs(v - 2 * np.pi), {"integral": v}

    def atlas_independence():
        f = lambda p: np.exp(p[0]) * (1 + p[1] * p[2])  # noqa: E731
        a = mf.riemannian_integral(mf.sphere_atlas(2.0), f, chart_res)
        b = mf.riemannian_integral(mf.sphere_atlas(2.5), f, chart_res)
        return abs(a - b), {"values": [a, b]}

    def torus_area():
        v = mf.riemannian_integral(mf.torus_atlas(), lambda p: np.ones(p.shape[1:]), chart_res)
        return abs(v - 1.0), {"area": v}

    def partition():
        reps = [mf.partition_check(mf.sphere_atlas()), mf.partition_check(mf.torus_atlas())]
        return max(r.max_deviation + r.uncovered for r in reps), {}

    def exp_curve():
        curve = mf.exp_chart_curve()
        radii = sorted(curve)
        mono = all(curve[a] <= curve[b] for a, b in zip(radii, radii[1:]))
        closed = max(abs(curve[r] - r / np.sin(r)) for r in radii)
        gap = 0.0 if mono else 1.0
        return max(closed, gap, curve[0.01] - 1.0001 if curve[0.01] > 1.0001 else 0.0), \
            {"curve": {str(k): v for k, v in curve.items()}, "monotone": mono}

    def cap_constant():
        worst = 0.0
        for rho in (0.5, 1.0, 1.5, 2.5):
            est = mf.bilipschitz_constant_estimate(mf.stereographic_chart("S", rho))
            worst = max(worst, abs(est - max(2.0, (1 + rho**2) / 2)))
        return worst, {}

    def linear_chart_constant():
        return abs(mf.bilipschitz_constant_estimate(mf.linear_chart(np.diag([2.0, 1.0]))) - 2.0), {}

    def sphere_transitions():
        rep = mf.transition_check(mf.sphere_atlas(), resolution=chart_res)
        return max(rep.max_roundtrip, rep.max_integral_gap, 0.0 if rep.min_jacobian > 0 else 1.0), \
            {"min_jacobian": rep.min_jacobian, "roundtrip": rep.max_roundtrip, "integral_gap": rep.max_integral_gap}

    def torus_transitions():
        rep = mf.transition_check(mf.torus_atlas(), resolution=chart_res)
        return max(rep.max_roundtrip, rep.max_integral_gap, abs(rep.min_jacobian - 1.0)), \
            {"min_jacobian": rep.min_jacobian}

    def orientation_detected():
        rep = mf.transition_check(mf.sphere_atlas(reflect=False), resolution=64)
        # an unreflected atlas must be reported as inconsistent
        return (0.0 if not rep.orientation_consistent else 1.0), {"min_jacobian": rep.min_jacobian}

    def small_radius():
        worst = 0.0
        for L in (1.01, 1.1, 1.5, 2.0):
            r = mf.radius_for_bilipschitz(L)
            worst = max(worst, mf.bilipschitz_constant_estimate(mf.exp_chart(radius=r)) - L)
        return max(worst, 0.0), {}

    return [
        CheckSpec("manifolds.sphere_area", "quadrature", "area of the unit sphere via partition of unity", 1e-3,
                  sphere_area),
        CheckSpec("manifolds.hemisphere", "quadrature", "smoothed hemisphere indicator", 1e-2, hemisphere),
        CheckSpec("manifolds.atlas_independence", "quadrature", "integral independent of the atlas", 1e-3,
                  atlas_independence),
        CheckSpec("manifolds.torus_area", "quadrature", "area of the flat torus", 1e-6, torus_area),
        CheckSpec("manifolds.partition_of_unity", "manifold", "normalized bumps sum to one", 1e-8, partition),
        CheckSpec("manifolds.exp_chart_curve", "manifold", "normal-coordinate chart constant r / sin r", 1e-4,
                  exp_curve),
        CheckSpec("manifolds.stereographic_cap", "manifold", "conformal factor extremes on a polar cap", 1e-4,
                  cap_constant),
        CheckSpec("manifolds.linear_chart", "manifold", "bilipschitz constant of a linear chart", 1e-12,
                  linear_chart_constant),
        CheckSpec("manifolds.sphere_transitions", "manifold", "sphere transition maps", 1e-4,
                  sphere_transitions),
        CheckSpec("manifolds.torus_transitions", "manifold", "torus transition maps", 1e-6, torus_transitions),
        CheckSpec("manifolds.orientation_reported", "manifold", "inconsistent orientation is reported", 0.0,
                  orientation_detected),
        CheckSpec("manifolds.small_charts_exist", "manifold", "charts with constant below any L > 1", 1e-9,
                  small_radius),
    ]


# --------------------------------------------------------------------------
# qr


def expected_dilatation(f: mp.DifferentiableMap) -> float | None:
    n, p = f.src_dim, f.params
    if f.name == "identity":
        return 1.0
    if f.name.startswith("winding2d"):
        return float(p["k"])
    if f.name.startswith("winding3d"):
        return float(p["k"]) ** 2
    if f.name.startswith("radial_stretch"):
        a = p["a"]
        return a ** (n - 1) if a >= 1 else 1.0 / a
    if f.name == "mobius2d":
        return 1.0
    if f.name == "linear":
        A = np.array(p["A"], dtype=float)
        det = np.linalg.det(A)
        return float(np.linalg.norm(A, 2) ** n / det) if det > 0 else float("inf")
    return None


def _poly_form(n: int, k: int):
    """A fixed polynomial k-form on R^n used for pointwise pull-back checks."""
    def form(y):
        base = [1.0 + 0 * y[0], y[0], y[1] * y[0] + 0.5, y[-1] ** 2 - y[0]]
        return np.array([base[i % 4] for i in range(comb(n, k))])
    return form


def qr_checks(ctx: Context) -> list[CheckSpec]:
    specs = []
    R = ctx.resolution
    for entry in ctx.maps:
        f = mp.map_library(entry["name"], entry.get("params"))
        label = _map_label(entry)
        n = f.src_dim
        inputs = {"map": entry}
        cells = R if n == 2 else max(R // 2, 8)
        src = _grid(n, -1.0, 1.0, cells)
        region = _ball(n)

        def derivative_check(f=f, n=n):
            rng = ctx.rng(41)
            pts = rng.uniform((n, 100), -0.9, 0.9)
            pts = pts[:, np.sqrt(np.sum(pts[:2] ** 2, axis=0)) > 0.05]
            r = f.check_derivative(pts)
            return r.max_error / r.tolerance, {"max_error": r.max_error, "tolerance": r.tolerance}

        specs.append(CheckSpec(f"qr.{label}.derivative", "derivative",
                               "analytic derivative matches centered differences", 1.0, derivative_check,
                               inputs))

        expected = expected_dilatation(f)

        def dil(f=f, src=src, region=region, expected=expected):
            field = mp.dilatation_field(f, src, region)
            v = field.verdict
            err = max(v.inequality_violations.values()) if v.inequality_violations else float("inf")
            if expected is not None:
                err = max(err, abs(v.K_hat - expected))
            if not v.passed:
                err = float("inf")
            return err, {"K_hat": v.K_hat, "expected": expected, "orientation_ok": v.orientation_ok,
                         "sobolev_proxy": v.sobolev_proxy, "excluded_nodes": v.excluded_nodes,
                         "inequality_violations": v.inequality_violations}

        specs.append(CheckSpec(f"qr.{label}.dilatation", "dilatation",
                               "pointwise dilatation |Df|^n <= K J_f and its companion inequalities",
                               1e-6, dil, inputs))

        for k in range(1, n + 1):
            def pointwise(f=f, src=src, n=n, k=k):
                return mp.pointwise_pullback_bounds(f, _poly_form(n, k), src, grade=k), {}

            specs.append(CheckSpec(f"qr.{label}.pullback_pointwise_k{k}", "pullback",
                                   "pointwise pull-back sandwich with singular values", 1e-8, pointwise, inputs))

        def volume(f=f, src=src):
            return mp.volume_pullback_residual(f, src), {}

        specs.append(CheckSpec(f"qr.{label}.volume_pullback", "pullback", "f^* vol = J_f vol", 1e-10, volume,
                               inputs))

        def positivity(f=f, n=n):
            fr = []
            for c in (cells // 2, cells, 2 * cells):
                b = deg.branch_set_sample(f, _grid(n, -1.0, 1.0, max(c, 4)))
                fr.append(b.count / float(np.prod(b.mask.shape)))
            ok = fr[-1] <= fr[0] and (fr[-1] < fr[0] or fr[0] == 0)
            return (0.0 if ok else 1.0), {"degenerate_fractions": fr}

        specs.append(CheckSpec(f"qr.{label}.jacobian_positive_ae", "dilatation",
                               "degenerate Jacobian nodes vanish under refinement", 0.0, positivity, inputs))

        if n == 2 and f.preimages is not None and f.is_proper:
            def cov(f=f):
                src2 = _grid(2, -1.25, 1.25, 4 * R)
                lim = float(np.max(np.abs(f(src2.coords()[:, np.hypot(*src2.coords()) <= 1.0])))) * 1.05
                dst2 = _grid(2, -lim, lim, 4 * R)
                one = mp.change_of_variables_check(f, lambda y: np.ones(y.shape[1:]), src2, _disk(), dst2)
                signed = mp.change_of_variables_check(f, lambda y: y[0] + 0.25 * y[1] ** 2, src2, _disk(), dst2)
                return max(one.residual, signed.residual), {
                    "jacobian_integral": one.jacobian_integral, "lhs": one.lhs, "rhs": one.rhs,
                    "signed_lhs": signed.lhs, "signed_rhs": signed.rhs}

            specs.append(CheckSpec(f"qr.{label}.change_of_variables", "quadrature",
                                   "int (g o f) J_f = int N(f, y, E) g(y) dy", 1e-2, cov, inputs))

            def lp(f=f):
                src2 = _grid(2, -1.0, 1.0, 2 * R)
                lim = float(np.max(np.abs(f(src2.coords()[:, np.hypot(*src2.coords()) < 0.95])))) * 1.05
                w = fm.SampledForm.constant(_grid(2, -lim, lim, 2 * R), 1, [1.0, 0.0])
                r = mp.pullback_lp_check(f, w, src2, _annulus(0.3, 0.9))
                lo_margin = r.ratio / r.lower_constant
                hi_margin = r.upper_constant / r.ratio
                return min(lo_margin, hi_margin), {"ratio": r.ratio, "lower": r.lower_constant,
                                                   "upper": r.upper_constant, "K": r.K, "proper": r.proper}

            specs.append(CheckSpec(f"qr.{label}.lp_conformal_band", "pullback",
                                   "conformal-exponent L^p band for pull-backs", 1 / 1.02, lp, inputs, "ge"))

        if n == 2:
            def commutation(f=f):
                res = []
                for cells2 in (2 * R, 4 * R):
                    s = _grid(2, -1.0, 1.0, cells2)
                    img = f(s.coords())
                    lim = float(np.max(np.abs(img))) * 1.01 + 1e-9
                    d = fm.GridDomain.cube(2, -lim, lim, cells2 + 1)
                    w = fm.SampledForm.from_function(d, 1, lambda y: np.array([y[1] ** 2 + y[0] * y[1],
                                                                               y[0] ** 2 * y[1] - y[0]]))
                    dw = fm.exterior_derivative_fd(w)
                    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
                    T = fm.TestFormFamily.bumps(s, 0, [0.6 * np.array([np.cos(a), np.sin(a)]) for a in ang],
                                                0.25, seed=ctx.seed)
                    res.append(mp.pullback_commutation_residual(f, w, dw, s, T))
                ratio = res[0] / res[1] if res[1] > 0 else float("inf")
                # residual at the coarse grid must be small and must shrink at least 1.5x
                return max(res[0] / 1e-2, 1.5 / ratio), {"residuals": res, "ratio": ratio}

            specs.append(CheckSpec(f"qr.{label}.pullback_commutes_with_d", "pullback",
                                   "weak d f^* w = f^* dw on an annulus", 1.0, commutation, inputs))

            def colocal(f=f):
                rng = ctx.rng(42)
                pts = rng.uniform((2, 100), -0.9, 0.9)
                pts = pts[:, np.hypot(pts[0], pts[1]) > 0.05]
                funcs = mp.bump_functionals([(0.3, 0.2), (-0.4, 0.1), (0.0, -0.5)], 0.6)
                return mp.colocal_check(f, funcs, pts), {}

            specs.append(CheckSpec(f"qr.{label}.colocal", "derivative", "D(u o f) = Du Df for test functionals",
                                   1e-6, colocal, inputs))

            def lusin(f=f):
                r = mp.lusin_surrogate(f, _grid(2, -1.0, 1.0, R), _grid(2, -3.0, 3.0, 2 * R), seed=ctx.seed)
                return (0.0 if r.ok else 1.0), {"measures": r.measures, "image_measures": r.image_measures,
                                                "sup_jacobian": r.sup_jacobian}

            specs.append(CheckSpec(f"qr.{label}.lusin_monotone", "measure", "image measures of nested sets",
                                   0.0, lusin, inputs))

    specs.extend(_chart_definition_checks(ctx))
    specs.extend(_composition_checks(ctx))
    return specs


def _chart_definition_checks(ctx: Context) -> list[CheckSpec]:
    def sphere_identity():
        c = (0.0, 0.0, 1.0)
        v = mp.chart_definition_verdict(mp.identity_map(3), mf.exp_chart(c, 0.01), mf.exp_chart(c, 0.02),
                                        1.01, K_map=1.0)
        return (0.0 if v.passed and v.consistent else 1.0), clean(v.__dict__)

    def winding_identity_charts():
        v = mp.chart_definition_verdict(mp.winding2d(2), mf.linear_chart(np.eye(2), name="id"),
                                        mf.linear_chart(np.eye(2), (-2, -2), (2, 2), name="id"), 2.0)
        return (0.0 if v.passed and v.consistent else 1.0), clean(v.__dict__)

    def linear_similarity():
        f = mp.linear_map(np.diag([2.0, 1.0]))
        v = mp.chart_definition_verdict(f, mf.linear_chart(np.diag([2.0, 1.0]), (-2, -1), (2, 1)),
                                        mf.linear_chart(np.eye(2), (-3, -3), (3, 3), name="id"), 1.0)
        alone = mp.dilatation_field(f, _grid(2, -1, 1, 16)).verdict.K_hat
        ok = v.passed and v.consistent and abs(alone - 2.0) < 1e-12
        return (0.0 if ok else 1.0), {**clean(v.__dict__), "K_without_charts": alone}

    def bilipschitz_sweep():
        # for each target L, normal-coordinate charts with constant <= L make the
        # identity of the sphere pass at K' = L^(4n)
        worst = 0.0
        rows = {}
        for L in (1.01, 1.1, 1.5, 2.0):
            r = min(mf.radius_for_bilipschitz(L), 1.2)
            c = np.array([0.0, 0.6, 0.8])
            phi = mf.exp_chart(c, r / 2)
            psi = mf.exp_chart(c, r)
            v = mp.chart_definition_verdict(mp.identity_map(3), phi, psi, L ** 8, K_map=1.0)
            rows[str(L)] = {"K": v.K_conjugate, "L_phi": v.L_phi, "L_psi": v.L_psi}
            worst = max(worst, 0.0 if (v.passed and v.consistent and max(v.L_phi, v.L_psi) <= L * (1 + 1e-9)) else 1.0)
        return worst, rows

    def chain_rule():
        t = 0.2
        rot = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(t), -np.sin(t)], [0.0, np.sin(t), np.cos(t)]])
        f = mp.linear_map(rot)
        phi = mf.exp_chart((0.0, 0.6, 0.8), 0.3)
        psi = mf.exp_chart((0.0, 0.6, 0.8), 0.6)
        g = mp.chart_conjugate(f, phi, psi)
        u = phi.sample_coords(100, seed=ctx.seed)
        p = phi.inverse(u)
        direct = np.einsum("ij...,jk...,kl...->il...", psi.forward_jacobian(f(p)), f.derivative(p),
                           phi.inverse_jacobian(u))
        err = float(np.max(np.abs(g.derivative(u) - direct)))
        fd = float(np.max(np.abs(g.fd_derivative(u) - direct)))
        return err, {"finite_difference_gap": fd}

    return [
        CheckSpec("qr.chart_definition.chain_rule", "derivative",
                  "D(psi o f o phi^-1) = Dpsi Df Dphi^-1", 1e-8, chain_rule),
        CheckSpec("qr.chart_definition.sphere_identity", "chart", "identity in near-isometric normal charts",
                  0.0, sphere_identity),
        CheckSpec("qr.chart_definition.winding_identity_charts", "chart", "winding map in identity charts",
                  0.0, winding_identity_charts),
        CheckSpec("qr.chart_definition.linear_similarity", "chart", "charts can remove linear distortion",
                  0.0, linear_similarity),
        CheckSpec("qr.chart_definition.bilipschitz_sweep", "chart", "chart verdicts for L in {1.01,1.1,1.5,2}",
                  0.0, bilipschitz_sweep),
    ]


def _bump_function(radius):
    def u(y):
        return fm.bump(np.sqrt(np.sum(y**2, axis=0)) / radius)

    def grad(y):
        r = np.sqrt(np.sum(y**2, axis=0)) / radius
        return fm.bump(r) * fm.bump_derivative_factor(r) * y / radius**2
    return u, grad


def _composition_checks(ctx: Context) -> list[CheckSpec]:
    R = ctx.resolution
    u, gu = _bump_function(0.8)

    def identity():
        g = _grid(2, -1.0, 1.0, 2 * R)
        r = mp.composition_constant_check(u, gu, mp.identity_map(), g, 2, dst=g)
        return abs(r.ratio - 1.0), {"ratio": r.ratio}

    def linear():
        r = mp.composition_constant_check(u, gu, mp.linear_map(np.diag([2.0, 1.0])), _grid(2, -1.0, 1.0, 2 * R),
                                          2, dst=_grid(2, -2.0, 2.0, 4 * R))
        return r.ratio / r.bound, {"ratio": r.ratio, "bound": r.bound, "L": r.L}

    def sphere_chart():
        ch = mf.exp_chart((0.0, 0.0, 1.0), 0.3)

        def us(p):
            return fm.bump(np.arccos(np.clip(p[2], -1, 1)) / 0.25)

        def gus(p):
            th = np.arccos(np.clip(p[2], -1, 1))
            b = fm.bump(th / 0.25) * fm.bump_derivative_factor(th / 0.25) * th / 0.0625
            with np.errstate(divide="ignore", invalid="ignore"):
                dth = np.where(th > 0, -1.0 / np.sin(np.maximum(th, 1e-300)), 0.0)
            return np.array([0 * th, 0 * th, b * dth])

        r = mp.composition_constant_check(us, gus, ch.inverse_map(), ch.grid(2 * R + 1), 2)
        return r.ratio / r.bound, {"ratio": r.ratio, "bound": r.bound, "L": r.L}

    return [
        CheckSpec("qr.composition.identity", "sobolev", "||u o h||_{1,p} for h = identity", 1e-12, identity),
        CheckSpec("qr.composition.linear", "sobolev", "||u o h||_{1,p} <= L^(1+n/p) ||u||_{1,p}", 1.05, linear),
        CheckSpec("qr.composition.sphere_chart", "sobolev", "composition with a near-isometric chart", 1.05,
                  sphere_chart),
    ]


# --------------------------------------------------------------------------
# degree


def degree_checks(ctx: Context) -> list[CheckSpec]:
    specs = []
    R = ctx.resolution
    dom = _grid(2, -1.25, 1.25, 2 * R)
    for entry in ctx.maps:
        f = mp.map_library(entry["name"], entry.get("params"))
        if not (f.is_proper and f.known_degree and f.src_dim in (2, 3)):
            continue
        label = _map_label(entry)
        inputs = {"map": entry}
        planar = f if f.src_dim == 2 else f.planar_factor
        if planar is None:
            continue

        def fibers(f=f, planar=planar):
            ang = (0.3, 2.1, 4.0)
            ys = [(0.0, 0.0)] + [(0.6 * np.cos(a), 0.6 * np.sin(a)) for a in ang]
            rep = deg.degree_sum_check(planar, ys, dom, _disk())
            bad = 0 if (rep.consistent and rep.generic_match and rep.degree == f.known_degree) else 1
            return float(bad + len(rep.excluded)), {"degree": rep.degree, "fibers": rep.fibers}

        specs.append(CheckSpec(f"degree.{label}.degree_sum", "degree",
                               "deg f = sum of local indices over every fiber", 0.0, fibers, inputs))

        def branch_index(f=f, planar=planar):
            r = deg.local_index_record(planar, (0.0, 0.0))
            expected = f.known_degree if f.branch_locus else 1
            return (abs(r.index - expected) + r.rounding_residual), {"index": r.index, "winding": r.winding}

        specs.append(CheckSpec(f"degree.{label}.index_at_origin", "degree",
                               "argument-principle index at the origin", 0.1, branch_index, inputs))

        def index_off_branch(planar=planar):
            worst = 0.0
            for x in ((0.4, 0.1), (-0.3, 0.5), (0.2, -0.7)):
                r = deg.local_index_record(planar, x)
                worst = max(worst, abs(r.index - 1) + r.rounding_residual)
            return worst, {}

        specs.append(CheckSpec(f"degree.{label}.index_off_branch", "degree",
                               "index one away from the branch set", 0.1, index_off_branch, inputs))

        def branch_measure(f=f):
            ms = []
            for cells in (R, 2 * R, 4 * R):
                n = f.src_dim
                b = deg.branch_set_sample(f, _grid(n, -1.0, 1.0, cells if n == 2 else max(cells // 4, 8)))
                h = 2.0 / (cells if n == 2 else max(cells // 4, 8))
                bound = 4 * h**2 if n == 2 else 2.2 * h**2
                ms.append((b.measure, bound))
            within = max(m / b for m, b in ms)
            decays = all(a[0] >= b[0] for a, b in zip(ms, ms[1:]))
            return (within if decays else float("inf")), {"measures": [m for m, _ in ms]}

        specs.append(CheckSpec(f"degree.{label}.branch_measure", "degree",
                               "branch set measure below C h^2 and decaying", 1.0, branch_measure, inputs))

    def normal_nbhd():
        f = mp.winding2d(2)
        d = _grid(2, -0.5, 0.5, max(4 * R, 256))
        rows, worst = {}, 0.0
        diam = []
        for r in (0.3, 0.2, 0.1, 0.05):
            nn = deg.normal_neighborhood(f, (0.0, 0.0), r, d)
            rows[str(r)] = {"ok": nn.ok, "diameter": nn.diameter, **nn.checks}
            worst = max(worst, 0.0 if nn.ok else 1.0)
            diam.append(nn.diameter)
        strictly = all(a > b for a, b in zip(diam, diam[1:]))
        return (worst if strictly else 1.0), rows

    def normal_too_large():
        f = mp.winding2d(2)
        d = _grid(2, -1.25, 1.25, 2 * R)
        try:
            deg.normal_neighborhood(f, (0.3, 0.0), 0.5, d)
        except ValueError as exc:
            return 0.0, {"message": str(exc)}
        return 1.0, {}

    def multiplicity_grid():
        f = mp.winding2d(2)
        src = _grid(2, -1.25, 1.25, 2 * R)
        t = np.linspace(-0.9, 0.9, 64)
        h = t[1] - t[0]
        wrong, stable = 0, 0
        lip = deg.lipschitz_estimate(f, src)
        for a in t:
            for b in t:
                fib = deg.preimage_count(f, (a, b), src, _disk(), lip=lip)
                if fib.unstable:
                    continue
                critical = abs(a) <= h and abs(b) <= h
                inside = a * a + b * b < 1.0
                expected = 2 if inside else 0
                stable += 1
                if not critical and fib.count != expected:
                    wrong += 1
        return float(wrong), {"stable_targets": stable}

    def winding3d_axis():
        f = mp.winding3d(3)
        b = deg.branch_set_sample(f, _grid(3, -1.0, 1.0, 16))
        X = _grid(3, -1.0, 1.0, 16).coords()
        on_axis = (np.abs(X[0]) < 1e-12) & (np.abs(X[1]) < 1e-12)
        return float(np.sum(b.mask != on_axis)), {"count": b.count}

    specs += [
        CheckSpec("degree.normal_neighborhood", "degree", "normal neighborhoods shrink with r", 0.0, normal_nbhd),
        CheckSpec("degree.normal_neighborhood_rejects", "degree", "oversized ball captures two fiber points",
                  0.0, normal_too_large),
        CheckSpec("degree.multiplicity_constant", "degree", "N(f, y) = deg off the critical values", 0.0,
                  multiplicity_grid),
        CheckSpec("degree.winding3d_branch_axis", "degree", "branch set of the 3D winding map is the axis",
                  0.0, winding3d_axis),
    ]
    return specs


BUILDERS = {
    "algebra": algebra_checks,
    "linear": linear_checks,
    "forms": forms_checks,
    "manifolds": manifolds_checks,
    "qr": qr_checks,
    "degree": degree_checks,
}
