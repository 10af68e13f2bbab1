import warnings
from math import comb

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import cofactor_det
from qrforms.forms import (GridDomain, Mollifier, QuadratureWarning, SampledForm, TestFormFamily, bump,
                           convolve_form, coverage, exterior_derivative_fd, integrate, integrate_top_form,
                           leibniz_residual, lp_norm, read_form_binary, read_form_csv,
                           weak_derivative_residual, weak_derivative_residuals, wedge_norm_bound,
                           wedge_sampled, write_form_binary, write_form_csv)

seeds = st.integers(0, 2**32 - 1)


def unit(samples, n=2):
    return GridDomain.cube(n, 0.0, 1.0, samples)


def smooth(x):
    return np.array([np.sin(2 * x[0]) * np.cos(3 * x[1]), x[0] ** 2 * np.sin(x[1])])


def smooth_d(x):
    return np.array([2 * x[0] * np.sin(x[1]) + 3 * np.sin(2 * x[0]) * np.sin(3 * x[1])])


def step(x):
    return np.array([(x[0] >= 0.5) * 1.0, 0 * x[0]])


def test_grid_validation():
    with pytest.raises(ValueError):
        GridDomain((0.0,), (0.0,), (5,))
    with pytest.raises(ValueError):
        GridDomain((0.0, 0.0), (1.0, 1.0), (5,))
    with pytest.raises(ValueError):
        GridDomain((0.0,), (1.0,), (2,))


def test_grid_geometry():
    d = GridDomain((0.0, -1.0), (1.0, 1.0), (5, 9))
    assert d.spacing == (0.25, 0.25)
    assert d.coords().shape == (2, 5, 9)
    assert abs(d.trapezoid_weights().sum() - 2.0) < 1e-15
    assert d.interior(1).shape == (3, 7)
    assert d.boundary_mask().sum() == 5 * 9 - 3 * 7


def test_sampled_form_validation():
    d = unit(5)
    with pytest.raises(ValueError):
        SampledForm(d, 1, np.zeros((1, 5, 5)))
    with pytest.raises(ValueError):
        SampledForm(d, 3, np.zeros((1, 5, 5)))
    bad = np.zeros((2, 5, 5))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        SampledForm(d, 1, bad)


def test_form_arithmetic():
    d = unit(5)
    a = SampledForm.constant(d, 1, [1.0, 2.0])
    b = SampledForm.constant(d, 1, [0.5, -1.0])
    assert np.allclose((a + b).values[:, 0, 0], [1.5, 1.0])
    assert np.allclose((a - b).values[:, 0, 0], [0.5, 3.0])
    assert np.allclose((2 * a).values[:, 0, 0], [2.0, 4.0])
    assert np.allclose((-a).values[:, 0, 0], [-1.0, -2.0])
    with pytest.raises(ValueError):
        a + SampledForm.constant(unit(7), 1, [1.0, 2.0])


def test_derivative_of_linear_coefficients_is_exact():
    d = unit(33)
    w = SampledForm.from_function(d, 1, lambda x: np.array([x[1], 0 * x[0]]))
    assert np.abs(exterior_derivative_fd(w).values + 1.0).max() < 1e-12


def test_derivative_of_function_is_gradient():
    d = unit(33)
    f = SampledForm.from_function(d, 0, lambda x: (x[0] ** 2 + 3 * x[0] * x[1])[None])
    df = exterior_derivative_fd(f)
    x = d.coords()
    assert np.allclose(df.values, [2 * x[0] + 3 * x[1], 3 * x[0]], atol=1e-12)


@pytest.mark.parametrize("n", [2, 3])
def test_dd_vanishes_to_roundoff(n):
    d = GridDomain.cube(n, 0.0, 1.0, 17)
    rng = np.random.default_rng(0)
    for k in range(n - 1):
        w = SampledForm(d, k, rng.normal(size=(comb(n, k),) + d.shape))
        dd = exterior_derivative_fd(exterior_derivative_fd(w))
        assert np.abs(dd.values).max() < 1e-8 * max(1.0, np.abs(w.values).max()) * 17**2


def test_top_degree_derivative_rejected():
    with pytest.raises(ValueError):
        exterior_derivative_fd(SampledForm.constant(unit(5), 2, [1.0]))


def test_integrals():
    d = unit(257)
    one = SampledForm.constant(d, 2, [1.0])
    assert abs(integrate_top_form(one) - 1.0) < 1e-12
    s = SampledForm.from_function(d, 2, lambda x: (np.sin(np.pi * x[0]) * np.sin(np.pi * x[1]))[None])
    assert abs(integrate_top_form(s) - 4 / np.pi**2) < 1e-4
    w = SampledForm.from_function(d, 1, lambda x: np.array([x[0], 0 * x[0]]))
    assert abs(lp_norm(w, 2) ** 2 - 1 / 3) < 1e-4
    with pytest.raises(ValueError):
        integrate_top_form(w)


def test_empty_mask_warns():
    d = unit(9)
    with warnings.catch_warnings(record=True) as rec:
        warnings.simplefilter("always")
        assert integrate(d, np.ones(d.shape), np.zeros(d.shape, bool)) == 0.0
    assert any(issubclass(r.category, QuadratureWarning) for r in rec)


def test_coverage_of_disk():
    d = GridDomain.cube(2, -1.0, 1.0, 129)
    cov = coverage(d, lambda x: np.sum(x**2, axis=0) < 0.64)
    assert abs(integrate(d, cov) - np.pi * 0.64) < 1e-3


def test_stokes_for_compact_support():
    d = unit(129)
    fam = TestFormFamily.bumps(d, 1, [(0.45, 0.55)], 0.3, seed=1)
    assert abs(integrate_top_form(fam.derivatives[0])) <= 1e-3


def test_test_form_derivatives_match_finite_differences():
    d = unit(257)
    fam = TestFormFamily.bumps(d, 1, [(0.5, 0.5)], 0.3, seed=2)
    fd = exterior_derivative_fd(fam.forms[0]).values
    assert np.abs(fd - fam.derivatives[0].values).max() < 1e-2 * np.abs(fam.derivatives[0].values).max()


def test_test_forms_must_avoid_boundary():
    with pytest.raises(ValueError):
        TestFormFamily.bumps(unit(33), 0, [(0.1, 0.5)], 0.2)
    with pytest.raises(ValueError):
        TestFormFamily.bumps(unit(33), 2, [(0.5, 0.5)], 0.2)


def test_mollifier_unit_mass_and_constant_preserved():
    d = unit(65)
    m = Mollifier(0.1)
    assert abs(m.kernel(d.spacing).sum() - 1.0) < 1e-12
    c = SampledForm.constant(d, 1, [1.5, -0.5])
    out = convolve_form(c, m)
    assert np.abs(out.values - c.values[:, :1, :1]).max() < 1e-10
    assert out.domain == d.interior(m.margin(d.spacing))


def test_mollifier_radius_guard():
    with pytest.raises(ValueError):
        convolve_form(SampledForm.constant(unit(11), 0, [1.0]), Mollifier(0.1))
    with pytest.raises(ValueError):
        Mollifier(0.0)


def test_convolution_commutes_with_d_under_refinement():
    res = []
    for samples in (129, 257):
        d = unit(samples)
        w = SampledForm.from_function(d, 1, smooth)
        dw = SampledForm.from_function(d, 2, smooth_d)
        a = exterior_derivative_fd(convolve_form(w, Mollifier(0.05)))
        b = convolve_form(dw, Mollifier(0.05))
        res.append(np.abs(a.values - b.values).max())
    assert res[0] / res[1] >= 1.5


def test_step_form_convolution_is_closed():
    d = unit(129)
    out = exterior_derivative_fd(convolve_form(SampledForm.from_function(d, 1, step), Mollifier(0.05)))
    assert np.abs(out.values).max() <= 1e-6


def test_weak_derivative_identities():
    d = unit(129)
    T = TestFormFamily.lattice(d, 0, 3, seed=4)
    w = SampledForm.from_function(d, 1, smooth)
    dw = SampledForm.from_function(d, 2, smooth_d)
    assert weak_derivative_residual(w, dw, T) <= 1e-3
    zero = SampledForm.constant(d, 2, [0.0])
    assert weak_derivative_residual(SampledForm.from_function(d, 1, step), zero, T) <= 1e-3
    bad = SampledForm.from_function(d, 2, lambda x: smooth_d(x) + 1.0)
    r = weak_derivative_residuals(w, bad, T)
    mass = np.array([abs(integrate(d, eta.values[0])) for eta in T.forms])
    assert np.all(np.abs(r - mass) <= 1e-3)


def test_weak_derivative_grade_checks():
    d = unit(33)
    T = TestFormFamily.lattice(d, 0, 2)
    w = SampledForm.constant(d, 1, [1.0, 0.0])
    with pytest.raises(ValueError):
        weak_derivative_residual(w, SampledForm.constant(d, 1, [0.0, 0.0]), T)


def test_weak_derivative_three_dimensional():
    d = GridDomain.cube(3, 0.0, 1.0, 41)
    T = TestFormFamily.lattice(d, 1, 2, seed=6)
    w = SampledForm.from_function(d, 1, lambda x: np.array([x[1] * x[2], x[0] ** 2, np.sin(x[0])]))
    # d(yz dx + x^2 dy + sin x dz): dx^dy: 2x - z, dx^dz: cos x - y, dy^dz: 0
    dw = SampledForm.from_function(d, 2, lambda x: np.array([2 * x[0] - x[2], np.cos(x[0]) - x[1], 0 * x[0]]))
    assert weak_derivative_residual(w, dw, T) <= 1e-3


def test_leibniz_rule():
    d = unit(129)
    T = TestFormFamily.lattice(d, 0, 3, seed=5)
    f = SampledForm.from_function(d, 0, lambda x: (x[0] ** 2 * x[1] + x[1])[None])
    df = SampledForm.from_function(d, 1, lambda x: np.array([2 * x[0] * x[1], x[0] ** 2 + 1]))
    w = SampledForm.from_function(d, 1, lambda x: np.array([x[1] ** 2, x[0] * x[1]]))
    dw = SampledForm.from_function(d, 2, lambda x: (-x[1])[None])
    assert leibniz_residual(f, df, w, dw, T) <= 1e-3


@given(seeds)
def test_top_wedge_is_determinant(seed):
    rng = np.random.default_rng(seed)
    d = GridDomain.cube(3, 0.0, 1.0, 3)
    a, b, c = (SampledForm(d, 1, rng.normal(size=(3,) + d.shape)) for _ in range(3))
    top = wedge_sampled(wedge_sampled(a, b), c).values[0]
    for idx in np.ndindex(d.shape):
        M = np.array([a.values[(slice(None),) + idx], b.values[(slice(None),) + idx],
                      c.values[(slice(None),) + idx]])
        assert abs(top[idx] - cofactor_det(M)) < 1e-10


@given(seeds)
def test_wedge_norm_bound(seed):
    rng = np.random.default_rng(seed)
    d = GridDomain.cube(4, 0.0, 1.0, 3)
    for k, kk in ((1, 1), (1, 2), (2, 2)):
        a = SampledForm(d, k, rng.normal(size=(comb(4, k),) + d.shape))
        b = SampledForm(d, kk, rng.normal(size=(comb(4, kk),) + d.shape))
        ratio, C = wedge_norm_bound(a, b)
        assert ratio <= C * (1 + 1e-12)


def test_bump_support():
    t = np.array([0.0, 0.5, 0.999, 1.0, 2.0])
    b = bump(t)
    assert b[0] > 0 and b[2] > 0 and b[3] == 0 and b[4] == 0


@pytest.mark.parametrize("writer,reader", [(write_form_csv, read_form_csv),
                                            (write_form_binary, read_form_binary)])
def test_serialization_round_trip(tmp_path, writer, reader):
    d = GridDomain((0.0, -1.0, 2.0), (1.0, 1.0, 3.0), (3, 4, 5))
    w = SampledForm(d, 2, np.random.default_rng(0).normal(size=(3, 3, 4, 5)))
    path = tmp_path / "form"
    writer(path, w)
    back = reader(path)
    assert back.domain == d and back.grade == 2
    assert np.array_equal(back.values, w.values)
