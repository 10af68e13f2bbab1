from math import comb, sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from oracles import cofactor_det, pullback_by_evaluation, singular_values
from qrforms.exterior import KCovector, Metric, norm
from qrforms.linear import (FiberLinearMap, dilatation, dilatation_arrays, jacobi_singular_values,
                            jacobian_inequalities, pullback_linear, svd_analysis, svd_fields)

seeds = st.integers(0, 2**32 - 1)


def test_diagonal_map():
    s = svd_analysis(FiberLinearMap(np.diag([3.0, 1.0])))
    assert np.allclose(s.singvals, [3.0, 1.0])
    assert s.opnorm == 3.0 and s.lmin == 1.0 and s.signed_jac == 3.0
    d = dilatation(s)
    assert d.K_outer == 3.0 and d.K_inner == 3.0


def test_rotation_is_isometric():
    t = 0.7
    s = svd_analysis(FiberLinearMap([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]]))
    assert np.allclose(s.singvals, [1.0, 1.0], atol=1e-15)


def test_orientation_signs():
    L = FiberLinearMap(np.diag([2.0, 1.0]), src_orientation=-1)
    assert svd_analysis(L).signed_jac == -2.0
    assert dilatation(svd_analysis(L)).K_outer == np.inf
    with pytest.raises(ValueError):
        FiberLinearMap(np.eye(2), src_orientation=0)


def test_singular_map():
    s = svd_analysis(FiberLinearMap([[1.0, 0.0], [0.0, 0.0]]))
    assert s.lmin == 0.0 and s.absdet == 0.0
    assert dilatation(s).undefined


def test_input_validation():
    with pytest.raises(ValueError):
        FiberLinearMap(np.ones((2, 3)))
    with pytest.raises(ValueError):
        FiberLinearMap([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(ValueError):
        FiberLinearMap(np.eye(2), src_metric=Metric.identity(3))


@given(st.integers(1, 5), seeds)
def test_singular_values_against_jacobi_eigen_oracle(n, seed):
    rng = np.random.default_rng(seed)
    M, Gs, Gd = rng.normal(size=(n, n)), random_spd(rng, n), random_spd(rng, n)
    s = svd_analysis(FiberLinearMap(M, Metric(Gs), Metric(Gd)))
    ref = singular_values(M, Gs, Gd)
    assert np.allclose(s.singvals, ref, rtol=1e-9, atol=1e-9 * ref[0])


@given(st.integers(1, 5), seeds)
def test_signed_jacobian_matches_cofactor_determinant(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    s = svd_analysis(FiberLinearMap(M))
    det = cofactor_det(M)
    assert abs(s.signed_jac - det) <= 1e-10 * max(1.0, abs(det))


def test_batched_hestenes_matches_lapack(rng):
    A = rng.normal(size=(50, 4, 4))
    assert np.allclose(jacobi_singular_values(A), np.linalg.svd(A, compute_uv=False), atol=1e-13)


def test_svd_fields_batch_with_metrics(rng):
    M = rng.normal(size=(6, 3, 3))
    G = random_spd(rng, 3)
    s = svd_fields(M, G, G)
    for i in range(6):
        one = svd_analysis(FiberLinearMap(M[i], Metric(G), Metric(G)))
        assert np.allclose(s.singvals[i], one.singvals)
        assert np.isclose(s.signed_jac[i], one.signed_jac)


@given(st.integers(1, 5), seeds)
def test_jacobian_inequalities(n, seed):
    rng = np.random.default_rng(seed)
    r = jacobian_inequalities(svd_analysis(FiberLinearMap(rng.normal(size=(n, n)))))
    assert r.ok
    assert r.lower <= 1e-12 * r.scale and r.upper <= 1e-12 * r.scale


@given(st.integers(2, 5), seeds)
def test_inner_dilatation_bounded_by_outer_power(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    if np.linalg.det(M) < 0:
        M[0] *= -1
    s = svd_analysis(FiberLinearMap(M))
    d = dilatation(s)
    assert d.K_inner <= d.K_outer ** (n - 1) * (1 + 1e-10)
    assert d.K_outer <= d.K_inner ** (n - 1) * (1 + 1e-10)
    assert d.K_outer >= 1 - 1e-12 and d.K_inner >= 1 - 1e-12


def test_dilatation_arrays_agree_with_scalar(rng):
    M = rng.normal(size=(20, 3, 3))
    s = svd_fields(M)
    Ko, Ki = dilatation_arrays(s)
    for i in range(20):
        d = dilatation(svd_analysis(FiberLinearMap(M[i])))
        assert (np.isinf(d.K_outer) and np.isinf(Ko[i])) or np.isclose(d.K_outer, Ko[i])
        assert np.isclose(d.K_inner, Ki[i])


def test_pullback_of_rotation_by_direct_evaluation():
    t = 0.3
    R = np.array([[np.cos(t), -np.sin(t)], [np.sin(t), np.cos(t)]])
    a = KCovector.basis(2, [0])
    pb = pullback_linear(a, FiberLinearMap(R))
    # (R^* e1)(e_j) = e1(R e_j) = R[0, j]
    assert np.abs(pb.coeffs - R[0]).max() < 1e-12


@given(st.integers(1, 4), seeds)
def test_pullback_against_evaluation_oracle(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    A = rng.normal(size=(n, n))
    c = rng.normal(size=comb(n, k))
    pb = pullback_linear(KCovector(n, k, c), FiberLinearMap(A))
    assert np.allclose(pb.coeffs, pullback_by_evaluation(c, A, k), atol=1e-10)


@given(st.integers(1, 5), seeds)
def test_pullback_norm_sandwich(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    L = FiberLinearMap(rng.normal(size=(n, n)))
    s = svd_analysis(L)
    a = KCovector(n, k, rng.normal(size=comb(n, k)))
    pb = norm(pullback_linear(a, L))
    c = sqrt(comb(n, k))
    hi = c * s.opnorm**k * norm(a)
    assert s.lmin**k * norm(a) / c <= pb + 1e-9 * hi
    assert pb <= hi * (1 + 1e-9)


@given(st.integers(1, 5), seeds)
def test_determinant_multiplicative_and_pullback_contravariant(n, seed):
    rng = np.random.default_rng(seed)
    A, B = rng.normal(size=(n, n)), rng.normal(size=(n, n))
    LA, LB = FiberLinearMap(A), FiberLinearMap(B)
    dAB = svd_analysis(LA.compose(LB)).absdet
    assert abs(dAB - svd_analysis(LA).absdet * svd_analysis(LB).absdet) <= 1e-10 * max(dAB, 1e-300) + 1e-14
    k = int(rng.integers(0, n + 1))
    a = KCovector(n, k, rng.normal(size=comb(n, k)))
    lhs = pullback_linear(a, LA.compose(LB))
    rhs = pullback_linear(pullback_linear(a, LA), LB)
    assert np.allclose(lhs.coeffs, rhs.coeffs, atol=1e-10 * max(1.0, np.abs(lhs.coeffs).max()))
