from itertools import combinations
from math import comb, sqrt

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_spd
from oracles import gram_det, leibniz_det, two_form_comass, wedge_of_vectors
from qrforms.exterior import (ComassBudget, KCovector, KVector, Metric, comass_norm, compound_matrix,
                              evaluate, grassmann_inner, merge_sign, metric_flat, metric_sharp,
                              multi_indices, norm, simple_orthogonalize, wedge, wedge_all)

FAST = ComassBudget(starts=16, samples=2000, seed=3)


def frames(min_n=1, max_n=5):
    @st.composite
    def build(draw):
        n = draw(st.integers(min_n, max_n))
        k = draw(st.integers(1, min(3, n)))
        seed = draw(st.integers(0, 2**32 - 1))
        return n, k, np.random.default_rng(seed)
    return build()


def test_multi_indices_lexicographic():
    assert multi_indices(4, 2) == tuple(combinations(range(4), 2))
    assert multi_indices(3, 0) == ((),)


def test_merge_sign_matches_permutation_parity():
    assert merge_sign((0,), (1,)) == 1
    assert merge_sign((1,), (0,)) == -1
    assert merge_sign((0, 2), (1,)) == -1


def test_wedge_on_basis():
    e = [KVector.basis(3, [i]) for i in range(3)]
    assert (e[0] ^ e[1]).allclose(KVector.basis(3, [0, 1]))
    assert (e[1] ^ e[0]).allclose(-KVector.basis(3, [0, 1]))
    assert np.all((e[2] ^ e[2]).coeffs == 0)
    top = wedge_all([e[0], e[1], e[2]])
    assert top.grade == 3 and top.coeffs[0] == 1.0


@given(frames())
def test_wedge_of_vectors_matches_minors(case):
    n, k, rng = case
    V = rng.normal(size=(k, n))
    w = wedge_all([KVector.from_vector(v) for v in V])
    assert np.allclose(w.coeffs, wedge_of_vectors(V), atol=1e-12)


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_wedge_associative_and_graded_commutative(n, seed):
    rng = np.random.default_rng(seed)
    ks = rng.integers(0, n + 1, size=3)
    while ks.sum() > n:
        ks[np.argmax(ks)] -= 1
    a, b, c = (KCovector(n, int(k), rng.normal(size=comb(n, int(k)))) for k in ks)
    assert ((a ^ b) ^ c).allclose(a ^ (b ^ c), atol=1e-10)
    sign = (-1) ** (int(ks[0]) * int(ks[1]))
    assert (a ^ b).allclose(sign * (b ^ a), atol=1e-10)


def test_wedge_errors():
    with pytest.raises(ValueError):
        KVector.basis(2, [0]) ^ KVector.basis(2, [0, 1]) ^ KVector.basis(2, [1])
    with pytest.raises(TypeError):
        wedge(KVector.basis(2, [0]), KCovector.basis(2, [1]))
    with pytest.raises(ValueError):
        wedge(KVector.basis(2, [0]), KVector.basis(3, [1]))


def test_graded_element_validation():
    with pytest.raises(ValueError):
        KVector(3, 2, [1.0, 2.0])
    with pytest.raises(ValueError):
        KVector(3, 4, [1.0])
    with pytest.raises(ValueError):
        KVector(2, 1, [np.nan, 0.0])


def test_metric_validation():
    with pytest.raises(ValueError):
        Metric(np.array([[1.0, 0.5], [0.0, 1.0]]))
    with pytest.raises(ValueError):
        Metric(np.array([[1.0, 0.0], [0.0, -1.0]]))
    m = Metric(np.array([[2.0, 0.3], [0.3, 1.0]]))
    assert np.allclose(Metric.from_json(m.to_json()).gram, m.gram)


def test_json_round_trip():
    v = KVector(4, 2, np.arange(6.0))
    assert KVector.from_json(v.to_json()).allclose(v, atol=0)
    with pytest.raises(ValueError):
        KCovector.from_json(v.to_json())


@given(frames())
def test_grassmann_inner_is_gram_determinant(case):
    n, k, rng = case
    G = random_spd(rng, n)
    V, W = rng.normal(size=(k, n)), rng.normal(size=(k, n))
    a = wedge_all([KVector.from_vector(v) for v in V])
    b = wedge_all([KVector.from_vector(w) for w in W])
    scale = np.prod([sqrt(v @ G @ v) for v in V]) * np.prod([sqrt(w @ G @ w) for w in W])
    assert abs(grassmann_inner(a, b, Metric(G)) - gram_det(V, W, G)) <= 1e-10 * scale


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_grassmann_inner_symmetric_positive(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    g = Metric(random_spd(rng, n))
    a = KVector(n, k, rng.normal(size=comb(n, k)))
    b = KVector(n, k, rng.normal(size=comb(n, k)))
    ab, ba = grassmann_inner(a, b, g), grassmann_inner(b, a, g)
    assert abs(ab - ba) <= 1e-12 * max(1.0, abs(ab))
    assert grassmann_inner(a, a, g) > 0


def test_compound_matrix_entries_are_minors(rng):
    A = rng.normal(size=(4, 4))
    C = compound_matrix(A, 2)
    idx = multi_indices(4, 2)
    for r, I in enumerate(idx):
        for c, J in enumerate(idx):
            assert abs(C[r, c] - leibniz_det(A[np.ix_(I, J)])) < 1e-12


def test_compound_matrix_batched(rng):
    A = rng.normal(size=(5, 3, 3))
    C = compound_matrix(A, 2)
    for i in range(5):
        assert np.allclose(C[i], compound_matrix(A[i], 2))


@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_flat_sharp_inverse(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(0, n + 1))
    g = Metric(random_spd(rng, n))
    v = KVector(n, k, rng.normal(size=comb(n, k)))
    back = metric_sharp(metric_flat(v, g), g)
    assert np.allclose(back.coeffs, v.coeffs, atol=1e-12 * max(1.0, np.abs(v.coeffs).max()) * 100)
    assert abs(norm(metric_flat(v, g), g) - norm(v, g)) <= 1e-10 * max(1.0, norm(v, g))


def test_evaluate_dual_basis():
    a = KCovector.basis(3, [0, 2])
    assert evaluate(a, KVector.basis(3, [0, 2])) == 1.0
    assert evaluate(a, KVector.basis(3, [0, 1])) == 0.0


@given(frames(2, 6))
def test_simple_orthogonalize(case):
    n, k, rng = case
    g = Metric(random_spd(rng, n))
    fs = [KVector.from_vector(v) for v in rng.normal(size=(k, n))]
    out = simple_orthogonalize(fs, g)
    assert not out.degenerate
    w0, w1 = wedge_all(fs), wedge_all(out.factors)
    assert np.abs(w0.coeffs - w1.coeffs).max() <= 1e-10 * np.abs(w0.coeffs).max()
    for i in range(k):
        for j in range(i):
            gij = grassmann_inner(out.factors[i], out.factors[j], g)
            assert abs(gij) <= 1e-10 * norm(out.factors[i], g) * norm(out.factors[j], g)
    prod = np.prod([norm(f, g) for f in out.factors])
    assert abs(norm(w1, g) - prod) <= 1e-10 * prod


def test_simple_orthogonalize_degenerate():
    v = KVector.from_vector([1.0, 2.0, 0.0])
    out = simple_orthogonalize([v, 2 * v])
    assert out.degenerate
    assert np.all(wedge_all(out.factors).coeffs == 0)


@given(frames())
def test_hadamard_inequality(case):
    n, k, rng = case
    fs = [KVector.from_vector(v) for v in rng.normal(size=(k, n))]
    assert norm(wedge_all(fs)) <= np.prod([norm(f) for f in fs]) * (1 + 1e-12)


def test_comass_two_planes():
    a = KCovector.basis(4, [0, 1]) + KCovector.basis(4, [2, 3])
    r = comass_norm(a)
    assert abs(r.lower - 1.0) <= 1e-6
    assert abs(r.norm - sqrt(2)) < 1e-15
    assert r.norm <= sqrt(6) * r.lower


@pytest.mark.parametrize("n,k", [(3, 0), (3, 1), (3, 2), (3, 3), (5, 4)])
def test_comass_certified_grades(n, k, rng):
    a = KCovector(n, k, rng.normal(size=comb(n, k)))
    r = comass_norm(a)
    assert r.certified and abs(r.lower - norm(a)) <= 1e-9 * norm(a)


@given(st.integers(4, 5), st.integers(0, 2**32 - 1))
def test_comass_of_two_forms_against_skew_svd(n, seed):
    rng = np.random.default_rng(seed)
    c = rng.normal(size=comb(n, 2))
    exact = two_form_comass(c, n)
    r = comass_norm(KCovector(n, 2, c), budget=FAST)
    assert r.lower <= exact * (1 + 1e-12)
    assert abs(r.lower - exact) <= 1e-6 * exact


@given(st.integers(4, 5), st.integers(0, 2**32 - 1))
def test_comass_sandwich(n, seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, n - 1))
    a = KCovector(n, k, rng.normal(size=comb(n, k)))
    r = comass_norm(a, budget=FAST)
    assert r.lower <= r.norm * (1 + 1e-12)
    assert r.norm <= sqrt(comb(n, k)) * r.lower * (1 + 1e-12)


def test_comass_respects_metric():
    g = Metric(np.diag([4.0, 1.0, 1.0, 1.0]))
    # in g-orthonormal coordinates e1 has length 2, so dx1 ^ dx2 has comass 1/2
    a = KCovector.basis(4, [0, 1])
    assert abs(comass_norm(a, g, budget=FAST).lower - 0.5) <= 1e-9
