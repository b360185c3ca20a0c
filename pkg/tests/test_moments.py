import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cpcomplete.moments import (LinearMatrixStructure, Polynomial, TruncatedMomentSequence, atomic_tms,
                                localizing_structure, moment_structure, monomial_values, monomials_up_to,
                                random_sos_objective, riesz_apply, simplex_polynomials, support_set)
from cpcomplete.partial import IndexSet

x1 = Polynomial.variable(2, 0)
x2 = Polynomial.variable(2, 1)


def _symbolic(struct: LinearMatrixStructure, n: int, k: int):
    """Entries as ``{exponent: coef}`` dicts, for comparison with hand-written layouts."""
    basis = monomials_up_to(n, 2 * k)
    out = []
    for i in range(struct.side):
        row = []
        for j in range(struct.side):
            row.append({basis[v]: c for c, v in struct.entry_terms(i, j)})
        out.append(row)
    return out


def _parse(cell: str):
    """``"20+11-10"`` means ``z_(2,0) + z_(1,1) - z_(1,0)``."""
    terms, sign = {}, 1.0
    tok = ""
    for ch in cell + "+":
        if ch in "+-":
            if tok:
                terms[(int(tok[0]), int(tok[1]))] = sign
            sign = 1.0 if ch == "+" else -1.0
            tok = ""
        else:
            tok += ch
    return terms


DISPLAYED_M2 = """
00 10 01 20 11 02
10 20 11 30 21 12
01 11 02 21 12 03
20 30 21 40 31 22
11 21 12 31 22 13
02 12 03 22 13 04
"""
DISPLAYED_H = """
10+01-00 20+11-10 11+02-01
20+11-10 30+21-20 21+12-11
11+02-01 21+12-11 12+03-02
"""
DISPLAYED_X1 = """
10 20 11
20 30 21
11 21 12
"""
DISPLAYED_X2 = """
01 11 02
11 21 12
02 12 03
"""
DISPLAYED_BALL = """
00-20-02 10-30-12 01-21-03
10-30-12 20-40-22 11-31-13
01-21-03 11-31-13 02-22-04
"""


@pytest.mark.parametrize("q, layout", [
    (Polynomial.constant(2), DISPLAYED_M2),
    (x1 + x2 - 1.0, DISPLAYED_H),
    (x1, DISPLAYED_X1),
    (x2, DISPLAYED_X2),
    (1.0 - x1 * x1 - x2 * x2, DISPLAYED_BALL),
])
def test_second_order_matrices_entry_for_entry(q, layout):
    expected = [[_parse(c) for c in line.split()] for line in layout.strip().splitlines()]
    got = _symbolic(localizing_structure(q, 2, 2), 2, 2)
    assert got == expected


def test_monomial_order():
    assert monomials_up_to(2, 2).monomials == ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2))
    assert monomials_up_to(1, 0).monomials == ((0,),)
    assert monomials_up_to(3, 1).monomials == ((0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1))


@given(st.integers(1, 5), st.integers(0, 6))
def test_basis_size_and_graded_order(n, d):
    b = monomials_up_to(n, d)
    assert len(b) == math.comb(n + d, d)
    keys = [(sum(m), tuple(-e for e in m)) for m in b]
    assert keys == sorted(keys) and len(set(keys)) == len(keys)
    assert all(b.position(m) == i for i, m in enumerate(b))


def test_support_set():
    s = support_set(IndexSet(3, ((0, 1), (1, 1), (1, 2))))
    assert set(s.exponents) == {(1, 1, 0), (0, 2, 0), (0, 1, 1)}
    assert len(s) == 3 and s.pair_of((0, 2, 0)) == (1, 1)
    assert support_set(IndexSet(1, ((0, 0),))).exponents == ((2,),)
    assert support_set(IndexSet(2, ((0, 1),))).exponents == ((1, 1),)


def test_riesz_apply_examples():
    z = TruncatedMomentSequence(monomials_up_to(2, 2), np.array([5.0, 0, 0, 0, 0, 0]))
    assert riesz_apply(z, Polynomial.constant(2)) == 5.0
    assert riesz_apply(atomic_tms([[0.5, 0.5]], [1.0], 2), x1 + x2 - 1.0) == pytest.approx(0.0, abs=1e-15)
    assert riesz_apply(atomic_tms([[0.3, 0.7]], [1.0], 2), x1 * x2) == pytest.approx(0.21)
    with pytest.raises(ValueError):
        riesz_apply(z, x1 ** 3)


def test_localizer_sides_and_precondition():
    assert moment_structure(3, 2).side == math.comb(5, 2)
    h, gs = simplex_polynomials(4)
    assert [localizing_structure(g, 4, 2).side for g in gs] == [15, 5, 5, 5, 5, 5]
    assert localizing_structure(h, 4, 2).side == 5
    with pytest.raises(ValueError):
        localizing_structure(x1 ** 3, 2, 1)


def _random_poly(rng, n, deg, dense=0.6):
    terms = {}
    for m in monomials_up_to(n, deg):
        if rng.random() < dense:
            terms[m] = float(rng.integers(-3, 4))
    return Polynomial(n, terms)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=150, deadline=None)
def test_riesz_identity_for_localizing_matrices(seed):
    # vec(p)^T L_q(z) vec(p) = L_z(q p^2)
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    k = int(rng.integers(1, 4))
    dq = int(rng.integers(0, 2 * k + 1))
    q = _random_poly(rng, n, dq)
    if not q.terms:
        q = Polynomial.constant(n, 1.0)
    half = math.ceil(q.degree / 2)
    if half > k:
        return
    pb = monomials_up_to(n, k - half)
    p = Polynomial.from_coefficients(pb, rng.integers(-3, 4, size=len(pb)).astype(float))
    z = TruncatedMomentSequence(monomials_up_to(n, 2 * k), rng.standard_normal(math.comb(n + 2 * k, 2 * k)))
    v = p.coefficients(pb)
    lhs = v @ localizing_structure(q, n, k).evaluate(z.values) @ v
    rhs = riesz_apply(z, q * p * p)
    assert lhs == pytest.approx(rhs, abs=1e-10 * max(1.0, abs(rhs)))


@given(st.integers(1, 4), st.integers(1, 3))
@settings(deadline=None)
def test_moment_matrix_is_hankel(n, k):
    b = monomials_up_to(n, k)
    struct = moment_structure(n, k)
    owner = {}
    for i, bi in enumerate(b):
        for j, bj in enumerate(b):
            key = tuple(x + y for x, y in zip(bi, bj))
            terms = struct.entry_terms(i, j)
            assert owner.setdefault(key, terms) == terms


@given(st.integers(0, 2 ** 31))
@settings(max_examples=60, deadline=None)
def test_atomic_measures_satisfy_relaxation_constraints(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 5))
    k = int(rng.integers(1, 4))
    m = int(rng.integers(1, 6))
    U = rng.dirichlet(np.ones(n), size=m)
    w = rng.uniform(0.1, 10, size=m)
    z = atomic_tms(U, w, 2 * k).values
    h, gs = simplex_polynomials(n)
    assert np.abs(localizing_structure(h, n, k).evaluate(z)).max() <= 1e-12 * w.sum()
    for g in gs:
        M = localizing_structure(g, n, k).evaluate(z)
        assert np.linalg.eigvalsh(M).min() >= -1e-10 * max(1.0, w.sum())


def test_atomic_tms_examples():
    z = atomic_tms([[1.0, 0.0, 0.0]], [1.0], 2)
    nz = {m: v for m, v in zip(z.basis, z.values) if v}
    assert nz == {(0, 0, 0): 1.0, (1, 0, 0): 1.0, (2, 0, 0): 1.0}
    zero = atomic_tms(np.zeros((0, 3)), [], 2, n=3)
    assert not zero.values.any() and len(zero.values) == 10
    # the three band atoms reproduce the completed band matrix on its pattern
    U = [[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5], [0, 0.5, 0.5, 0]]
    z = atomic_tms(U, [12.0] * 3, 2)
    E = IndexSet(4, ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (1, 3), (2, 2), (2, 3), (3, 3), (0, 3)))
    a = [z[e] for e in support_set(E).exponents]
    assert np.allclose(a, [3, 3, 0, 0, 6, 3, 0, 6, 3, 3])


def test_truncate_and_moment_matrix():
    z = atomic_tms([[0.2, 0.8], [0.6, 0.4]], [1.0, 2.0], 4)
    w = z.truncate(2)
    assert w.degree == 2 and np.array_equal(w.values, z.values[:6])
    V = monomial_values(np.array([[0.2, 0.8], [0.6, 0.4]]), monomials_up_to(2, 2))
    np.testing.assert_allclose(z.moment_matrix(2), V.T @ np.diag([1.0, 2.0]) @ V, atol=1e-14)
    with pytest.raises(ValueError):
        z.truncate(5)


def test_random_objective():
    R = random_sos_objective(3, 4, J=np.eye(10))
    expected = {tuple(2 * e for e in m): 1.0 for m in monomials_up_to(3, 2)}
    assert R.terms == expected
    assert random_sos_objective(3, 4, 7).terms == random_sos_objective(3, 4, 7).terms
    assert random_sos_objective(3, 4, 7).terms != random_sos_objective(3, 4, 8).terms
    rng = np.random.default_rng(0)
    R = random_sos_objective(4, 4, 11)
    for v in rng.dirichlet(np.ones(4), size=50):
        assert R(v) > 0
    with pytest.raises(ValueError):
        random_sos_objective(3, 3, 0)
    with pytest.raises(ValueError):
        random_sos_objective(3, 2, 0)


def test_structure_symmetry_is_enforced():
    with pytest.raises(ValueError):
        LinearMatrixStructure(2, 1, [0], [1], [0], [1.0])
    s = LinearMatrixStructure.from_entries(2, 2, {(0, 0): [(1.0, 0)], (0, 1): [(2.0, 1)]})
    np.testing.assert_allclose(s.evaluate([1.0, 3.0]), [[1, 6], [6, 0]])
    Y = np.array([[1.0, 2.0], [2.0, 5.0]])
    z = np.array([0.3, -0.7])
    assert s.adjoint(Y) @ z == pytest.approx(np.sum(Y * s.evaluate(z)))


@pytest.mark.parametrize("n, k", [(2, 2), (3, 2), (3, 3)])
def test_localizers_factor_through_shifted_moment_matrices(n, k):
    rng = np.random.default_rng(n * 10 + k)
    z = rng.standard_normal(math.comb(n + 2 * k, 2 * k))
    _, gs = simplex_polynomials(n)
    for g in gs[1:]:
        struct = localizing_structure(g, n, k)
        base, terms = struct.hankel
        y = sum(c * z[idx] for c, idx in terms)
        np.testing.assert_allclose(base.evaluate(y), struct.evaluate(z), atol=1e-13)
