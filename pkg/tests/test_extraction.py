import math

import numpy as np
import pytest

from cpcomplete.driver import check_flat
from cpcomplete.extraction import (ExtractionFailed, FlatWitness, assemble_completion, extract_atoms,
                                   refine_decomposition, verify_decomposition)
from cpcomplete.moments import TruncatedMomentSequence, atomic_tms, monomials_up_to
from cpcomplete.partial import CpDecomposition

from instances import NO_DIAGONAL, band

BAND_ATOMS = np.array([[0.5, 0.5, 0, 0], [0, 0, 0.5, 0.5], [0, 0.5, 0.5, 0]])
BAND_WEIGHTS = np.array([12.0, 12.0, 12.0])
# four-decimal values as printed; they reproduce the data to about 1e-3
FIVE_ATOMS = np.array([[0.1595, 0.0000, 0.3619, 0.1595, 0.3191],
                       [0.1122, 0.4258, 0.0000, 0.0000, 0.4620],
                       [0.4957, 0.3179, 0.0000, 0.1488, 0.0376]])
FIVE_WEIGHTS = np.array([17.3224, 13.9667, 21.1443])


def _match(U, w, U_ref, w_ref):
    """Max coordinate and weight error after pairing atoms greedily."""
    left = list(range(len(U_ref)))
    du = dw = 0.0
    for u, rho in zip(U, w):
        j = min(left, key=lambda j: np.abs(U_ref[j] - u).max())
        left.remove(j)
        du = max(du, np.abs(U_ref[j] - u).max())
        dw = max(dw, abs(w_ref[j] - rho))
    return du, dw


def _witness(U, w, t):
    z = atomic_tms(U, w, 2 * t)
    fc = check_flat(z, t)
    assert fc.flat
    return FlatWitness(z, t, fc.r)


def test_band_atoms_are_recovered():
    dec = extract_atoms(_witness(BAND_ATOMS, BAND_WEIGHTS, 2), rng=0)
    assert len(dec) == 3
    du, dw = _match(dec.atoms, dec.weights, BAND_ATOMS, BAND_WEIGHTS)
    assert du <= 1e-6 and dw <= 1e-6


def test_five_dimensional_atoms_are_recovered():
    U = FIVE_ATOMS / FIVE_ATOMS.sum(axis=1, keepdims=True)
    dec = extract_atoms(_witness(U, FIVE_WEIGHTS, 2), rng=1)
    assert len(dec) == 3
    du, dw = _match(dec.atoms, dec.weights, U, FIVE_WEIGHTS)
    assert du <= 1e-6 and dw <= 1e-6


def test_single_atom():
    for n in (1, 2, 5):
        v = np.full(n, 1.0 / n)
        dec = extract_atoms(_witness(v[None, :], [1.0], 1), rng=0)
        assert len(dec) == 1
        np.testing.assert_allclose(dec.atoms[0], v, atol=1e-12)
        assert dec.weights[0] == pytest.approx(1.0, abs=1e-12)


def _separated_atoms(rng, n, m, gap=0.05):
    # nearly coincident atoms drop below the absolute rank threshold at any t
    while True:
        U = rng.dirichlet(np.ones(n), size=m)
        d = np.abs(U[:, None, :] - U[None, :, :]).max(axis=2)
        if m == 1 or d[np.triu_indices(m, 1)].min() >= gap:
            return U


def test_round_trip_property():
    # 100 trials: random atoms in the simplex, weights in (0.1, 10)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(100):
        n = int(rng.integers(2, 5))
        m = int(rng.integers(1, 6))
        U = _separated_atoms(rng, n, m)
        w = rng.uniform(0.1, 10, size=m)
        # smallest t whose degree-(t-1) basis on the simplex can separate m points
        t = 1
        while math.comb(n - 1 + t - 1, n - 1) < m:
            t += 1
        t += 1
        z = atomic_tms(U, w, 2 * t)
        fc = check_flat(z, t)
        assert fc.flat and fc.r == m, (trial, fc)
        dec = extract_atoms(FlatWitness(z, t, fc.r), rng=trial)
        assert len(dec) == m
        du, dw = _match(dec.atoms, dec.weights, U, w)
        worst = max(worst, du, dw)
        recon = atomic_tms(dec.atoms, dec.weights, 2 * t).values
        assert np.abs(recon - z.values).max() <= 1e-6
    assert worst <= 1e-6


def test_non_atomic_sequence_is_rejected():
    # a PSD but non-representable moment matrix: negative "mass" at an atom
    z = atomic_tms([[0.5, 0.5], [1.0, 0.0]], [1.0, -0.5], 4)
    with pytest.raises(ExtractionFailed):
        extract_atoms(FlatWitness(z, 2, 2), rng=0)


def test_atoms_outside_simplex_are_rejected():
    z = atomic_tms([[0.5, 0.6], [1.0, 0.0]], [1.0, 1.0], 4)
    with pytest.raises(ExtractionFailed):
        extract_atoms(FlatWitness(z, 2, 2), rng=0)


def test_extraction_is_seed_reproducible():
    wit = _witness(BAND_ATOMS, BAND_WEIGHTS, 2)
    a, b = extract_atoms(wit, rng=5), extract_atoms(wit, rng=5)
    assert np.array_equal(a.atoms, b.atoms) and np.array_equal(a.weights, b.weights)


def test_assemble_completion():
    C = assemble_completion(CpDecomposition(BAND_ATOMS, BAND_WEIGHTS), 4)
    np.testing.assert_allclose(C, [[3, 3, 0, 0], [3, 6, 3, 0], [0, 3, 6, 3], [0, 0, 3, 3]], atol=1e-12)
    assert np.array_equal(C, C.T)
    np.testing.assert_allclose(assemble_completion(CpDecomposition([[0.5, 0.5]], [4.0]), 2), np.ones((2, 2)))
    assert not assemble_completion(CpDecomposition.empty(3), 3).any()
    with pytest.raises(ValueError):
        assemble_completion(CpDecomposition(BAND_ATOMS, BAND_WEIGHTS), 5)


def test_assembled_matrices_are_psd():
    rng = np.random.default_rng(9)
    for _ in range(50):
        n, m = int(rng.integers(1, 7)), int(rng.integers(1, 8))
        dec = CpDecomposition(rng.dirichlet(np.ones(n), size=m), rng.uniform(0.01, 100, m))
        C = assemble_completion(dec, n)
        assert np.linalg.eigvalsh(C).min() >= -1e-10 * max(1.0, np.abs(C).max())
        assert C.min() >= 0


def test_verify_decomposition_reports():
    A = band(3)
    dec = CpDecomposition(BAND_ATOMS, BAND_WEIGHTS)
    rep = verify_decomposition(A.identifying_vector, A.index_set, dec)
    assert rep.passed and rep.max_entry_error <= 1e-12

    five = CpDecomposition(FIVE_ATOMS, FIVE_WEIGHTS)
    rep = verify_decomposition(NO_DIAGONAL.identifying_vector, NO_DIAGONAL.index_set, five, tol=1e-2)
    assert rep.max_entry_error <= 5e-3

    neg = CpDecomposition(BAND_ATOMS, BAND_WEIGHTS * np.array([1, -1, 1]))
    rep = verify_decomposition(A.identifying_vector, A.index_set, neg)
    assert rep.min_weight < 0 and not rep.passed

    scaled = BAND_ATOMS.copy()
    scaled[0] *= 1.1
    rep = verify_decomposition(A.identifying_vector, A.index_set, CpDecomposition(scaled, BAND_WEIGHTS))
    # the scaled atom sums to 1.1: residual 0.1
    assert rep.simplex_residual == pytest.approx(0.1)
    assert not rep.passed


def test_witness_degree_must_cover_t():
    z = atomic_tms(BAND_ATOMS, BAND_WEIGHTS, 2)
    with pytest.raises(ValueError):
        extract_atoms(FlatWitness(z, 2, 3))


def test_empty_witness():
    z = TruncatedMomentSequence(monomials_up_to(3, 2), np.zeros(10))
    assert len(extract_atoms(FlatWitness(z, 1, 0))) == 0


def test_refinement_restores_the_fit():
    A = band(3)
    rng = np.random.default_rng(4)
    for _ in range(10):
        U = np.clip(BAND_ATOMS + 1e-4 * rng.standard_normal(BAND_ATOMS.shape), 0, None)
        U /= U.sum(axis=1, keepdims=True)
        rough = CpDecomposition(U, BAND_WEIGHTS * (1 + 1e-4 * rng.standard_normal(3)))
        assert not verify_decomposition(A.identifying_vector, A.index_set, rough).passed
        dec = refine_decomposition(A.identifying_vector, A.index_set, rough)
        rep = verify_decomposition(A.identifying_vector, A.index_set, dec, tol=1e-10)
        assert rep.passed and rep.min_weight > 0
        assert dec.atoms.min() >= 0


def test_refinement_keeps_decompositions_completely_positive():
    # an unattainable target: the fit stays a CP decomposition, just not an exact one
    A = band(2.9)
    dec = refine_decomposition(A.identifying_vector, A.index_set, CpDecomposition(BAND_ATOMS, BAND_WEIGHTS))
    assert dec.atoms.min() >= 0 and np.all(dec.weights > 0)
    np.testing.assert_allclose(dec.atoms.sum(axis=1), 1.0, atol=1e-12)
    assert verify_decomposition(A.identifying_vector, A.index_set, dec).max_entry_error > 1e-3
