"""Recover a finitely atomic measure on the simplex from a flat moment sequence.

Given ``w`` of degree ``2t`` with ``rank M_{t-1}(w) = rank M_t(w) = r``,
``M_t(w) = V V^T`` with ``V`` of width ``r``.  Rows of ``V`` indexed by
monomials of degree ``<= t-1`` contain ``r`` independent ones; reducing ``V``
so those rows become the identity expresses every monomial of degree ``<= t``
on that basis, which gives the multiplication matrices ``N_i`` (one per
coordinate).  Their common eigenvectors are the atoms' basis evaluations,
read off a Schur form of a random combination of the ``N_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.optimize import least_squares

from .moments import TruncatedMomentSequence, monomial_values, monomials_up_to
from .partial import CpDecomposition, IndexSet


class ExtractionFailed(RuntimeError):
    pass


@dataclass(frozen=True)
class FlatWitness:
    w: TruncatedMomentSequence
    t: int
    rank: int
    rank_tol: float = 1e-6


@dataclass(frozen=True)
class ExtractionSettings:
    clamp_tol: float = 1e-6
    weight_floor: float = 1e-9
    moment_tol: float = 1e-6
    """Allowed moment mismatch, relative to ``max(1, max |w|)``."""


def _factor(M: np.ndarray, r: int) -> np.ndarray:
    w, Q = np.linalg.eigh((M + M.T) / 2)
    w, Q = w[::-1][:r], Q[:, ::-1][:, :r]
    if r and w[-1] <= 0:
        raise ExtractionFailed("moment matrix has fewer positive eigenvalues than its rank")
    return Q * np.sqrt(w)


def _clamp_into_simplex(U: np.ndarray, tol: float) -> np.ndarray:
    V = U.copy()
    if np.any(V < -tol):
        raise ExtractionFailed(f"atom coordinate {V.min():.3g} is outside the simplex")
    V = np.clip(V, 0.0, None)
    s = V.sum(axis=1)
    if np.any(np.abs(s - 1) > tol):
        raise ExtractionFailed(f"atom coordinate sum off by {np.abs(s - 1).max():.3g}")
    V /= s[:, None]
    if np.abs(V - U).max(initial=0.0) > tol:
        raise ExtractionFailed("clamping moved an atom by more than the tolerance")
    return V


def _fit_weights(U: np.ndarray, w: TruncatedMomentSequence) -> np.ndarray:
    # atoms share the hyperplane sum(x) = 1, so low-degree monomials can be
    # dependent on them; raise the degree until the atoms are separated
    r = U.shape[0]
    deg = min(2, w.degree)
    while True:
        basis = monomials_up_to(w.n, deg)
        Phi = monomial_values(U, basis)  # (r, len(basis))
        sv = np.linalg.svd(Phi, compute_uv=False)
        if (sv.size >= r and sv[r - 1] > 1e-8 * sv[0]) or deg >= w.degree:
            break
        deg += 1
    rho, *_ = np.linalg.lstsq(Phi.T, w.values[: len(basis)], rcond=None)
    return rho


def extract_atoms(witness: FlatWitness, rng=None,
                  settings: ExtractionSettings | None = None) -> CpDecomposition:
    """Atoms and weights of the measure represented by a flat ``witness``.

    Raises :class:`ExtractionFailed` when the recovered measure does not
    reproduce the moments of ``witness.w`` up to degree ``2t``.
    """
    settings = settings or ExtractionSettings()
    rng = np.random.default_rng(rng)
    w, t, r = witness.w, witness.t, witness.rank
    n = w.n
    if w.degree < 2 * t:
        raise ValueError("witness degree is smaller than 2t")
    if r == 0:
        return CpDecomposition.empty(n)
    basis_t = monomials_up_to(n, t)
    s_prev = basis_t.size_up_to(t - 1)
    V = _factor(w.moment_matrix(t), r)

    # pick r well-conditioned rows among monomials of degree <= t-1
    _, _, piv = sla.qr(V[:s_prev].T, pivoting=True, mode="economic")
    P = np.sort(piv[:r])
    VP = V[P]
    if np.linalg.cond(VP) > 1e10:
        raise ExtractionFailed("no well-conditioned monomial basis of the expected size")
    U = np.linalg.solve(VP.T, V.T).T  # U[P] = I
    pivots = [basis_t[p] for p in P]

    Ns = []
    for i in range(n):
        rows = []
        for b in pivots:
            shifted = list(b)
            shifted[i] += 1
            rows.append(basis_t.position(shifted))
        Ns.append(U[rows, :])
    coeffs = rng.random(n) + 0.1
    coeffs /= coeffs.sum()
    N = sum(c * Ni for c, Ni in zip(coeffs, Ns))
    T, Q = sla.schur(N, output="real")
    if r > 1 and np.any(np.abs(np.diag(T, -1)) > 1e-8 * max(1.0, np.abs(T).max())):
        raise ExtractionFailed("multiplication matrix has complex eigenvalues")
    atoms = np.column_stack([np.einsum("jl,jk,kl->l", Q, Ni, Q) for Ni in Ns])

    atoms = _clamp_into_simplex(atoms, settings.clamp_tol)
    rho = _fit_weights(atoms, w)
    if np.any(rho <= settings.weight_floor):
        raise ExtractionFailed(f"weight {rho.min():.3g} is not positive")
    full = monomials_up_to(n, 2 * t)
    recon = rho @ monomial_values(atoms, full)
    err = np.abs(recon - w.values[: len(full)]).max()
    scale = max(1.0, float(np.abs(w.values[: len(full)]).max()))
    if err > settings.moment_tol * scale:
        raise ExtractionFailed(f"moment mismatch {err:.3g} exceeds tolerance")
    return CpDecomposition(atoms, rho)


def refine_decomposition(a, E: IndexSet, dec: CpDecomposition, drop_tol: float = 1e-12) -> CpDecomposition:
    """Polish a nearby decomposition so that it reproduces ``a`` on ``E``.

    Writes ``C = sum_i v_i v_i^T`` with ``v_i = sqrt(rho_i) u_i`` and solves
    the bounded least-squares problem ``min |C|_E - a|`` over ``v_i >= 0``,
    starting from ``dec``.  Any nonnegative ``v_i`` is again an atom of the
    simplex after scaling, so the result is a CP decomposition by
    construction; how well it fits ``a`` is for the caller to check.
    """
    a = np.asarray(a, dtype=float)
    m, n = len(dec), E.n
    if m == 0 or not len(E):
        return dec
    rows = np.array([i for i, _ in E.pairs])
    cols = np.array([j for _, j in E.pairs])
    V0 = np.clip(np.sqrt(np.maximum(dec.weights, 0))[:, None] * dec.atoms, 0, None)

    def resid(v):
        V = v.reshape(m, n)
        return np.einsum("ip,ip->p", V[:, rows], V[:, cols]) - a

    def jac(v):
        V = v.reshape(m, n)
        J = np.zeros((len(a), m, n))
        e = np.arange(len(a))
        J[e, :, rows] += V[:, cols].T
        J[e, :, cols] += V[:, rows].T
        return J.reshape(len(a), m * n)

    sol = least_squares(resid, V0.ravel(), jac=jac, bounds=(0.0, np.inf), method="dogbox",
                        xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    V = sol.x.reshape(m, n)
    s = V.sum(axis=1)
    keep = s > drop_tol * max(s.max(initial=0.0), 1.0)
    V, s = V[keep], s[keep]
    return CpDecomposition(V / s[:, None], s ** 2)


def assemble_completion(dec: CpDecomposition, n: int | None = None) -> np.ndarray:
    """``C = sum_i rho_i u_i u_i^T`` as an exactly symmetric array."""
    if n is not None and len(dec) and dec.n != n:
        raise ValueError(f"decomposition is of order {dec.n}, expected {n}")
    if not len(dec):
        return np.zeros((n if n is not None else dec.n,) * 2)
    return dec.matrix()


@dataclass(frozen=True)
class DecompositionReport:
    max_entry_error: float
    simplex_residual: float
    """Largest violation over atoms of ``u >= 0`` and ``sum(u) = 1``."""
    min_weight: float
    tol: float

    @property
    def passed(self) -> bool:
        return (self.max_entry_error <= self.tol and self.simplex_residual <= self.tol
                and (self.min_weight > 0 or np.isnan(self.min_weight)))

    def as_dict(self) -> dict:
        return {"max_entry_error": self.max_entry_error, "simplex_residual": self.simplex_residual,
                "min_weight": None if np.isnan(self.min_weight) else self.min_weight,
                "tolerance": self.tol, "passed": self.passed}


def verify_decomposition(a, E: IndexSet, dec: CpDecomposition, tol: float = 1e-6) -> DecompositionReport:
    a = np.asarray(a, dtype=float)
    C = assemble_completion(dec, E.n)
    got = np.array([C[i, j] for i, j in E.pairs])
    entry = float(np.abs(got - a).max(initial=0.0))
    if len(dec):
        U = dec.atoms
        simplex = float(max(np.max(-U, initial=0.0), np.abs(U.sum(axis=1) - 1).max()))
        wmin = float(dec.weights.min())
    else:
        simplex, wmin = 0.0, float("nan")
    return DecompositionReport(entry, simplex, wmin, tol)
