"""Homogeneous self-dual interior point method for :class:`SdpProblem`.

The blocks of moment relaxations are large and dense but their structure is
sparse, so this solver never forms the ``(s^2 x s^2)`` scaling operators.
The Newton system is reduced to the Schur matrix ``H = A W (x) W A^*`` over
the ``N`` free variables plus the equality rows, and ``H`` is assembled one
variable at a time from the sparse structure.

Embedding (all variables scaled by ``tau``)::

    r_d = F^T lam + A(X) - c tau        (dual)
    r_p = F z - f tau                   (primal equalities)
    r_s = A^*(z) - S                    (primal blocks)
    r_g = kappa - f.lam + c.z           (gap)

with ``X, S`` PSD and ``tau, kappa >= 0``.  Nesterov-Todd scaling and a
Mehrotra predictor-corrector drive ``mu = (<X,S> + tau kappa) / (nu + 1)`` to
zero.  ``tau > 0`` at the limit gives an optimal pair; ``kappa > 0`` gives a
Farkas certificate, which is only reported after it passes an independent
check.
"""
from __future__ import annotations

import logging
import os
import time

import numpy as np
import scipy.linalg as sla

from .sdp import (Certificate, Infeasible, NumericalFailure, Optimal, SdpProblem, SolverSettings,
                  certificate_margin)

log = logging.getLogger(__name__)

_STEP = 0.99


def _sym(M):
    return (M + M.T) / 2


def _chol(M):
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(_sym(M))
        floor = max(w.max(), 1.0) * 1e-15
        return np.linalg.cholesky((V * np.maximum(w, floor)) @ V.T)


class _Scaling:
    """NT scaling point ``W`` with ``W S W = X``; ``R^{-1} X R^{-T} = R^T S R = diag(lam)``."""

    def __init__(self, X, S):
        Lx = _chol(X)
        Ls = _chol(S)
        U, sv, Vt = np.linalg.svd(Ls.T @ Lx)
        sv = np.maximum(sv, 1e-300)
        isq = 1.0 / np.sqrt(sv)
        self.R = (Lx @ Vt.T) * isq
        self.Rinv = (np.sqrt(sv)[:, None] * Vt) @ sla.solve_triangular(Lx, np.eye(len(sv)), lower=True)
        self.W = _sym(self.R @ self.R.T)
        self.lam = sv

    def to_scaled_x(self, dX):
        return self.Rinv @ dX @ self.Rinv.T

    def to_scaled_s(self, dS):
        return self.R.T @ dS @ self.R

    def from_scaled_rhs(self, rhs):
        """Solve ``lam o U = rhs`` (Jordan product) and map ``U`` back to X-space."""
        lam = self.lam
        U = 2.0 * rhs / (lam[:, None] + lam[None, :])
        return _sym(self.R @ U @ self.R.T)

    def max_step(self, scaled_dir):
        isq = 1.0 / np.sqrt(self.lam)
        M = _sym(scaled_dir * isq[:, None] * isq[None, :])
        w = sla.eigvalsh(M, subset_by_index=[0, 0])[0] if len(M) > 1 else M[0, 0]
        return np.inf if w >= 0 else -1.0 / w


def _block_schur(blk, W: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Add ``H[a, b] = <A(e_a), W A(e_b) W>`` for one block into ``out``.

    Writing ``A(e_b) = U + U^T`` with ``U`` upper triangular (diagonal
    halved), ``H[b, :] = 2 A^*(W U W)`` because every ``A(e_a)`` is
    symmetric; the adjoint is a weighted bincount over the structure.
    """
    N = out.shape[0]
    per_var = blk.upper_form()
    coo = blk.op.tocoo()
    simple = (coo.nnz == blk.side ** 2 and np.array_equal(coo.row, np.arange(coo.nnz))
              and np.all(coo.data == 1.0))
    for b in range(min(N, blk.n_vars)):
        r, c, v = per_var[b]
        if not len(r):
            continue
        t = (W[:, r] @ ((2.0 * v)[:, None] * W[c, :])).ravel()
        out[b] += np.bincount(coo.col, weights=t if simple else t[coo.row] * coo.data, minlength=N)
    return out


def _schur(problem: SdpProblem, scalings) -> np.ndarray:
    """``H = sum_j A_j^* (W_j . W_j) A_j``.

    Localizing blocks are moment matrices of a shifted sequence, so their
    term is ``S^T H_base S`` with ``H_base`` over the much smaller basis.
    """
    N = problem.n_vars
    H = np.zeros((N, N))
    for blk, sc in zip(problem.blocks, scalings):
        if blk.hankel is None:
            _block_schur(blk, sc.W, H)
            continue
        base, terms = blk.hankel
        Hb = _sym(_block_schur(base, sc.W, np.zeros((base.n_vars, base.n_vars))))
        if len(terms) == 1:
            (ca, ia), = terms
            H[np.ix_(ia, ia)] += (ca * ca) * Hb
            continue
        T = np.zeros((len(Hb), N))
        for cb, ib in terms:
            T[:, ib] += cb * Hb
        for ca, ia in terms:
            H[ia] += ca * T
    return _sym(H)


class _KKT:
    """Solves ``[-H F^T; F 0] [dz; dlam] = [b1; b2]``."""

    def __init__(self, H, F):
        N = H.shape[0]
        self.H = H
        self.F = F
        reg = 0.0
        scale = max(1.0, float(np.abs(np.diag(H)).max(initial=0.0)))
        while True:
            try:
                self.L = np.linalg.cholesky(H + reg * np.eye(N)) if reg else np.linalg.cholesky(H)
                break
            except np.linalg.LinAlgError:
                reg = scale * 1e-14 if reg == 0 else reg * 100
                if reg > scale:
                    raise
        self.reg = reg
        self.m = F.shape[0]
        if self.m:
            self.B = sla.solve_triangular(self.L, F.T.toarray(), lower=True)
            Sc = self.B.T @ self.B
            sreg = 0.0
            sscale = max(1.0, float(np.abs(np.diag(Sc)).max(initial=0.0)))
            while True:
                try:
                    self.Sc = sla.cho_factor(Sc + sreg * np.eye(self.m) if sreg else Sc, lower=True)
                    break
                except np.linalg.LinAlgError:
                    sreg = sscale * 1e-14 if sreg == 0 else sreg * 100
                    if sreg > sscale:
                        raise

    def _solve_once(self, b1, b2):
        y1 = sla.solve_triangular(self.L, b1, lower=True)
        if self.m:
            dlam = sla.cho_solve(self.Sc, b2 + self.B.T @ y1)
            dz = sla.solve_triangular(self.L.T, self.B @ dlam - y1, lower=False)
        else:
            dlam = np.zeros(0)
            dz = sla.solve_triangular(self.L.T, -y1, lower=False)
        return dz, dlam

    def solve(self, b1, b2, refine=2):
        dz, dlam = self._solve_once(b1, b2)
        for _ in range(refine):
            r1 = b1 - (-self.H @ dz + self.F.T @ dlam)
            r2 = b2 - self.F @ dz
            e1, e2 = self._solve_once(r1, r2)
            dz += e1
            dlam += e2
        return dz, dlam


def _inner(Xs, Ss):
    return float(sum(np.vdot(X, S) for X, S in zip(Xs, Ss)))


def _optimal(problem, z, lam, X, tau, f_scale, c_scale, dres, gap, it, reduced=False):
    zh = z / tau * f_scale
    eq, psd = problem.residuals(zh)
    return Optimal(zh, float(problem.objective @ zh), eq, psd, dres * c_scale, gap, it,
                   lam / tau * c_scale, [Xj / tau * c_scale for Xj in X], reduced_accuracy=reduced)


def _memory_budget(settings: SolverSettings) -> float:
    if settings.max_memory is not None:
        return settings.max_memory
    try:
        return 0.6 * os.sysconf("SC_PAGE_SIZE") * os.sysconf("SC_PHYS_PAGES")
    except (ValueError, OSError, AttributeError):
        return np.inf


def solve_hsde(problem: SdpProblem, settings: SolverSettings) -> Optimal | Infeasible | NumericalFailure:
    t0 = time.perf_counter()
    N, m = problem.n_vars, problem.n_eq
    # Schur matrix, its factor and a work copy, plus the equality coupling
    need = 8.0 * (3 * N * N + 2 * N * m)
    budget = _memory_budget(settings)
    if need > budget:
        return NumericalFailure("problem too large for the memory budget", 0,
                                {"bytes_needed": need, "bytes_budget": budget, "n_vars": N})
    blocks = problem.blocks
    F = problem.eq_matrix
    c_scale = max(1.0, float(np.abs(problem.objective).max(initial=0.0)))
    f_scale = max(1.0, float(np.abs(problem.eq_rhs).max(initial=0.0)))
    c = problem.objective / c_scale
    f = problem.eq_rhs / f_scale
    nu = sum(b.side for b in blocks)

    z = np.zeros(N)
    lam = np.zeros(m)
    X = [np.eye(b.side) for b in blocks]
    S = [np.eye(b.side) for b in blocks]
    tau = kappa = 1.0
    best_cert = None
    fallback = None  # primal-feasible iterate with a small gap but a stalled dual residual
    stall = 0
    prev_mu = np.inf
    last = {}

    for it in range(settings.max_iter + 1):
        AX = np.zeros(N)
        for b, Xj in zip(blocks, X):
            AX += b.adjoint(Xj)
        r_d = F.T @ lam + AX - c * tau
        r_p = F @ z - f * tau
        Az = [b.evaluate(z) for b in blocks]
        r_s = [A - Sj for A, Sj in zip(Az, S)]
        cz, fl = float(c @ z), float(f @ lam)
        r_g = kappa - fl + cz
        xs = _inner(X, S)
        mu = (xs + tau * kappa) / (nu + 1)

        # convergence measures on the de-homogenized point
        pres = max(float(np.abs(r_p).max(initial=0.0)) / (1 + float(np.abs(f).max(initial=0.0))),
                   max((float(np.abs(R).max(initial=0.0)) for R in r_s), default=0.0)) / tau
        dres = float(np.abs(r_d).max(initial=0.0)) / tau / (1 + float(np.abs(c).max(initial=0.0)))
        pobj, dobj = cz / tau, fl / tau
        gap = max(abs(pobj - dobj), xs / tau ** 2) / (1 + min(abs(pobj), abs(dobj)))
        last = dict(pres=pres, dres=dres, gap=gap, mu=mu, tau=tau, kappa=kappa, iteration=it)
        if settings.verbose:
            log.info("it %3d pobj %+.9e dobj %+.9e pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e",
                     it, pobj * c_scale * f_scale, dobj * c_scale * f_scale, pres, dres, gap, tau, kappa)

        if pres <= settings.tol_feas:
            if gap <= settings.tol_gap and dres <= settings.tol_feas:
                return _optimal(problem, z, lam, X, tau, f_scale, c_scale, dres, gap, it)
            if (gap <= settings.tol_gap_relaxed and dres <= settings.tol_dual_relaxed
                    and (fallback is None or (dres, gap) < (fallback[-3], fallback[-2]))):
                fallback = (z.copy(), lam.copy(), [Xj.copy() for Xj in X], tau, dres, gap, it)

        if fl > 0:
            farkas = max(float(np.abs(F.T @ lam + AX).max(initial=0.0)), 0.0) / fl
            log.debug("it %d farkas residual %.2e (f.lam %.2e)", it, farkas, fl)
            if farkas <= 1e-6 and (kappa > tau or farkas <= settings.tol_cert):
                cert = Certificate(lam / fl, [Xj / fl for Xj in X])
                chk = certificate_margin(problem, cert, settings.certificate_radius)
                if chk.valid and chk.margin >= settings.tol_cert:
                    log.debug("certificate accepted at iteration %d (margin %.3g)", it, chk.margin)
                    return Infeasible(cert, chk, it)
                if best_cert is None or chk.margin > best_cert[1].margin:
                    best_cert = (cert, chk)
        if cz < 0 and tau < kappa:
            unb = max(float(np.abs(F @ z).max(initial=0.0)),
                      max((-float(np.linalg.eigvalsh(A)[0]) for A in Az), default=0.0)) / -cz
            if unb <= settings.tol_feas:
                return NumericalFailure("dual infeasible (objective unbounded)", it, last)

        if it == settings.max_iter:
            break
        if mu < 1e-300 or not np.isfinite(mu):
            break
        stall = stall + 1 if mu > 0.9 * prev_mu else 0
        prev_mu = min(prev_mu, mu)
        if stall >= 8:
            last["reason"] = "stalled"
            break

        try:
            scal = [_Scaling(Xj, Sj) for Xj, Sj in zip(X, S)]
            kkt = _KKT(_schur(problem, scal), F)
        except (np.linalg.LinAlgError, ValueError) as exc:
            last["reason"] = f"linear algebra failure: {exc}"
            break
        dz2, dl2 = kkt.solve(c, f)
        WrW = np.zeros(N)
        for b, sc, R in zip(blocks, scal, r_s):
            WrW += b.adjoint(sc.W @ R @ sc.W)

        def direction(DX, d_t, eta):
            b1 = -eta * r_d + eta * WrW
            for b, D in zip(blocks, DX):
                b1 -= b.adjoint(D)
            dz1, dl1 = kkt.solve(b1, -eta * r_p)
            den = -kappa / tau - f @ dl2 + c @ dz2
            dtau = (-eta * r_g - d_t / tau + f @ dl1 - c @ dz1) / den
            dz = dz1 + dtau * dz2
            dl = dl1 + dtau * dl2
            dS = [_sym(b.evaluate(dz) + eta * R) for b, R in zip(blocks, r_s)]
            dX = [_sym(D - sc.W @ dSj @ sc.W) for D, sc, dSj in zip(DX, scal, dS)]
            dkappa = (d_t - kappa * dtau) / tau
            return dz, dl, dX, dS, dtau, dkappa

        def step_length(dX, dS, dtau, dkappa, scaled=None):
            a = np.inf
            sx, ss = [], []
            for sc, dXj, dSj in zip(scal, dX, dS):
                x_t, s_t = sc.to_scaled_x(dXj), sc.to_scaled_s(dSj)
                sx.append(x_t)
                ss.append(s_t)
                a = min(a, sc.max_step(x_t), sc.max_step(s_t))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a, sx, ss

        # predictor
        aff = direction([-Xj for Xj in X], -tau * kappa, 1.0)
        a_aff, sx, ss = step_length(aff[2], aff[3], aff[4], aff[5])
        a_aff = min(1.0, a_aff)
        sigma = (1 - a_aff) ** 3
        # corrector with second-order term
        DX = []
        for sc, x_t, s_t in zip(scal, sx, ss):
            rhs = -np.diag(sc.lam ** 2) - _sym(x_t @ s_t) + sigma * mu * np.eye(len(sc.lam))
            DX.append(sc.from_scaled_rhs(rhs))
        d_t = sigma * mu - tau * kappa - aff[4] * aff[5]
        dz, dl, dX, dS, dtau, dkappa = direction(DX, d_t, 1.0 - sigma)
        a, _, _ = step_length(dX, dS, dtau, dkappa)
        a = min(1.0, _STEP * a)
        if a < 1e-10:
            last["reason"] = "step length collapsed"
            break
        z = z + a * dz
        lam = lam + a * dl
        X = [_sym(Xj + a * d) for Xj, d in zip(X, dX)]
        S = [_sym(Sj + a * d) for Sj, d in zip(S, dS)]
        tau += a * dtau
        kappa += a * dkappa
        # keep the normalization of the embedding away from under/overflow
        if tau + kappa > 1e8 or tau + kappa < 1e-8:
            s = 1.0 / (tau + kappa)
            z, lam, tau, kappa = z * s, lam * s, tau * s, kappa * s
            X = [Xj * s for Xj in X]
            S = [Sj * s for Sj in S]
            prev_mu *= s * s

    last["seconds"] = time.perf_counter() - t0
    if fallback is not None:
        zf, lf, Xf, tf, dres, gap, it = fallback
        log.debug("returning reduced-accuracy iterate %d (dual residual %.2e)", it, dres)
        return _optimal(problem, zf, lf, Xf, tf, f_scale, c_scale, dres, gap, it, reduced=True)
    reason = last.pop("reason", "iteration limit reached")
    if best_cert is not None:
        last["best_certificate_margin"] = best_cert[1].margin
    return NumericalFailure(reason, last.get("iteration", 0), last)
