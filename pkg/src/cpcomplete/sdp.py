"""Linear SDPs over a free vector ``z`` and their solve outcomes.

Problem form::

    minimize    c . z
    subject to  F z = f
                B_j(z) >= 0  (PSD)     for every block j

where each ``B_j`` is a :class:`~cpcomplete.moments.LinearMatrixStructure`.
The dual is ``max f . lam  s.t.  F^T lam + sum_j B_j^*(X_j) = c, X_j >= 0``.

Infeasibility is certified by a Farkas pair ``(lam, X)`` with ``X_j >= 0``,
``F^T lam + sum_j B_j^*(X_j) = 0`` and ``f . lam > 0``: any feasible ``z``
would give ``0 <= sum_j <X_j, B_j(z)> = -f . lam < 0``.
"""
from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .moments import LinearMatrixStructure

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class SdpProblem:
    objective: np.ndarray
    eq_matrix: sp.csr_matrix
    eq_rhs: np.ndarray
    blocks: tuple
    bounds: np.ndarray | None = None
    """A-priori bounds ``|z_i| <= bounds[i]`` valid on the feasible set (``inf`` if unknown)."""
    nonnegative: np.ndarray | None = None
    """Mask of coordinates known to be ``>= 0`` on the feasible set."""
    block_names: tuple = ()

    def __post_init__(self):
        c = np.asarray(self.objective, dtype=float).ravel()
        N = c.size
        F = sp.csr_matrix(self.eq_matrix, dtype=float)
        if F.shape[0] and F.shape[1] != N:
            raise ValueError(f"equality matrix has {F.shape[1]} columns, expected {N}")
        if F.shape[0] == 0:
            F = sp.csr_matrix((0, N))
        f = np.asarray(self.eq_rhs, dtype=float).ravel()
        if f.size != F.shape[0]:
            raise ValueError("equality right-hand side has the wrong length")
        blocks = tuple(self.blocks)
        for b in blocks:
            if b.n_vars != N:
                raise ValueError(f"block {b.name!r} is over {b.n_vars} variables, expected {N}")
        object.__setattr__(self, "objective", c)
        object.__setattr__(self, "eq_matrix", F)
        object.__setattr__(self, "eq_rhs", f)
        object.__setattr__(self, "blocks", blocks)
        if not self.block_names:
            object.__setattr__(self, "block_names", tuple(b.name for b in blocks))
        for name in ("bounds", "nonnegative"):
            v = getattr(self, name)
            if v is not None:
                v = np.asarray(v, dtype=float if name == "bounds" else bool).ravel()
                if v.size != N:
                    raise ValueError(f"{name} has the wrong length")
                object.__setattr__(self, name, v)

    @property
    def n_vars(self) -> int:
        return self.objective.size

    @property
    def n_eq(self) -> int:
        return self.eq_matrix.shape[0]

    def block_values(self, z) -> list[np.ndarray]:
        return [b.evaluate(z) for b in self.blocks]

    def adjoint(self, X: Sequence[np.ndarray]) -> np.ndarray:
        out = np.zeros(self.n_vars)
        for b, Xj in zip(self.blocks, X):
            out += b.adjoint(Xj)
        return out

    def residuals(self, z) -> tuple[float, float]:
        """(equality residual inf-norm, most negative block eigenvalue as a deficit >= 0)."""
        z = np.asarray(z, dtype=float)
        eq = float(np.max(np.abs(self.eq_matrix @ z - self.eq_rhs), initial=0.0))
        psd = 0.0
        for M in self.block_values(z):
            psd = max(psd, -float(np.linalg.eigvalsh(M)[0]))
        return eq, psd

    def dump(self) -> str:
        """Self-describing text form for cross-checking with other solvers."""
        out = io.StringIO()
        out.write("# cpcomplete SDP dump: minimize c.z s.t. F z = f, B_j(z) PSD\n")
        out.write(f"vars {self.n_vars}\n")
        out.write(f"objective {np.count_nonzero(self.objective)}\n")
        for i in np.flatnonzero(self.objective):
            out.write(f"{i} {self.objective[i]!r}\n")
        F = self.eq_matrix.tocoo()
        out.write(f"equalities {self.n_eq} {F.nnz}\n")
        for r, cidx, v in zip(F.row, F.col, F.data):
            out.write(f"{r} {cidx} {v!r}\n")
        for r, v in enumerate(self.eq_rhs):
            out.write(f"rhs {r} {v!r}\n")
        for j, b in enumerate(self.blocks):
            coo = b.op.tocoo()
            rows, cols = np.divmod(coo.row, b.side)
            upper = rows <= cols
            out.write(f"block {j} {b.side} {int(upper.sum())} {self.block_names[j] or '-'}\n")
            for r, cidx, var, v in zip(rows[upper], cols[upper], coo.col[upper], coo.data[upper]):
                out.write(f"{r} {cidx} {var} {v!r}\n")
        return out.getvalue()


@dataclass(frozen=True)
class SolverSettings:
    tol_feas: float = 1e-8
    tol_psd: float = 1e-8
    tol_cert: float = 1e-8
    tol_gap: float = 1e-7
    max_iter: int = 200
    tol_dual_relaxed: float = 1e-4
    """Dual residual accepted for a primal-feasible, small-gap iterate when the dual side stalls."""
    tol_gap_relaxed: float = 1e-5
    """Gap accepted alongside ``tol_dual_relaxed`` for such reduced-accuracy iterates."""
    certificate_radius: float = 1e8
    """Bound on ``|z_i|`` (relative to the data scale) assumed where no a-priori bound is known."""
    backend: str = "hsde"
    verbose: bool = False
    max_memory: float | None = None
    """Bytes the dense linear algebra may use; ``None`` means 60% of physical memory."""


@dataclass
class Certificate:
    """Farkas pair: equality multipliers and one PSD matrix per block."""

    eq_multipliers: np.ndarray
    block_multipliers: list

    def scaled(self, s: float) -> "Certificate":
        return Certificate(self.eq_multipliers * s, [X * s for X in self.block_multipliers])


@dataclass
class CertificateCheck:
    valid: bool
    margin: float
    """``1 - (worst-case residual contribution) / (f . lam)``; positive proves infeasibility."""
    rigorous: bool
    """True when every residual term was bounded by an a-priori bound rather than the radius."""
    dual_value: float
    residual_norm: float
    clipped_eigenvalue: float


@dataclass
class Optimal:
    z: np.ndarray
    objective: float
    primal_residual: float
    psd_residual: float
    dual_residual: float
    gap: float
    iterations: int
    eq_multipliers: np.ndarray | None = None
    block_multipliers: list | None = None
    reduced_accuracy: bool = False
    """The dual residual stalled between ``tol_feas`` and ``tol_dual_relaxed``."""
    status: str = field(default="optimal", init=False)


@dataclass
class Infeasible:
    certificate: Certificate
    check: CertificateCheck
    iterations: int
    status: str = field(default="infeasible", init=False)

    @property
    def margin(self) -> float:
        return self.check.margin


@dataclass
class NumericalFailure:
    reason: str
    iterations: int
    diagnostics: dict = field(default_factory=dict)
    status: str = field(default="numerical_failure", init=False)


SdpOutcome = Optimal | Infeasible | NumericalFailure


def _psd_part(X: np.ndarray) -> tuple[np.ndarray, float]:
    X = (np.asarray(X, dtype=float) + np.asarray(X, dtype=float).T) / 2
    w, V = np.linalg.eigh(X)
    clipped = float(max(0.0, -w.min())) if w.size else 0.0
    w = np.clip(w, 0.0, None)
    return (V * w) @ V.T, clipped


def certificate_margin(problem: SdpProblem, certificate: Certificate,
                       radius: float = SolverSettings.certificate_radius) -> CertificateCheck:
    """Recompute the Farkas inequality for ``certificate`` from scratch.

    The block multipliers are projected onto the PSD cone, so only the linear
    identity can fail.  Its residual ``r = F^T lam + sum_j B_j^*(X_j)`` enters
    through ``r . z`` for a hypothetical feasible ``z``; each term is bounded
    using the problem's a-priori bounds, the known sign of nonnegative
    coordinates, or ``radius`` times the data scale where nothing is known.
    Floating-point error in forming ``r`` is charged as well.
    """
    lam = np.asarray(certificate.eq_multipliers, dtype=float).ravel()
    if lam.size != problem.n_eq or len(certificate.block_multipliers) != len(problem.blocks):
        return CertificateCheck(False, -np.inf, False, 0.0, np.inf, 0.0)
    Xp, clipped = [], 0.0
    for X, b in zip(certificate.block_multipliers, problem.blocks):
        X = np.asarray(X, dtype=float)
        if X.shape != (b.side, b.side) or not np.all(np.isfinite(X)):
            return CertificateCheck(False, -np.inf, False, 0.0, np.inf, 0.0)
        P, c = _psd_part(X)
        Xp.append(P)
        clipped = max(clipped, c)
    dual_value = float(problem.eq_rhs @ lam)
    F = problem.eq_matrix
    r = F.T @ lam + problem.adjoint(Xp)
    # magnitude of the summands, for a rounding-error allowance
    mag = abs(F).T @ np.abs(lam)
    for P, b in zip(Xp, problem.blocks):
        mag += abs(b.op).T @ np.abs(P).ravel()
    rounding = 64 * np.finfo(float).eps * (mag + np.abs(r))
    rounding_dual = 64 * np.finfo(float).eps * float(np.abs(problem.eq_rhs) @ np.abs(lam))
    if not dual_value > 0 or not np.all(np.isfinite(r)):
        return CertificateCheck(False, -np.inf if not np.isfinite(dual_value) else min(dual_value, 0.0),
                                False, dual_value, float(np.abs(r).max(initial=0.0)), clipped)
    scale = max(1.0, float(np.abs(problem.eq_rhs).max(initial=0.0)))
    bounds = np.full(problem.n_vars, np.inf) if problem.bounds is None else problem.bounds
    nonneg = np.zeros(problem.n_vars, bool) if problem.nonnegative is None else problem.nonnegative
    # feasible z would need r . z >= f . lam; bound r . z from above
    upper = np.abs(r) + rounding
    signed = np.where(nonneg & (r + rounding <= 0), 0.0, upper)
    known = np.isfinite(bounds)
    worst = float(signed[known] @ bounds[known])
    unknown = signed[~known]
    worst += float(unknown.sum()) * radius * scale
    rigorous = not np.any(unknown > 0)
    margin = 1.0 - (worst + rounding_dual) / dual_value
    return CertificateCheck(True, margin, rigorous, dual_value, float(np.abs(r).max(initial=0.0)), clipped)


def verify_certificate(problem: SdpProblem, certificate: Certificate,
                       settings: SolverSettings | None = None) -> bool:
    """True iff the Farkas margin of ``certificate`` is at least ``tol_cert``."""
    settings = settings or SolverSettings()
    chk = certificate_margin(problem, certificate, settings.certificate_radius)
    return bool(chk.valid and chk.margin >= settings.tol_cert)


def solve(problem: SdpProblem, settings: SolverSettings | None = None) -> SdpOutcome:
    """Solve ``problem`` with the configured backend."""
    settings = settings or SolverSettings()
    if settings.backend == "hsde":
        from ._hsde import solve_hsde
        return solve_hsde(problem, settings)
    if settings.backend == "clarabel":
        return _solve_clarabel(problem, settings)
    raise ValueError(f"unknown backend {settings.backend!r}")


def _svec_operator(b: LinearMatrixStructure) -> sp.csr_matrix:
    """Rows of ``svec(B(z))`` (upper triangle, column-major, sqrt(2) off-diagonal)."""
    s = b.side
    cols_major = [(i, j) for j in range(s) for i in range(j + 1)]
    idx = [i * s + j for i, j in cols_major]
    scale = np.array([1.0 if i == j else np.sqrt(2.0) for i, j in cols_major])
    return sp.diags(scale) @ b.op[idx]


def _smat(v: np.ndarray, s: int) -> np.ndarray:
    X = np.zeros((s, s))
    k = 0
    for j in range(s):
        for i in range(j + 1):
            X[i, j] = X[j, i] = v[k] if i == j else v[k] / np.sqrt(2.0)
            k += 1
    return X


def _solve_clarabel(problem: SdpProblem, settings: SolverSettings) -> SdpOutcome:
    import clarabel

    N = problem.n_vars
    svecs = [_svec_operator(b) for b in problem.blocks]
    A = sp.vstack([problem.eq_matrix] + [-S for S in svecs]).tocsc()
    b = np.concatenate([problem.eq_rhs, np.zeros(sum(S.shape[0] for S in svecs))])
    cones = []
    if problem.n_eq:
        cones.append(clarabel.ZeroConeT(problem.n_eq))
    cones += [clarabel.PSDTriangleConeT(bl.side) for bl in problem.blocks]
    opts = clarabel.DefaultSettings()
    opts.verbose = settings.verbose
    opts.max_iter = settings.max_iter
    opts.tol_feas = settings.tol_feas
    opts.tol_gap_abs = settings.tol_gap
    opts.tol_gap_rel = settings.tol_gap
    sol = clarabel.DefaultSolver(sp.csc_matrix((N, N)), problem.objective, A, b, cones, opts).solve()
    status = str(sol.status)
    y = np.array(sol.z)
    lam = -y[: problem.n_eq]
    Xs, off = [], problem.n_eq
    for S, bl in zip(svecs, problem.blocks):
        Xs.append(_smat(y[off: off + S.shape[0]], bl.side))
        off += S.shape[0]
    if "PrimalInfeasible" in status:
        cert = Certificate(lam, Xs)
        chk = certificate_margin(problem, cert, settings.certificate_radius)
        if chk.valid and chk.margin >= settings.tol_cert:
            return Infeasible(cert, chk, sol.iterations)
        return NumericalFailure("certificate failed verification", sol.iterations,
                                {"margin": chk.margin, "backend_status": status})
    if status.endswith("Solved"):
        z = np.array(sol.x)
        eq, psd = problem.residuals(z)
        dres = float(np.abs(problem.eq_matrix.T @ (-y[: problem.n_eq]) + problem.adjoint(Xs)
                            - problem.objective).max(initial=0.0))
        return Optimal(z, float(problem.objective @ z), eq, psd, dres,
                       abs(sol.obj_val - sol.obj_val_dual), sol.iterations, lam, Xs)
    return NumericalFailure(f"clarabel status {status}", sol.iterations, {"backend_status": status})
