"""The moment-relaxation hierarchy for CP completion, plus closed-form shortcuts.

An ``E``-matrix with identifying vector ``a`` is CP-completable iff ``a`` is
the ``E``-moment vector of a finitely atomic measure on the simplex.  Order
``k`` of the hierarchy minimizes a random SOS objective over pseudo-moment
vectors ``z`` of degree ``2k`` that match ``a``, vanish on ``sum(x) = 1`` and
are nonnegative on ``x_i >= 0`` and ``1 - |x|^2 >= 0``.  Infeasibility proves
non-completability; a flat truncation of the minimizer yields atoms.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import networkx as nx
import numpy as np
import scipy.sparse as sp

from .extraction import (DecompositionReport, ExtractionFailed, ExtractionSettings, FlatWitness,
                         assemble_completion, extract_atoms, refine_decomposition, verify_decomposition)
from .moments import (Polynomial, TruncatedMomentSequence, localizing_structure, monomials_up_to,
                      random_sos_objective, simplex_polynomials, support_set, _encoder)
from .partial import (CpDecomposition, IndexSet, PartialSymMatrix, is_delta_full, max_principal_submatrix,
                      trivial_completion_all_diagonals_missing, trivial_completion_one_diagonal,
                      validate_and_reduce)
from .sdp import (Certificate, Infeasible, NumericalFailure, Optimal, SdpProblem, SolverSettings, certificate_margin,
                  solve)

log = logging.getLogger(__name__)

MODES = ("auto", "sdp-only", "fast-only")


@dataclass(frozen=True)
class DriverSettings:
    d: int = 4
    k_max: int = 6
    rank_tol: float = 1e-6
    relative_rank: bool = False
    """Scale ``rank_tol`` by the largest singular value instead of using it as is."""
    seed: int | None = 0
    retries: int = 2
    mode: str = "auto"
    submatrix_check: bool = True
    verify_tol: float = 1e-6
    solver: SolverSettings = field(default_factory=SolverSettings)

    def __post_init__(self):
        if self.d % 2 or self.d <= 2:
            raise ValueError(f"d must be an even integer > 2, got {self.d}")
        if self.d // 2 > self.k_max:
            raise ValueError(f"k_max={self.k_max} is below the starting order {self.d // 2}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")

    @property
    def k_start(self) -> int:
        return self.d // 2


@dataclass
class FlatCheck:
    flat: bool
    r: int
    rank_prev: int


@dataclass
class TruncationLog:
    t: int
    rank_prev: int
    rank: int
    flat: bool
    note: str = ""


@dataclass
class OrderLog:
    k: int
    status: str
    attempts: int = 1
    objective: float | None = None
    seconds: float = 0.0
    truncations: list = field(default_factory=list)
    note: str = ""

    def as_dict(self) -> dict:
        return {"k": self.k, "status": self.status, "attempts": self.attempts,
                "objective": self.objective, "seconds": round(self.seconds, 3), "note": self.note,
                "truncations": [t.__dict__ for t in self.truncations]}


@dataclass
class Completable:
    matrix: np.ndarray
    decomposition: CpDecomposition
    order_k: int | None
    method: str
    report: DecompositionReport | None = None
    log: list = field(default_factory=list)
    verdict: str = field(default="completable", init=False)


@dataclass
class NotCompletable:
    order_k: int | None
    certificate: Certificate | None
    reason: str
    margin: float | None = None
    log: list = field(default_factory=list)
    verdict: str = field(default="not_completable", init=False)


@dataclass
class Inconclusive:
    max_order_reached: int | None
    reason: str
    log: list = field(default_factory=list)
    verdict: str = field(default="inconclusive", init=False)


CompletionResult = Completable | NotCompletable | Inconclusive


def _moment_bounds(E: IndexSet, a: np.ndarray, n: int, k: int) -> np.ndarray:
    """A-priori bounds on ``|z_alpha|`` valid for every feasible ``z`` of order ``k``.

    ``1 - |x|^2 >= 0`` gives ``z_{2b + 2e_i} <= z_{2b}``, so ``z_{2b}`` is
    at most ``a_ii`` for any ``i`` in the support of ``b`` with a given
    diagonal, and at most ``z_0``.  With every diagonal given,
    ``z_0 = sum z_{e_i} <= sqrt(z_0) sum sqrt(a_ii)`` bounds ``z_0``.
    Off-even entries follow from ``|z_{b+g}| <= sqrt(z_{2b} z_{2g})``.
    """
    given = {i: a[p] for p, (i, j) in enumerate(E.pairs) if i == j}
    z0 = math.fsum(math.sqrt(v) for v in given.values()) ** 2 if len(given) == n else np.inf
    half = monomials_up_to(n, k).exponents
    diag_bound = np.full(len(half), z0)
    for i, v in given.items():
        diag_bound = np.where(half[:, i] > 0, np.minimum(diag_bound, v), diag_bound)
    enc = _encoder(n, 2 * k)
    N = math.comb(n + 2 * k, 2 * k)
    bounds = np.full(N, np.inf)
    for p in range(len(half)):
        pos = enc.positions(half[p][None, :] + half)
        np.minimum.at(bounds, pos, np.sqrt(diag_bound[p] * diag_bound))
    return bounds


def _nonnegative_mask(n: int, k: int) -> np.ndarray:
    """Coordinates ``2b`` and ``2b + e_i``: diagonals of the moment and ``x_i`` blocks."""
    exps = monomials_up_to(n, 2 * k).exponents
    return (exps % 2).sum(axis=1) <= 1


def assemble_sdr(a, E: IndexSet, k: int, R: Polynomial) -> SdpProblem:
    """The order-``k`` relaxation: ``min R.z`` over pseudo-moments matching ``a``."""
    n = E.n
    a = np.asarray(a, dtype=float)
    if a.size != len(E):
        raise ValueError("identifying vector length does not match the index set")
    if 2 * k < max(R.degree, 2):
        raise ValueError(f"order k={k} is too small for an objective of degree {R.degree}")
    basis = monomials_up_to(n, 2 * k)
    N = len(basis)
    c = R.coefficients(basis)
    sup = support_set(E)
    rows, cols, vals = [], [], []
    for r, alpha in enumerate(sup.exponents):
        rows.append(r); cols.append(basis.position(alpha)); vals.append(1.0)
    rhs = list(a)
    # entries of the localizing matrix of sum(x) - 1 are the functionals
    # z_{theta + e_1} + ... + z_{theta + e_n} - z_theta for |theta| <= 2k - 2
    enc = _encoder(n, 2 * k)
    thetas = monomials_up_to(n, 2 * k - 2).exponents
    r0 = len(rhs)
    for q, th in enumerate(thetas):
        r = r0 + q
        rows.append(r); cols.append(q); vals.append(-1.0)
        shifted = th[None, :] + np.eye(n, dtype=th.dtype)
        for p in enc.positions(shifted):
            rows.append(r); cols.append(int(p)); vals.append(1.0)
    rhs.extend([0.0] * len(thetas))
    F = sp.csr_matrix((vals, (rows, cols)), shape=(len(rhs), N))
    _, gs = simplex_polynomials(n)
    blocks = tuple(localizing_structure(g, n, k) for g in gs)
    return SdpProblem(c, F, np.array(rhs), blocks,
                      bounds=_moment_bounds(E, a, n, k), nonnegative=_nonnegative_mask(n, k))


def _rank(M: np.ndarray, tol: float, relative: bool) -> int:
    if M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    thr = tol * s[0] if relative else tol
    return int(np.count_nonzero(s >= thr))


def check_flat(w: TruncatedMomentSequence, t: int | None = None, rank_tol: float = 1e-6,
               relative: bool = False) -> FlatCheck:
    """Compare numerical ranks of ``M_{t-1}(w)`` and ``M_t(w)``."""
    if t is None:
        t = w.degree // 2
    if t < 1:
        raise ValueError("t must be at least 1")
    if w.degree < 2 * t:
        raise ValueError("moment sequence is too short for M_t")
    r_prev = _rank(w.moment_matrix(t - 1), rank_tol, relative)
    r = _rank(w.moment_matrix(t), rank_tol, relative)
    return FlatCheck(r_prev == r, r, r_prev)


def _specified_cliques(B: PartialSymMatrix) -> list[tuple[int, ...]]:
    """Maximal index sets whose principal submatrix is fully given."""
    G = nx.Graph()
    G.add_nodes_from(B.given_diagonal())
    G.add_edges_from((i, j) for i, j in B.index_set.pairs if i != j and i in G and j in G)
    return sorted(tuple(sorted(c)) for c in nx.find_cliques(G)) if len(G) else []


def gram_certificate(B: PartialSymMatrix, problem: SdpProblem, k: int):
    """A Farkas certificate from a fully given principal submatrix that is not PSD.

    The degree-one rows of the moment matrix carry the given entries
    ``z_{e_i + e_j} = a_ij``, so a direction ``v`` with ``v^T A_S v < 0``
    yields ``X_0 = v v^T`` on those rows and multipliers on the matching
    equalities that cancel it exactly.  Returns ``(certificate, check)`` for
    the most negative such direction, or ``None``.
    """
    best = None
    for S in _specified_cliques(B):
        A_S = np.array([[B.get(min(i, j), max(i, j)) for j in S] for i in S])
        w, V = np.linalg.eigh(A_S)
        if w[0] < 0 and (best is None or w[0] < best[0]):
            best = (w[0], S, V[:, 0])
    if best is None:
        return None
    _, S, v = best
    n = B.n
    half = monomials_up_to(n, k)
    side = problem.blocks[0].side
    X0 = np.zeros((side, side))
    rows = [half.position(tuple(int(i == s) for i in range(n))) for s in S]
    X0[np.ix_(rows, rows)] = np.outer(v, v)
    Xs = [X0] + [np.zeros((b.side, b.side)) for b in problem.blocks[1:]]
    g = problem.adjoint(Xs)
    # the first |E| equalities pin one coordinate each, in row order
    m = len(B.index_set)
    pos = problem.eq_matrix[:m].indices
    lam = np.zeros(problem.n_eq)
    lam[:m] = -g[pos]
    cert = Certificate(lam, Xs)
    return cert, certificate_margin(problem, cert, SolverSettings.certificate_radius)


_LOOSE = ExtractionSettings(clamp_tol=1e-3, moment_tol=1e-3)


def _sdp_path(B: PartialSymMatrix, settings: DriverSettings, rng: np.random.Generator,
              logs: list) -> CompletionResult:
    n = B.n
    a = B.identifying_vector
    E = B.index_set
    ext_rng = np.random.default_rng(rng.integers(2 ** 63))
    for k in range(settings.k_start, settings.k_max + 1):
        outcome = None
        entry = OrderLog(k, "pending", attempts=0)
        logs.append(entry)
        t0 = time.perf_counter()
        for attempt in range(settings.retries + 1):
            R = random_sos_objective(n, settings.d, rng)
            problem = assemble_sdr(a, E, k, R)
            if k == settings.k_start and attempt == 0:
                gram = gram_certificate(B, problem, k)
                if gram is not None and gram[1].margin >= settings.solver.tol_cert:
                    entry.attempts, entry.status = 1, "infeasible"
                    entry.note = f"non-PSD given principal submatrix; certificate margin {gram[1].margin:.3g}"
                    entry.seconds = time.perf_counter() - t0
                    return NotCompletable(k, gram[0], "relaxation infeasible", gram[1].margin, logs)
            outcome = solve(problem, settings.solver)
            entry.attempts = attempt + 1
            if not isinstance(outcome, NumericalFailure):
                break
            log.info("order %d attempt %d: %s", k, attempt + 1, outcome.reason)
            if "best_certificate_margin" in outcome.diagnostics:
                # the iterates point to infeasibility, which does not depend
                # on R; a tighter order is the useful next step
                break
        entry.seconds = time.perf_counter() - t0
        entry.status = outcome.status
        if isinstance(outcome, Infeasible):
            entry.note = f"certificate margin {outcome.margin:.3g}"
            return NotCompletable(k, outcome.certificate, "relaxation infeasible", outcome.margin, logs)
        if isinstance(outcome, NumericalFailure):
            entry.note = outcome.reason
            if "best_certificate_margin" in outcome.diagnostics:
                entry.note += "; unverified infeasibility certificate"
                continue
            return Inconclusive(k, f"solver failure at order {k}: {outcome.reason}", logs)
        entry.objective = outcome.objective
        z = TruncatedMomentSequence(monomials_up_to(n, 2 * k), outcome.z)
        for t in range(1, k + 1):
            w = z.truncate(2 * t)
            fc = check_flat(w, t, settings.rank_tol, settings.relative_rank)
            tl = TruncationLog(t, fc.rank_prev, fc.r, fc.flat)
            entry.truncations.append(tl)
            if not fc.flat:
                continue
            witness = FlatWitness(w, t, fc.r, settings.rank_tol)
            seed = ext_rng.integers(2 ** 63)
            try:
                dec = extract_atoms(witness, seed)
            except ExtractionFailed as exc:
                tl.note = f"extraction failed: {exc}"
                # ill-conditioned moment matrices lose a few digits; retry
                # loosely and let the refinement restore the fit to ``a``
                try:
                    dec = extract_atoms(witness, seed, _LOOSE)
                except ExtractionFailed:
                    continue
            report = verify_decomposition(a, E, dec, settings.verify_tol)
            if not report.passed:
                dec = refine_decomposition(a, E, dec)
                report = verify_decomposition(a, E, dec, settings.verify_tol)
                tl.note = (tl.note + "; refined against the data").lstrip("; ")
            if not report.passed:
                tl.note = f"decomposition rejected (entry error {report.max_entry_error:.3g})"
                continue
            return Completable(assemble_completion(dec, n), dec, k, "moment relaxation", report, logs)
    return Inconclusive(settings.k_max, "no flat truncation up to the maximum order", logs)


def cp_complete(A: PartialSymMatrix, settings: DriverSettings | None = None) -> CompletionResult:
    """Run the relaxation hierarchy on ``A`` (after zero-diagonal reduction)."""
    settings = settings or DriverSettings()
    red = validate_and_reduce(A)
    if not red.ok:
        return NotCompletable(None, None, red.rejection)
    if red.matrix is None:
        return _completable_from(CpDecomposition.empty(0), red, None, "zero rows")
    rng = np.random.default_rng(settings.seed)
    res = _sdp_path(red.matrix, settings, rng, [])
    if isinstance(res, Completable):
        return _completable_from(res.decomposition, red, res.order_k, res.method, res.log, settings.verify_tol)
    return res


def _completable_from(dec: CpDecomposition, red, k, method, logs=None, tol: float = 1e-6) -> Completable:
    A = red.original
    full = dec.embed(A.n, red.kept) if len(dec) else CpDecomposition.empty(A.n)
    C = assemble_completion(full, A.n)
    report = verify_decomposition(A.identifying_vector, A.index_set, full, tol)
    return Completable(C, full, k, method, report, logs or [])


def fast_path_dispatch(A: PartialSymMatrix, settings: DriverSettings | None = None) -> CompletionResult:
    """Closed-form cases first, then the hierarchy, as selected by ``settings.mode``."""
    settings = settings or DriverSettings()
    if settings.mode == "sdp-only":
        return cp_complete(A, settings)
    red = validate_and_reduce(A)
    if not red.ok:
        return NotCompletable(None, None, red.rejection)
    if red.matrix is None:
        return _completable_from(CpDecomposition.empty(0), red, None, "zero rows")
    B = red.matrix
    diag = B.given_diagonal()
    if not diag:
        dec = trivial_completion_all_diagonals_missing(B)
        return _completable_from(dec, red, None, "no diagonal given: one term per entry")
    if len(diag) == 1:
        dec = trivial_completion_one_diagonal(B)
        return _completable_from(dec, red, None, "one diagonal given: closed form")
    if settings.mode == "fast-only":
        return Inconclusive(None, "no closed-form construction applies")
    logs: list = []
    if settings.submatrix_check and not is_delta_full(B.index_set):
        sub = max_principal_submatrix(B)
        sub_res = cp_complete(sub, settings)
        for e in sub_res.log:
            e.note = ("principal submatrix; " + e.note).rstrip("; ")
        logs.extend(sub_res.log)
        if isinstance(sub_res, NotCompletable):
            sub_res.reason = "maximum principal submatrix is not completable: " + sub_res.reason
            return sub_res
    res = cp_complete(B, settings)
    res.log = logs + res.log
    if isinstance(res, Completable):
        return _completable_from(res.decomposition, red, res.order_k, res.method, res.log, settings.verify_tol)
    return res
