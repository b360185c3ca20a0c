"""Partial symmetric matrices, preprocessing and closed-form CP constructions.

Indices are zero-based.  A partial matrix stores its given entries on the
upper triangle, keyed by ``(i, j)`` with ``i <= j``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np


@dataclass(frozen=True)
class IndexSet:
    """The set ``E`` of given positions of an ``n x n`` symmetric matrix."""

    n: int
    pairs: tuple

    def __post_init__(self):
        if int(self.n) < 1:
            raise ValueError(f"matrix order must be positive, got {self.n}")
        seen = set()
        for p in self.pairs:
            i, j = p
            if not (0 <= i <= j < self.n):
                raise ValueError(f"pair {p} violates 0 <= i <= j < n={self.n}")
            if (i, j) in seen:
                raise ValueError(f"duplicate pair {p}")
            seen.add((i, j))
        object.__setattr__(self, "pairs", tuple(sorted((int(i), int(j)) for i, j in self.pairs)))

    def __contains__(self, pair) -> bool:
        i, j = pair
        return (min(i, j), max(i, j)) in set(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def diagonal(self) -> tuple:
        """Indices ``i`` with ``(i, i)`` in ``E``."""
        return tuple(i for i, j in self.pairs if i == j)


class PartialSymMatrix:
    """An ``E``-matrix: given entries ``a_ij`` for ``(i, j)`` in ``E``."""

    def __init__(self, n: int, values: Mapping[tuple, float]):
        clean = {}
        for (i, j), v in values.items():
            i, j = int(i), int(j)
            key = (min(i, j), max(i, j))
            if key in clean and clean[key] != float(v):
                raise ValueError(f"conflicting values for entry {key}")
            clean[key] = float(v)
        self.index_set = IndexSet(n, tuple(clean))
        self.values = {p: clean[p] for p in self.index_set.pairs}

    @classmethod
    def from_array(cls, A) -> "PartialSymMatrix":
        """Build from a square array with ``nan`` marking missing entries."""
        A = np.asarray(A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("expected a square array")
        n = A.shape[0]
        mask = ~np.isnan(A)
        if not np.array_equal(mask, mask.T):
            raise ValueError("missing-entry pattern is not symmetric")
        vals = {}
        for i in range(n):
            for j in range(i, n):
                if mask[i, j]:
                    if A[i, j] != A[j, i]:
                        raise ValueError(f"entries ({i},{j}) and ({j},{i}) differ")
                    vals[(i, j)] = A[i, j]
        return cls(n, vals)

    @property
    def n(self) -> int:
        return self.index_set.n

    @property
    def pairs(self) -> tuple:
        return self.index_set.pairs

    @property
    def identifying_vector(self) -> np.ndarray:
        return np.array([self.values[p] for p in self.pairs])

    def given_diagonal(self) -> tuple:
        return self.index_set.diagonal

    def get(self, i: int, j: int, default=None):
        return self.values.get((min(i, j), max(i, j)), default)

    def to_array(self, fill: float = np.nan) -> np.ndarray:
        A = np.full((self.n, self.n), fill)
        for (i, j), v in self.values.items():
            A[i, j] = A[j, i] = v
        return A

    def restrict(self, indices: Iterable[int]) -> "PartialSymMatrix":
        """Partial principal submatrix on ``indices`` (renumbered in order)."""
        idx = list(indices)
        pos = {g: l for l, g in enumerate(idx)}
        vals = {(pos[i], pos[j]): v for (i, j), v in self.values.items() if i in pos and j in pos}
        return PartialSymMatrix(len(idx), vals)

    def with_values(self, values: Mapping[tuple, float]) -> "PartialSymMatrix":
        return PartialSymMatrix(self.n, values)

    def __eq__(self, other):
        return isinstance(other, PartialSymMatrix) and self.n == other.n and self.values == other.values

    def __repr__(self):
        return f"PartialSymMatrix(n={self.n}, values={self.values})"


@dataclass(frozen=True)
class CpDecomposition:
    """``C = sum_i rho_i u_i u_i^T`` with atoms ``u_i`` in the simplex."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float).ravel()
        u = np.asarray(self.atoms, dtype=float)
        if w.size == 0:
            u = u.reshape(0, u.shape[-1] if u.ndim == 2 else 0)
        else:
            u = u.reshape(w.size, -1)
        object.__setattr__(self, "atoms", u)
        object.__setattr__(self, "weights", w)

    @classmethod
    def empty(cls, n: int) -> "CpDecomposition":
        return cls(np.zeros((0, n)), np.zeros(0))

    @classmethod
    def from_vectors(cls, vectors, n: int | None = None) -> "CpDecomposition":
        """Normalize nonnegative ``v`` into ``u = v / sum(v)``, ``rho = sum(v)^2``."""
        vecs = [np.asarray(v, dtype=float) for v in vectors]
        vecs = [v for v in vecs if v.sum() > 0]
        if not vecs:
            if n is None:
                raise ValueError("n is required for an empty decomposition")
            return cls.empty(n)
        V = np.vstack(vecs)
        if np.any(V < 0):
            raise ValueError("CP factors must be entrywise nonnegative")
        s = V.sum(axis=1)
        return cls(V / s[:, None], s ** 2)

    @property
    def n(self) -> int:
        return self.atoms.shape[1]

    def __len__(self) -> int:
        return self.weights.size

    def matrix(self) -> np.ndarray:
        C = (self.atoms.T * self.weights) @ self.atoms
        return (C + C.T) / 2

    def factor(self) -> np.ndarray:
        """Nonnegative ``B`` (``n x m``) with ``C = B B^T``."""
        return (self.atoms * np.sqrt(self.weights)[:, None]).T

    def embed(self, n: int, indices) -> "CpDecomposition":
        """Lift atoms into ``R^n`` placing coordinate ``l`` at ``indices[l]``."""
        U = np.zeros((len(self), n))
        U[:, list(indices)] = self.atoms
        return CpDecomposition(U, self.weights.copy())


@dataclass
class Reduction:
    """Outcome of :func:`validate_and_reduce`.

    ``matrix`` is the reduced partial matrix over ``kept``; it is ``None``
    when the input is rejected or when every row was removed.  ``removed``
    lists rows forced to zero.
    """

    original: PartialSymMatrix
    matrix: PartialSymMatrix | None
    kept: tuple
    removed: tuple
    rejection: str | None = None

    @property
    def ok(self) -> bool:
        return self.rejection is None

    def embed(self, C: np.ndarray) -> np.ndarray:
        """Re-embed a completion of the reduced matrix with zero rows/columns."""
        full = np.zeros((self.original.n, self.original.n))
        idx = np.array(self.kept, dtype=int)
        full[np.ix_(idx, idx)] = C
        return full


def validate_and_reduce(A: PartialSymMatrix) -> Reduction:
    """Reject negative data and strip rows whose given diagonal entry is zero."""
    for (i, j), v in A.values.items():
        if not np.isfinite(v):
            raise ValueError(f"entry ({i},{j}) is not finite")
        if v < 0:
            return Reduction(A, None, (), (), f"given entry ({i},{j}) = {v} is negative")
    removed = []
    for i in A.given_diagonal():
        if A.values[(i, i)] == 0.0:
            for (p, q), v in A.values.items():
                if i in (p, q) and p != q and v > 0:
                    return Reduction(A, None, (), (),
                                     f"diagonal ({i},{i}) is zero but entry ({p},{q}) = {v} is positive")
            removed.append(i)
    kept = tuple(i for i in range(A.n) if i not in removed)
    if not kept:
        # every row is forced to zero; the zero matrix completes A
        return Reduction(A, None, (), tuple(removed))
    return Reduction(A, A.restrict(kept) if removed else A, kept, tuple(removed))


def is_delta_full(E: IndexSet) -> bool:
    """True iff every diagonal position is given."""
    return set(E.diagonal) == set(range(E.n))


def max_principal_submatrix(A: PartialSymMatrix) -> PartialSymMatrix:
    """Partial submatrix on the rows whose diagonal entries are given."""
    diag = A.given_diagonal()
    if not diag:
        raise ValueError("no diagonal entry is given; the maximum principal submatrix is empty")
    return A.restrict(diag)


def _require_nonnegative(A: PartialSymMatrix):
    bad = [p for p, v in A.values.items() if v < 0]
    if bad:
        raise ValueError(f"entries {bad} are negative")


def trivial_completion_all_diagonals_missing(A: PartialSymMatrix) -> CpDecomposition:
    """One atom ``(e_i + e_j)/2`` with weight ``4 a_ij`` per given pair."""
    if A.given_diagonal():
        raise ValueError("this construction needs every diagonal entry to be missing")
    _require_nonnegative(A)
    vecs = []
    for (i, j), v in A.values.items():
        e = np.zeros(A.n)
        e[i] += math.sqrt(v)
        e[j] += math.sqrt(v)
        vecs.append(e)
    return CpDecomposition.from_vectors(vecs, n=A.n)


def trivial_completion_one_diagonal(A: PartialSymMatrix) -> CpDecomposition:
    """Closed-form completion when exactly one diagonal entry is given.

    With ``r`` the given diagonal index and ``m`` the number of given entries
    in row ``r`` (diagonal included): if ``m == 1`` the row contributes
    ``a_rr e_r e_r^T``; otherwise each given ``(r, j)`` contributes the
    rank-one term of ``sqrt(a_rr/(m-1)) e_r + sqrt((m-1)/a_rr) a_rj e_j``.
    Every other given pair adds ``a_ij (e_i + e_j)(e_i + e_j)^T``.
    """
    diag = A.given_diagonal()
    if len(diag) != 1:
        raise ValueError(f"expected exactly one given diagonal entry, found {len(diag)}")
    _require_nonnegative(A)
    r = diag[0]
    arr = A.values[(r, r)]
    if arr <= 0:
        raise ValueError("the given diagonal entry must be positive")
    row = [(p, q) for (p, q) in A.pairs if r in (p, q) and p != q]
    m = len(row) + 1
    vecs = []
    if m == 1:
        e = np.zeros(A.n)
        e[r] = math.sqrt(arr)
        vecs.append(e)
    else:
        for p, q in row:
            j = q if p == r else p
            e = np.zeros(A.n)
            e[r] = math.sqrt(arr / (m - 1))
            e[j] = math.sqrt((m - 1) / arr) * A.values[(p, q)]
            vecs.append(e)
    for (i, j), v in A.values.items():
        if r in (i, j):
            continue
        e = np.zeros(A.n)
        e[i] += math.sqrt(v)
        e[j] += math.sqrt(v)
        vecs.append(e)
    return CpDecomposition.from_vectors(vecs, n=A.n)


def perturb_given_diagonals(A: PartialSymMatrix, eps: float) -> PartialSymMatrix:
    """Add ``eps`` to every given diagonal entry."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    vals = dict(A.values)
    for i in A.given_diagonal():
        vals[(i, i)] += eps
    return A.with_values(vals)


@dataclass
class PerturbedCompletion:
    """CP matrix agreeing with ``A`` off the given diagonals, which gain ``eps``."""

    matrix: np.ndarray
    decomposition: CpDecomposition | None
    filled_with_one: tuple = field(default_factory=tuple)


def perturbed_completion(A: PartialSymMatrix, sub_completion, eps: float,
                         sub_decomposition: CpDecomposition | None = None) -> PerturbedCompletion:
    """Explicit CP completion of ``A`` with its given diagonals shifted by ``eps``.

    ``sub_completion`` is a CP completion of the maximum principal submatrix
    (ordered as ``A.given_diagonal()``).  One missing diagonal index ``m`` is
    handled by ``[[C', 0], [0, 1]] + sum_i v_i v_i^T`` with
    ``v_i = sqrt(eps) e_i + a_im / sqrt(eps) e_m``; missing ``a_im`` are set
    to 1.  Several missing diagonals are added one at a time with ``eps/r``
    per step so the given diagonals move by exactly ``eps`` in total.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    _require_nonnegative(A)
    known = list(A.given_diagonal())
    missing = [i for i in range(A.n) if i not in known]
    C = np.array(sub_completion, dtype=float).reshape(len(known), len(known))
    if not missing:
        C = C + eps * np.eye(A.n)
        dec = None
        if sub_decomposition is not None:
            dec = CpDecomposition(
                np.vstack([sub_decomposition.atoms, np.eye(A.n)]),
                np.concatenate([sub_decomposition.weights, np.full(A.n, eps)]))
        return PerturbedCompletion(C, dec)
    step = eps / len(missing)
    filled = []
    vecs = []
    if sub_decomposition is not None:
        vecs = [a * math.sqrt(w) for a, w in zip(sub_decomposition.atoms, sub_decomposition.weights)]
    for m in missing:
        size = len(known)
        C_new = np.zeros((size + 1, size + 1))
        C_new[:size, :size] = C
        C_new[size, size] = 1.0
        vecs = [np.append(v, 0.0) for v in vecs]
        vecs.append(np.eye(size + 1)[size])
        for loc, i in enumerate(known):
            a_im = A.get(i, m)
            if a_im is None:
                a_im = 1.0
                filled.append((min(i, m), max(i, m)))
            v = np.zeros(size + 1)
            v[loc] = math.sqrt(step)
            v[size] = a_im / math.sqrt(step)
            C_new += np.outer(v, v)
            vecs.append(v)
        known.append(m)
        C = C_new
    order = np.argsort(known)
    C = C[np.ix_(order, order)]
    dec = None
    if sub_decomposition is not None:
        dec = CpDecomposition.from_vectors([v[order] for v in vecs], n=A.n)
    return PerturbedCompletion(C, dec, tuple(filled))
