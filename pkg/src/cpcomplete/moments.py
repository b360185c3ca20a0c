"""Multi-index combinatorics, moment sequences and localizing matrices.

Monomials are exponent tuples ``alpha = (a_1, ..., a_n)``.  Bases are listed
in graded lexicographic order: lower total degree first and, within one
degree, lexicographically decreasing so that ``x_1`` carries the highest
priority.  For ``n = 2, d = 2`` this gives ``1, x1, x2, x1^2, x1 x2, x2^2``.

A localizing matrix ``L_q^{(k)}(z)`` is linear in the moment vector ``z``; it
is represented by :class:`LinearMatrixStructure`, a sparse operator mapping
``z`` to the flattened matrix, built once and evaluated many times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

Monomial = tuple


def _compositions(total: int, parts: int):
    """Exponent tuples of length ``parts`` summing to ``total``, lex-descending."""
    if parts == 1:
        yield (total,)
        return
    for first in range(total, -1, -1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


@dataclass(frozen=True, eq=False)
class MonomialBasis:
    """All exponents of degree ``<= degree`` in ``n`` variables, graded lex."""

    n: int
    degree: int
    monomials: tuple
    index: Mapping[tuple, int] = field(repr=False)

    def __len__(self) -> int:
        return len(self.monomials)

    def __iter__(self):
        return iter(self.monomials)

    def __getitem__(self, i: int) -> tuple:
        return self.monomials[i]

    def position(self, alpha: Sequence[int]) -> int:
        return self.index[tuple(alpha)]

    @property
    def exponents(self) -> np.ndarray:
        """``(len, n)`` integer array of the exponents."""
        return _exponent_array(self.n, self.degree)

    def size_up_to(self, d: int) -> int:
        """Number of monomials of degree ``<= d`` (a prefix of this basis)."""
        return math.comb(self.n + d, d)


@lru_cache(maxsize=None)
def monomials_up_to(n: int, d: int) -> MonomialBasis:
    if n < 1 or d < 0:
        raise ValueError(f"need n >= 1 and d >= 0, got n={n}, d={d}")
    mons = tuple(m for deg in range(d + 1) for m in _compositions(deg, n))
    return MonomialBasis(n, d, mons, {m: i for i, m in enumerate(mons)})


@lru_cache(maxsize=None)
def _exponent_array(n: int, d: int) -> np.ndarray:
    arr = np.array(monomials_up_to(n, d).monomials, dtype=np.int64).reshape(-1, n)
    arr.setflags(write=False)
    return arr


def unit(n: int, i: int) -> tuple:
    """Exponent of ``x_{i+1}`` (zero-based ``i``)."""
    e = [0] * n
    e[i] = 1
    return tuple(e)


class _Encoder:
    """Vectorized exponent -> basis position lookup via mixed-radix keys."""

    def __init__(self, basis: MonomialBasis):
        self.radix = basis.degree + 1
        self.weights = self.radix ** np.arange(basis.n, dtype=np.int64)
        keys = basis.exponents @ self.weights
        self.order = np.argsort(keys)
        self.sorted_keys = keys[self.order]

    def positions(self, exps: np.ndarray) -> np.ndarray:
        keys = np.asarray(exps, dtype=np.int64) @ self.weights
        loc = np.searchsorted(self.sorted_keys, keys)
        loc = np.clip(loc, 0, len(self.sorted_keys) - 1)
        if not np.array_equal(self.sorted_keys[loc], keys) or np.any(exps > self.radix - 1):
            raise ValueError("exponent outside the basis")
        return self.order[loc]


@lru_cache(maxsize=None)
def _encoder(n: int, d: int) -> _Encoder:
    return _Encoder(monomials_up_to(n, d))


class Polynomial:
    """Sparse real polynomial ``{exponent tuple: coefficient}``."""

    __slots__ = ("n", "terms")

    def __init__(self, n: int, terms: Mapping[Sequence[int], float] | None = None):
        self.n = n
        clean: dict[tuple, float] = {}
        for alpha, c in (terms or {}).items():
            alpha = tuple(int(a) for a in alpha)
            if len(alpha) != n or min(alpha, default=0) < 0:
                raise ValueError(f"bad exponent {alpha} for n={n}")
            c = float(c)
            if c != 0.0:
                clean[alpha] = clean.get(alpha, 0.0) + c
        self.terms = {a: c for a, c in clean.items() if c != 0.0}

    @classmethod
    def constant(cls, n: int, c: float = 1.0) -> "Polynomial":
        return cls(n, {(0,) * n: c})

    @classmethod
    def variable(cls, n: int, i: int) -> "Polynomial":
        return cls(n, {unit(n, i): 1.0})

    @property
    def degree(self) -> int:
        return max((sum(a) for a in self.terms), default=0)

    def __add__(self, other):
        other = self._coerce(other)
        out = dict(self.terms)
        for a, c in other.terms.items():
            out[a] = out.get(a, 0.0) + c
        return Polynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.n, {a: -c for a, c in self.terms.items()})

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return Polynomial(self.n, {a: c * other for a, c in self.terms.items()})
        other = self._coerce(other)
        out: dict[tuple, float] = {}
        for a, ca in self.terms.items():
            for b, cb in other.terms.items():
                key = tuple(x + y for x, y in zip(a, b))
                out[key] = out.get(key, 0.0) + ca * cb
        return Polynomial(self.n, out)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(self.n)
        for _ in range(k):
            out = out * self
        return out

    def __eq__(self, other):
        return isinstance(other, Polynomial) and self.n == other.n and self.terms == other.terms

    def __repr__(self):
        return f"Polynomial(n={self.n}, terms={self.terms})"

    def _coerce(self, other) -> "Polynomial":
        if isinstance(other, Polynomial):
            if other.n != self.n:
                raise ValueError("variable count mismatch")
            return other
        return Polynomial.constant(self.n, float(other))

    def __call__(self, x: Sequence[float]) -> float:
        x = np.asarray(x, dtype=float)
        return float(sum(c * np.prod(x ** np.array(a)) for a, c in self.terms.items()))

    def coefficients(self, basis: MonomialBasis) -> np.ndarray:
        """Dense coefficient vector aligned with ``basis`` (``vec(p)``)."""
        if self.degree > basis.degree:
            raise ValueError("polynomial degree exceeds basis degree")
        v = np.zeros(len(basis))
        for a, c in self.terms.items():
            v[basis.position(a)] = c
        return v

    @classmethod
    def from_coefficients(cls, basis: MonomialBasis, coeffs: Iterable[float]) -> "Polynomial":
        return cls(basis.n, {m: c for m, c in zip(basis.monomials, coeffs)})


def simplex_polynomials(n: int) -> tuple[Polynomial, list[Polynomial]]:
    """``h = x_1 + ... + x_n - 1`` and ``g = (1, x_1, ..., x_n, 1 - |x|^2)``."""
    xs = [Polynomial.variable(n, i) for i in range(n)]
    h = sum(xs, Polynomial(n)) - 1.0
    ball = 1.0 - sum((x * x for x in xs), Polynomial(n))
    return h, [Polynomial.constant(n)] + xs + [ball]


@dataclass(frozen=True, eq=False)
class TruncatedMomentSequence:
    """Vector ``z`` indexed by the monomials of ``basis``."""

    basis: MonomialBasis
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != (len(self.basis),):
            raise ValueError(
                f"expected {len(self.basis)} moments for n={self.basis.n}, "
                f"d={self.basis.degree}; got shape {vals.shape}")
        object.__setattr__(self, "values", vals)

    @property
    def n(self) -> int:
        return self.basis.n

    @property
    def degree(self) -> int:
        return self.basis.degree

    def __getitem__(self, alpha: Sequence[int]) -> float:
        return float(self.values[self.basis.position(alpha)])

    def truncate(self, d: int) -> "TruncatedMomentSequence":
        """``z|_d``: graded lex makes this a prefix."""
        if d > self.degree:
            raise ValueError("cannot truncate to a higher degree")
        b = monomials_up_to(self.n, d)
        return TruncatedMomentSequence(b, self.values[: len(b)].copy())

    def moment_matrix(self, t: int) -> np.ndarray:
        return localizing_structure(Polynomial.constant(self.n), self.n, t).evaluate(self.values[: _count(self.n, 2 * t)])


def _count(n: int, d: int) -> int:
    return math.comb(n + d, d)


@dataclass(frozen=True, eq=False)
class SupportSet:
    """Degree-two exponents ``e_i + e_j`` for the pairs of an index set."""

    n: int
    pairs: tuple
    exponents: tuple

    def __len__(self):
        return len(self.pairs)

    def exponent_of(self, pair) -> tuple:
        return self.exponents[self.pairs.index(tuple(pair))]

    def pair_of(self, alpha) -> tuple:
        return self.pairs[self.exponents.index(tuple(alpha))]


def support_set(index_set) -> SupportSet:
    """Map every (zero-based) pair ``(i, j)`` of ``index_set`` to ``e_i + e_j``."""
    n = index_set.n
    pairs = tuple(index_set.pairs)
    exps = []
    for i, j in pairs:
        e = [0] * n
        e[i] += 1
        e[j] += 1
        exps.append(tuple(e))
    return SupportSet(n, pairs, tuple(exps))


def riesz_apply(z: TruncatedMomentSequence, p: Polynomial) -> float:
    """Riesz functional: ``sum_alpha p_alpha z_alpha``."""
    if p.degree > z.degree:
        raise ValueError(f"polynomial degree {p.degree} exceeds moment degree {z.degree}")
    return float(sum(c * z[a] for a, c in p.terms.items()))


class LinearMatrixStructure:
    """Symmetric ``s x s`` matrix whose entries are linear forms in ``z``.

    Stored as a sparse ``(s*s, N)`` operator over the full (both triangles)
    row-major flattening, so ``evaluate(z) = (op @ z).reshape(s, s)`` and the
    adjoint is ``op.T @ vec(Y)``.
    """

    def __init__(self, side: int, n_vars: int, rows, cols, var, coef, name: str = "",
                 row_basis: MonomialBasis | None = None):
        self.side = int(side)
        self.n_vars = int(n_vars)
        self.name = name
        self.row_basis = row_basis
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        flat = rows * self.side + cols
        op = sp.csr_matrix((np.asarray(coef, dtype=float), (flat, np.asarray(var, dtype=np.int64))),
                           shape=(self.side * self.side, self.n_vars))
        op.sum_duplicates()
        op.eliminate_zeros()
        self.op = op
        self._check_symmetric()
        self._by_var = None
        self._upper = None
        # optional (base, [(coef, positions)]): the matrix equals base evaluated
        # at y = sum_alpha coef_alpha * z[positions_alpha]
        self.hankel = None

    @classmethod
    def from_entries(cls, side: int, n_vars: int, entries: Mapping[tuple, Iterable[tuple]],
                     name: str = "") -> "LinearMatrixStructure":
        """Build from ``{(i, j): [(coef, var), ...]}`` given on ``i <= j``."""
        rows, cols, var, coef = [], [], [], []
        for (i, j), terms in entries.items():
            if i > j:
                raise ValueError("give entries on the upper triangle only")
            for c, v in terms:
                rows.append(i); cols.append(j); var.append(v); coef.append(c)
                if i != j:
                    rows.append(j); cols.append(i); var.append(v); coef.append(c)
        return cls(side, n_vars, rows, cols, var, coef, name=name)

    def _check_symmetric(self):
        s = self.side
        perm = (np.arange(s * s).reshape(s, s).T).ravel()
        if (self.op[perm] - self.op).count_nonzero():
            raise ValueError(f"structure {self.name!r} is not symmetric")

    def evaluate(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        return (self.op @ z).reshape(self.side, self.side)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """``A^*``: the vector ``v`` with ``<Y, evaluate(z)> = v . z``."""
        return self.op.T @ np.asarray(y, dtype=float).ravel()

    def entry_terms(self, i: int, j: int) -> list[tuple[float, int]]:
        row = self.op.getrow(i * self.side + j)
        return sorted(zip(row.data.tolist(), row.indices.tolist()), key=lambda t: t[1])

    def max_var(self) -> int:
        return int(self.op.indices.max()) if self.op.nnz else -1

    def by_variable(self):
        """Per-variable ``(rows, cols, coefs)`` of the nonzeros, cached."""
        if self._by_var is None:
            csc = self.op.tocsc()
            out = []
            for b in range(self.n_vars):
                sl = slice(csc.indptr[b], csc.indptr[b + 1])
                flat = csc.indices[sl]
                out.append((flat // self.side, flat % self.side, csc.data[sl]))
            self._by_var = out
        return self._by_var

    def upper_form(self):
        """Per-variable upper-triangle nonzeros ``(rows, cols, coefs)``, cached.

        Diagonal coefficients are halved, so the matrix ``T`` built from the
        list for variable ``b`` satisfies ``T + T^T = B_b``.
        """
        if self._upper is None:
            s = self.side
            coo = self.op.tocoo()
            r, c = np.divmod(coo.row, s)
            keep = r <= c
            r, c, var = r[keep], c[keep], coo.col[keep]
            coef = np.where(r == c, 0.5, 1.0) * coo.data[keep]
            order = np.argsort(var, kind="stable")
            bounds = np.searchsorted(var[order], np.arange(self.n_vars + 1))
            self._upper = [(r[sel], c[sel], coef[sel])
                           for sel in (order[bounds[b]:bounds[b + 1]] for b in range(self.n_vars))]
        return self._upper


@lru_cache(maxsize=None)
def _localizing_cached(terms_key: tuple, n: int, k: int) -> LinearMatrixStructure:
    q = Polynomial(n, dict(terms_key))
    half = math.ceil(q.degree / 2)
    if k < half:
        raise ValueError(f"order k={k} too small for a degree-{q.degree} localizer")
    row_basis = monomials_up_to(n, k - half)
    var_basis = monomials_up_to(n, 2 * k)
    enc = _encoder(n, 2 * k)
    exps = row_basis.exponents
    s = len(row_basis)
    ii, jj = np.triu_indices(s)
    pair_sum = exps[ii] + exps[jj]
    rows, cols, var, coef = [], [], [], []
    for theta, c in q.terms.items():
        pos = enc.positions(pair_sum + np.array(theta, dtype=np.int64))
        for r, cc in ((ii, jj), (jj, ii)):
            mask = slice(None) if r is ii else (ii != jj)
            rows.append(r[mask]); cols.append(cc[mask]); var.append(pos[mask])
            coef.append(np.full(pos[mask].shape, c))
    struct = LinearMatrixStructure(
        s, len(var_basis), np.concatenate(rows), np.concatenate(cols),
        np.concatenate(var), np.concatenate(coef), name=_poly_name(q), row_basis=row_basis)
    if q.terms != {(0,) * n: 1.0}:
        # L_q(z) = M_{k-half}(y) with y_theta = sum_alpha q_alpha z_{theta+alpha}
        local = monomials_up_to(n, 2 * (k - half)).exponents
        struct.hankel = (moment_structure(n, k - half),
                         [(c, enc.positions(local + np.array(a, dtype=np.int64))) for a, c in q.terms.items()])
    return struct


def _poly_name(q: Polynomial) -> str:
    parts = []
    for a, c in sorted(q.terms.items(), key=lambda t: (sum(t[0]), [-e for e in t[0]])):
        mono = "*".join(f"x{i + 1}" + (f"^{e}" if e > 1 else "") for i, e in enumerate(a) if e)
        parts.append(f"{c:+g}" + ("*" + mono if mono else ""))
    return "".join(parts) or "0"


def localizing_structure(q: Polynomial, n: int, k: int) -> LinearMatrixStructure:
    """Structure of the ``k``-th localizing matrix of ``q`` over moments of degree ``2k``.

    Entry ``(beta, gamma)`` is ``sum_theta q_theta z_{beta+gamma+theta}`` with
    ``beta, gamma`` ranging over monomials of degree ``<= k - ceil(deg q / 2)``.
    ``q = 1`` yields the moment matrix ``M_k(z)``.
    """
    if q.n != n:
        raise ValueError("polynomial has a different variable count")
    return _localizing_cached(tuple(sorted(q.terms.items())), n, k)


def moment_structure(n: int, k: int) -> LinearMatrixStructure:
    return localizing_structure(Polynomial.constant(n), n, k)


def atomic_tms(atoms, weights, degree: int, n: int | None = None) -> TruncatedMomentSequence:
    """Moments ``z_alpha = sum_i rho_i u_i^alpha`` of a finitely atomic measure."""
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if atoms.size == 0:
        if n is None:
            raise ValueError("n is required for an empty atom list")
        b = monomials_up_to(n, degree)
        return TruncatedMomentSequence(b, np.zeros(len(b)))
    atoms = atoms.reshape(len(weights), -1)
    n = atoms.shape[1]
    b = monomials_up_to(n, degree)
    vals = monomial_values(atoms, b).T @ weights
    return TruncatedMomentSequence(b, vals)


def monomial_values(points: np.ndarray, basis: MonomialBasis) -> np.ndarray:
    """``(m, len(basis))`` matrix of ``u_i^alpha`` for each point ``u_i``."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    exps = basis.exponents
    out = np.ones((points.shape[0], len(basis)))
    for i in range(basis.n):
        out *= points[:, i:i + 1] ** exps[:, i][None, :]
    return out


def random_sos_objective(n: int, d: int, rng=None, J: np.ndarray | None = None) -> Polynomial:
    """``R = [x]_{d/2}^T J^T J [x]_{d/2}`` with a standard Gaussian square ``J``.

    ``rng`` is a seed or ``numpy.random.Generator``; ``J`` overrides the draw.
    """
    if d % 2 or d <= 2:
        raise ValueError(f"d must be an even integer > 2, got {d}")
    basis = monomials_up_to(n, d // 2)
    s = len(basis)
    if J is None:
        rng = np.random.default_rng(rng)
        J = rng.standard_normal((s, s))
    J = np.asarray(J, dtype=float)
    if J.shape != (s, s):
        raise ValueError(f"J must be {s}x{s}")
    G = J.T @ J
    exps = basis.exponents
    terms: dict[tuple, float] = {}
    for p in range(s):
        for q in range(s):
            key = tuple((exps[p] + exps[q]).tolist())
            terms[key] = terms.get(key, 0.0) + G[p, q]
    return Polynomial(n, terms)
