"""Matrix file parsing and result documents.

Matrix files are plain text.  ``#`` starts a comment; blank lines are
ignored.  The first remaining line holds the order ``n``, followed by ``n``
rows of ``n`` whitespace-separated fields, each a decimal number or ``*``
for a missing entry::

    # a 3x3 example
    3
    1 1 1
    1 1 1
    1 1 *
"""
from __future__ import annotations

import json
import math
from typing import Any

import numpy as np

from .driver import Completable, CompletionResult, DriverSettings, NotCompletable
from .partial import PartialSymMatrix

FORMAT_VERSION = 1


class MatrixParseError(ValueError):
    pass


def parse_matrix(document: str) -> PartialSymMatrix:
    lines = []
    for lineno, raw in enumerate(document.splitlines(), 1):
        text = raw.split("#", 1)[0].strip()
        if text:
            lines.append((lineno, text))
    if not lines:
        raise MatrixParseError("empty matrix file")
    lineno, head = lines[0]
    try:
        n = int(head)
    except ValueError:
        raise MatrixParseError(f"line {lineno}: expected the matrix order, got {head!r}") from None
    if n < 1:
        raise MatrixParseError(f"line {lineno}: matrix order must be positive")
    rows = lines[1:]
    if len(rows) != n:
        raise MatrixParseError(f"expected {n} matrix rows, found {len(rows)}")
    A = np.full((n, n), np.nan)
    for r, (lineno, text) in enumerate(rows):
        fields = text.split()
        if len(fields) != n:
            raise MatrixParseError(f"line {lineno}: expected {n} fields, found {len(fields)}")
        for c, tok in enumerate(fields):
            if tok == "*":
                continue
            try:
                v = float(tok)
            except ValueError:
                raise MatrixParseError(f"line {lineno}: bad field {tok!r}") from None
            if not math.isfinite(v):
                raise MatrixParseError(f"line {lineno}: non-finite field {tok!r}")
            A[r, c] = v
    given = ~np.isnan(A)
    for i in range(n):
        for j in range(i + 1, n):
            if given[i, j] != given[j, i]:
                raise MatrixParseError(f"entry ({i + 1},{j + 1}) is given on one side of the diagonal only")
            if given[i, j] and A[i, j] != A[j, i]:
                raise MatrixParseError(f"entries ({i + 1},{j + 1}) and ({j + 1},{i + 1}) differ")
    return PartialSymMatrix.from_array(A)


def format_matrix(A: PartialSymMatrix) -> str:
    arr = A.to_array()
    out = [str(A.n)]
    for row in arr:
        out.append(" ".join("*" if np.isnan(v) else repr(float(v)) for v in row))
    return "\n".join(out) + "\n"


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _matrix(M):
    return [[_num(v) for v in row] for row in np.asarray(M)]


def _partial(A: PartialSymMatrix):
    return [[None if np.isnan(v) else float(v) for v in row] for row in A.to_array()]


def result_document(result: CompletionResult, settings: DriverSettings, A: PartialSymMatrix,
                    perturb: float | None = None, solved: PartialSymMatrix | None = None) -> dict:
    """Structured summary of a run; ``timestamp`` is the only run-dependent field."""
    solved = solved or A
    doc: dict[str, Any] = {
        "format_version": FORMAT_VERSION,
        "verdict": result.verdict,
        "n": A.n,
        "input": _partial(A),
        "solved_input": None if solved is A else _partial(solved),
        "order_k": getattr(result, "order_k", None) if not hasattr(result, "max_order_reached")
        else result.max_order_reached,
        "completed_matrix": None,
        "decomposition": None,
        "verification": None,
        "certificate": None,
        "reason": getattr(result, "reason", None) or getattr(result, "method", None),
        "log": [e.as_dict() for e in result.log],
        "settings": {"d": settings.d, "k_max": settings.k_max, "rank_tol": settings.rank_tol,
                     "feas_tol": settings.solver.tol_feas, "seed": settings.seed, "mode": settings.mode,
                     "perturb": perturb},
    }
    for entry in doc["log"]:
        entry.pop("seconds", None)
    if isinstance(result, Completable):
        doc["completed_matrix"] = _matrix(result.matrix)
        dec = result.decomposition
        doc["decomposition"] = {"length": len(dec), "atoms": _matrix(dec.atoms),
                                "weights": [_num(w) for w in dec.weights]}
        if result.report is not None:
            doc["verification"] = {k: (_num(v) if isinstance(v, (float, np.floating)) else v)
                                   for k, v in result.report.as_dict().items()}
    elif isinstance(result, NotCompletable) and result.certificate is not None:
        cert = result.certificate
        doc["certificate"] = {"order_k": result.order_k, "margin": _num(result.margin),
                              "equality_multipliers": len(cert.eq_multipliers),
                              "block_sides": [int(X.shape[0]) for X in cert.block_multipliers]}
    doc["timestamp"] = None
    return doc


def dumps(obj, indent: int = 2) -> str:
    """JSON with every float written to 17 significant digits."""

    def enc(o, level):
        pad = " " * (indent * (level + 1))
        end = " " * (indent * level)
        if o is None or isinstance(o, bool):
            return json.dumps(o)
        if isinstance(o, (int, np.integer)):
            return str(int(o))
        if isinstance(o, (float, np.floating)):
            if not math.isfinite(o):
                return "null"
            txt = format(float(o), ".17g")
            # keep floats floats (and -0.0 negative) on the way back in
            return txt if any(ch in txt for ch in ".en") else txt + ".0"
        if isinstance(o, str):
            return json.dumps(o)
        if isinstance(o, dict):
            if not o:
                return "{}"
            items = [f"{pad}{json.dumps(str(k))}: {enc(v, level + 1)}" for k, v in o.items()]
            return "{\n" + ",\n".join(items) + "\n" + end + "}"
        if isinstance(o, (list, tuple, np.ndarray)):
            if not len(o):
                return "[]"
            if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in o):
                return "[" + ", ".join(enc(v, level + 1) for v in o) + "]"
            return "[\n" + ",\n".join(pad + enc(v, level + 1) for v in o) + "\n" + end + "]"
        raise TypeError(f"cannot serialize {type(o).__name__}")

    return enc(obj, 0) + "\n"


def loads(text: str) -> dict:
    return json.loads(text)


def render_text(doc: dict) -> str:
    out = [f"verdict: {doc['verdict']}"]
    if doc.get("order_k") is not None:
        out.append(f"order k: {doc['order_k']}")
    if doc.get("reason"):
        out.append(f"detail: {doc['reason']}")
    if doc.get("completed_matrix") is not None:
        out.append("completed matrix:")
        for row in doc["completed_matrix"]:
            out.append("  " + " ".join(f"{v:12.6f}" for v in row))
        dec = doc["decomposition"]
        out.append(f"decomposition, length {dec['length']} (C = sum rho_i u_i u_i^T):")
        for u, w in zip(dec["atoms"], dec["weights"]):
            out.append(f"  rho = {w:12.6f}   u = (" + ", ".join(f"{x:.6f}" for x in u) + ")")
        ver = doc.get("verification")
        if ver:
            out.append(f"verification: max entry error {ver['max_entry_error']:.3e}, "
                       f"simplex residual {ver['simplex_residual']:.3e}, "
                       f"{'passed' if ver['passed'] else 'FAILED'}")
    if doc.get("certificate"):
        c = doc["certificate"]
        out.append(f"infeasibility certificate at order {c['order_k']}: margin {c['margin']:.6g}")
    for e in doc.get("log", []):
        ranks = ", ".join(f"t={t['t']}: {t['rank_prev']}->{t['rank']}{' flat' if t['flat'] else ''}"
                          for t in e["truncations"])
        out.append(f"  k={e['k']}: {e['status']}" + (f" [{ranks}]" if ranks else "")
                   + (f" ({e['note']})" if e.get("note") else ""))
    s = doc["settings"]
    out.append(f"settings: d={s['d']} kmax={s['k_max']} rank_tol={s['rank_tol']:g} "
               f"feas_tol={s['feas_tol']:g} seed={s['seed']} mode={s['mode']}"
               + (f" perturb={s['perturb']:g}" if s.get("perturb") else ""))
    return "\n".join(out) + "\n"
