"""Sparse multivariate polynomials and the lambda-integral factorization.

Polynomials are stored as ``{exponent tuple: coefficient}`` maps, one map per
output row. The factorization ``f(u) - f(0) = f_tilde(u) @ u`` is computed in
closed form: the integrand of ``int_0^1 df/du(lambda u) dlambda`` is a
polynomial in ``lambda``, so each Jacobian monomial of total degree ``m - 1``
is simply divided by ``m``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

Exponent = tuple[int, ...]
Terms = Mapping[Exponent, float]


def _clean(terms: Mapping[Exponent, float]) -> dict[Exponent, float]:
    return {e: float(c) for e, c in terms.items() if c != 0.0}


def _monomial_values(exps: Sequence[Exponent], u: np.ndarray) -> np.ndarray:
    if not exps:
        return np.zeros(0)
    E = np.asarray(exps, dtype=int).reshape(len(exps), len(u))
    return np.prod(u[None, :] ** E, axis=1)


@dataclass(frozen=True)
class MultiPoly:
    """Vector-valued multivariate polynomial ``R^n_in -> R^n_out``.

    ``rows[i]`` maps exponent multi-indices (length ``n_in``) to the real
    coefficient of that monomial in output ``i``.
    """

    n_in: int
    n_out: int
    rows: tuple[dict[Exponent, float], ...]

    def __post_init__(self):
        if len(self.rows) != self.n_out:
            raise ValueError(f"expected {self.n_out} rows, got {len(self.rows)}")
        rows = []
        for r in self.rows:
            clean = {}
            for e, c in r.items():
                e = tuple(int(k) for k in e)
                if len(e) != self.n_in or any(k < 0 for k in e):
                    raise ValueError(f"bad exponent {e} for n_in={self.n_in}")
                if not np.isfinite(c):
                    raise ValueError("polynomial coefficients must be finite")
                if c != 0.0:
                    clean[e] = clean.get(e, 0.0) + float(c)
            rows.append(clean)
        object.__setattr__(self, "rows", tuple(rows))

    @classmethod
    def zero(cls, n_in: int, n_out: int) -> MultiPoly:
        return cls(n_in, n_out, tuple({} for _ in range(n_out)))

    @classmethod
    def from_decoupled(cls, W, V, gamma) -> MultiPoly:
        """Expand ``W g(V^T u)`` with ``g_e(s) = sum_m gamma[e, m] s^m``."""
        W, V, gamma = (np.asarray(a, dtype=float) for a in (W, V, gamma))
        n_out, r = W.shape
        n_in = V.shape[0]
        out = [dict() for _ in range(n_out)]
        for e in range(r):
            sigma = {}
            for k in range(n_in):
                if V[k, e] != 0.0:
                    exp = tuple(1 if i == k else 0 for i in range(n_in))
                    sigma[exp] = V[k, e]
            g = {}
            power = {(0,) * n_in: 1.0}
            for m in range(gamma.shape[1]):
                if gamma[e, m] != 0.0:
                    for exp, c in power.items():
                        g[exp] = g.get(exp, 0.0) + gamma[e, m] * c
                power = _mul_terms(power, sigma)
            for i in range(n_out):
                if W[i, e] != 0.0:
                    for exp, c in g.items():
                        out[i][exp] = out[i].get(exp, 0.0) + W[i, e] * c
        return cls(n_in, n_out, tuple(_clean(t) for t in out))

    @property
    def degree(self) -> int:
        return max((sum(e) for r in self.rows for e in r), default=0)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        if u.shape != (self.n_in,):
            raise ValueError(f"input has length {u.size}, expected {self.n_in}")
        out = np.zeros(self.n_out)
        for i, r in enumerate(self.rows):
            if r:
                exps = list(r)
                out[i] = np.dot(np.fromiter(r.values(), float), _monomial_values(exps, u))
        return out

    def __add__(self, other: MultiPoly) -> MultiPoly:
        if (self.n_in, self.n_out) != (other.n_in, other.n_out):
            raise ValueError("polynomial dimensions differ")
        rows = []
        for a, b in zip(self.rows, other.rows):
            t = dict(a)
            for e, c in b.items():
                t[e] = t.get(e, 0.0) + c
            rows.append(_clean(t))
        return MultiPoly(self.n_in, self.n_out, tuple(rows))

    def to_json(self) -> dict:
        return {
            "n_in": self.n_in,
            "rows": [[[list(e), c] for e, c in sorted(r.items())] for r in self.rows],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> MultiPoly:
        rows = tuple({tuple(e): float(c) for e, c in row} for row in obj["rows"])
        return cls(int(obj["n_in"]), len(rows), rows)


def _mul_terms(a: Terms, b: Terms) -> dict[Exponent, float]:
    out: dict[Exponent, float] = {}
    for ea, ca in a.items():
        for eb, cb in b.items():
            e = tuple(x + y for x, y in zip(ea, eb))
            out[e] = out.get(e, 0.0) + ca * cb
    return _clean(out)


@dataclass(frozen=True)
class PolyMatrix:
    """Matrix whose entries are polynomials in ``n_u`` variables.

    ``entries[(row, col)]`` is a ``{exponent: coefficient}`` map; missing
    entries are zero.
    """

    n_rows: int
    n_cols: int
    n_u: int
    entries: dict[tuple[int, int], dict[Exponent, float]]

    def degree(self) -> int:
        return max((sum(e) for t in self.entries.values() for e in t), default=0)


def split_const(f: MultiPoly) -> tuple[np.ndarray, MultiPoly]:
    """Split ``f`` into ``f(0)`` and ``f_bar = f - f(0)``."""
    zero = (0,) * f.n_in
    f0 = np.array([r.get(zero, 0.0) for r in f.rows])
    rows = tuple({e: c for e, c in r.items() if e != zero} for r in f.rows)
    return f0, MultiPoly(f.n_in, f.n_out, rows)


def lambda_factor(f_bar: MultiPoly) -> PolyMatrix:
    """Return ``f_tilde`` with ``f_tilde(u) @ u == f_bar(u)`` identically.

    Raises
    ------
    ValueError
        If ``f_bar`` has a nonzero constant term.
    """
    zero = (0,) * f_bar.n_in
    entries: dict[tuple[int, int], dict[Exponent, float]] = {}
    for i, row in enumerate(f_bar.rows):
        if row.get(zero, 0.0) != 0.0:
            raise ValueError("lambda_factor needs f_bar(0) == 0; use split_const first")
        for exp, c in row.items():
            m = sum(exp)
            for k, a in enumerate(exp):
                if a == 0:
                    continue
                # d/du_k of c*u^exp, integrated over lambda^(m-1) on [0, 1]
                reduced = exp[:k] + (a - 1,) + exp[k + 1 :]
                t = entries.setdefault((i, k), {})
                t[reduced] = t.get(reduced, 0.0) + c * a / m
    entries = {ij: _clean(t) for ij, t in entries.items()}
    return PolyMatrix(f_bar.n_out, f_bar.n_in, f_bar.n_in, {k: t for k, t in entries.items() if t})


def poly_eval(P: PolyMatrix, u) -> np.ndarray:
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (P.n_u,):
        raise ValueError(f"input has length {u.size}, expected {P.n_u}")
    out = np.zeros((P.n_rows, P.n_cols))
    for (i, j), t in P.entries.items():
        out[i, j] = np.dot(np.fromiter(t.values(), float), _monomial_values(list(t), u))
    return out
