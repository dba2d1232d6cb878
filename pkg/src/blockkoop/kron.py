"""Kronecker powers, their derivatives, and monomial bookkeeping.

All Kronecker enumerations are row-major: in ``x^(d) = x (x) x^(d-1)`` the
leftmost factor varies slowest. Every module relies on this ordering when it
re-indexes products of lifted coordinates.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import reduce
from typing import Mapping, Sequence

import numpy as np

Factor = tuple[str, int]


def kron_power_vec(v, d: int) -> np.ndarray:
    if d < 0:
        raise ValueError("degree must be >= 0")
    v = np.asarray(v, dtype=float).ravel()
    return reduce(np.kron, [v] * d, np.ones(1))


def kron_power_mat(M, d: int) -> np.ndarray:
    if d < 0:
        raise ValueError("degree must be >= 0")
    M = np.asarray(M, dtype=float)
    return reduce(np.kron, [M] * d, np.eye(1))


def kron_jacobian(x, i: int) -> np.ndarray:
    """Jacobian of ``x^(i)``: ``sum_k x^(k) (x) I_n (x) x^(i-k-1)``."""
    if i < 1:
        raise ValueError("degree must be >= 1")
    x = np.asarray(x, dtype=float).ravel()
    n = x.size
    eye = np.eye(n)
    J = np.zeros((n**i, n))
    for k in range(i):
        left = kron_power_vec(x, k)[:, None]
        right = kron_power_vec(x, i - k - 1)[:, None]
        J += np.kron(np.kron(left, eye), right)
    return J


def _sandwich_sum(M: np.ndarray, n: int, tau: int) -> np.ndarray:
    out = None
    for k in range(tau):
        term = np.kron(np.kron(np.eye(n**k), M), np.eye(n ** (tau - k - 1)))
        out = term if out is None else out + term
    return out


def lifted_A(A, tau: int) -> np.ndarray:
    """Matrix ``M`` with ``d/dt x^(tau) = M x^(tau)`` along ``dx = A x``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    n = A.shape[0]
    if n == 0:
        return np.zeros((0, 0))
    return _sandwich_sum(A, n, tau)


def lifted_B(b, tau: int) -> np.ndarray:
    """Matrix ``M`` (``n^tau x n^(tau-1)``) with ``J_tau(x) b = M x^(tau-1)``."""
    if tau < 1:
        raise ValueError("tau must be >= 1")
    b = np.asarray(b, dtype=float).reshape(-1, 1)
    n = b.shape[0]
    if n == 0:
        return np.zeros((0, 0 if tau > 1 else 1))
    return _sandwich_sum(b, n, tau)


# -- monomial atlas ----------------------------------------------------------


@dataclass(frozen=True)
class Monomial:
    """Product of base-state coordinates; the empty product is the constant 1.

    Each factor is ``(block_id, state_index)``. Factors are kept sorted so two
    monomials are equal exactly when they are the same multiset.
    """

    factors: tuple[Factor, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "factors", tuple(sorted((str(b), int(i)) for b, i in self.factors)))

    def __mul__(self, other: Monomial) -> Monomial:
        return Monomial(self.factors + other.factors)

    @property
    def degree(self) -> int:
        return len(self.factors)

    def __str__(self) -> str:
        if not self.factors:
            return "1"
        return "*".join(f"{b}[{i}]" for b, i in self.factors)


ONE = Monomial()


@dataclass(frozen=True)
class Atlas:
    coords: tuple[Monomial, ...] = ()
    base_dims: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "coords", tuple(self.coords))
        object.__setattr__(self, "base_dims", dict(self.base_dims))
        for m in self.coords:
            for b, i in m.factors:
                if b not in self.base_dims or not 0 <= i < self.base_dims[b]:
                    raise ValueError(f"factor {(b, i)} is outside the atlas base dimensions")

    def __len__(self) -> int:
        return len(self.coords)

    @classmethod
    def base(cls, block_id: str, n_x: int) -> Atlas:
        return cls(tuple(Monomial(((block_id, i),)) for i in range(n_x)), {block_id: n_x})

    def concat(self, *others: Atlas) -> Atlas:
        coords = list(self.coords)
        dims = dict(self.base_dims)
        for o in others:
            for b, n in o.base_dims.items():
                if dims.setdefault(b, n) != n:
                    raise ValueError(f"block '{b}' has inconsistent state dimension")
            coords.extend(o.coords)
        return Atlas(tuple(coords), dims)


def power_atlas(base: Atlas, p: int) -> Atlas:
    """Atlas of ``[1, z, z^(2), ..., z^(p)]`` with duplicates kept."""
    if p < 1:
        raise ValueError("p must be >= 1")
    coords = [ONE]
    for d in range(1, p + 1):
        for idx in itertools.product(base.coords, repeat=d):
            coords.append(reduce(Monomial.__mul__, idx))
    return Atlas(tuple(coords), base.base_dims)


@dataclass(frozen=True)
class ReductionMap:
    """Selection ``T`` of unique coordinates and its reconstruction ``T_dagger``.

    ``rep[j]`` is the reduced index that original coordinate ``j`` maps to and
    ``keep[i]`` the original index of reduced coordinate ``i``.
    """

    T: np.ndarray
    T_dagger: np.ndarray
    reduced_atlas: Atlas
    rep: np.ndarray
    keep: np.ndarray


def dedup(atlas: Atlas) -> ReductionMap:
    """Keep the first occurrence of each distinct monomial, in atlas order."""
    first: dict[Monomial, int] = {}
    rep = np.empty(len(atlas), dtype=int)
    keep = []
    for j, m in enumerate(atlas.coords):
        if m not in first:
            first[m] = len(keep)
            keep.append(j)
        rep[j] = first[m]
    keep = np.asarray(keep, dtype=int)
    n, n_red = len(atlas), len(keep)
    T = np.zeros((n_red, n))
    T[np.arange(n_red), keep] = 1.0
    T_dagger = np.zeros((n, n_red))
    T_dagger[np.arange(n), rep] = 1.0
    reduced = Atlas(tuple(atlas.coords[j] for j in keep), atlas.base_dims)
    return ReductionMap(T, T_dagger, reduced, rep, keep)


def lift(atlas: Atlas, base_state: Mapping[str, Sequence[float]]) -> np.ndarray:
    """Evaluate every atlas monomial at the given block states."""
    states = {}
    for b in atlas.base_dims:
        if b not in base_state and atlas.base_dims[b] == 0:
            states[b] = np.zeros(0)
            continue
        if b not in base_state:
            raise KeyError(f"no state given for block '{b}'")
        states[b] = np.asarray(base_state[b], dtype=float).ravel()
        if states[b].size != atlas.base_dims[b]:
            raise ValueError(
                f"state for block '{b}' has length {states[b].size}, expected {atlas.base_dims[b]}"
            )
    z = np.ones(len(atlas))
    for j, m in enumerate(atlas.coords):
        for b, i in m.factors:
            z[j] *= states[b][i]
    return z
