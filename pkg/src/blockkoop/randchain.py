"""Seeded random block chains for exactness testing.

Chains have at most four top-level nodes, at most one two-branch junction,
LTI blocks with 1 or 2 states and outputs (``A`` shifted to be Hurwitz), and
SN blocks of degree at most 3 with coefficients in ``[-1, 1]``. Draws whose
lifted model would be too large to simulate quickly are rejected and redrawn.
"""

from __future__ import annotations

import itertools

import numpy as np

from .model_ir import BlockChain, LtiBlock, Parallel, SnBlock

MAX_NZ = 300
MAX_WORK = 2_000_000


def _lti(rng: np.random.Generator, n_in: int, label: str, n_out: int | None = None) -> LtiBlock:
    n_x = int(rng.integers(1, 3))
    n_out = n_out if n_out is not None else int(rng.integers(1, 3))
    A = rng.uniform(-1, 1, (n_x, n_x))
    shift = max(np.linalg.eigvals(A).real) + rng.uniform(0.2, 1.0)
    A -= max(shift, 0.0) * np.eye(n_x)
    B = rng.uniform(-1, 1, (n_x, n_in))
    C = rng.uniform(-1, 1, (n_out, n_x))
    D = rng.uniform(-1, 1, (n_out, n_in)) if rng.random() < 0.5 else np.zeros((n_out, n_in))
    return LtiBlock(A, B, C, D, label)


def _sn(rng: np.random.Generator, n_in: int, label: str, n_out: int | None = None) -> SnBlock:
    r = int(rng.integers(1, 3))
    p = int(rng.integers(1, 4))
    n_out = n_out if n_out is not None else int(rng.integers(1, 3))
    W = rng.uniform(-1, 1, (n_out, r))
    V = rng.uniform(-1, 1, (n_in, r))
    gamma = rng.uniform(-1, 1, (r, p + 1))
    return SnBlock(W, V, gamma, label)


class _Budget:
    """Tracks n_z and the largest input degree of the state and output maps."""

    def __init__(self, n_u: int):
        self.n_u = n_u
        self.n_z, self.dx, self.dy = 0, 0, 1
        self.started = False

    def lti(self, b: LtiBlock):
        self.n_z += b.n_x
        self.dx = max(self.dx, self.dy)
        self.dy = self.dy if b.has_feedthrough else 0
        self.started = True

    def sn(self, b: SnBlock):
        if not self.started:
            self.n_z, self.dx, self.dy = 1, 0, b.degree
        else:
            p = b.degree
            self.n_z = sum(self.n_z**t for t in range(p + 1))
            self.dy *= p
        self.started = True

    def ok(self) -> bool:
        d = max(self.dx, self.dy)
        return self.n_z <= MAX_NZ and (1 + self.n_z) * max(self.n_z, 1) * self.n_u**d <= MAX_WORK


def _branch(rng, n_in: int, n_out: int, length: int, labels) -> list:
    nodes, dim = [], n_in
    for k in range(length):
        last = k == length - 1
        if rng.random() < 0.5:
            b = _lti(rng, dim, next(labels), n_out if last else None)
        else:
            b = _sn(rng, dim, next(labels), n_out if last else None)
        nodes.append(b)
        dim = b.n_out
    return nodes


def random_chain(seed: int) -> BlockChain:
    """Draw a chain; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    while True:
        chain = _draw(rng)
        if _fits(chain):
            return chain


def _draw(rng: np.random.Generator) -> BlockChain:
    n_u = int(rng.integers(1, 3))
    length = int(rng.integers(1, 5))
    par_at = int(rng.integers(0, length)) if rng.random() < 0.5 else -1
    labels = (f"b{k}" for k in itertools.count(1))
    seq, dim = [], n_u
    for k in range(length):
        if k == par_at:
            n_out = int(rng.integers(1, 3))
            branches = [_branch(rng, dim, n_out, int(rng.integers(1, 3)), labels) for _ in range(2)]
            seq.append(Parallel(tuple(tuple(b) for b in branches)))
            dim = n_out
        elif rng.random() < 0.5:
            b = _lti(rng, dim, next(labels))
            seq.append(b)
            dim = b.n_out
        else:
            b = _sn(rng, dim, next(labels))
            seq.append(b)
            dim = b.n_out
    return BlockChain(tuple(seq), n_u, dim)


def _track(seq, budget: _Budget) -> _Budget:
    for node in seq:
        if isinstance(node, LtiBlock):
            budget.lti(node)
        elif isinstance(node, SnBlock):
            budget.sn(node)
        else:
            parts = []
            for br in node.branches:
                nb = _Budget(budget.n_u)
                nb.n_z, nb.dx, nb.dy, nb.started = budget.n_z, budget.dx, budget.dy, budget.started
                parts.append(_track(br, nb))
            budget.n_z = sum(p.n_z for p in parts)
            budget.dx = max(p.dx for p in parts)
            budget.dy = max(p.dy for p in parts)
            budget.started = True
        if not budget.ok():
            return budget
    return budget


def _fits(chain: BlockChain) -> bool:
    return _track(chain.seq, _Budget(chain.n_u)).ok()
