"""Exact PITI/BLTI Koopman embeddings of block chains.

A :class:`PitiModel` is

    dz = A z + state_input(z, u)
    y  = C z + output_input(z, u)

where each input map is a sum over input degrees ``d >= 1`` of
``(K_d + sum_j z_j L_{d,j}) u^(d)``: linear in the lifted state, polynomial in
the input. The model is grown block by block along the chain, starting from
the identity ``y = u``; every rule keeps the model exact.

Each degree-``d`` term stores ``K_d`` and all ``L_{d,j}`` in one array of
shape ``(1 + n_z, n_rows, n_u**d)``: slice 0 is ``K_d`` and slice ``j + 1`` is
``L_{d,j}``. Equivalently the term is ``N_d ([1; z] (x) u^(d))``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from math import comb
from typing import Iterable, Mapping

import numpy as np
from scipy.linalg import block_diag

from .kron import Atlas, ONE, ReductionMap, dedup, kron_power_vec, lifted_A, lifted_B, power_atlas
from .model_ir import BlockChain, LtiBlock, Parallel, PreconditionError, SnBlock
from .polyops import lambda_factor, split_const

log = logging.getLogger(__name__)

PITI = "PITI"
BLTI = "BLTI"
BLTI_NO_FEEDTHROUGH = "BLTI_no_feedthrough"
LTI = "LTI"


@dataclass(frozen=True, eq=False)
class InputTerm:
    d: int
    coef: np.ndarray

    @property
    def K(self) -> np.ndarray:
        return self.coef[0]

    @property
    def L(self) -> np.ndarray:
        """Array of shape ``(n_z, n_rows, n_u**d)``; ``L[j]`` is ``L_{d,j}``."""
        return self.coef[1:]


@dataclass(frozen=True, eq=False)
class InputMap:
    n_rows: int
    n_z: int
    n_u: int
    terms: tuple[InputTerm, ...] = ()

    def __post_init__(self):
        for t in self.terms:
            if t.d < 1:
                raise ValueError("input terms must have degree >= 1")
            expected = (1 + self.n_z, self.n_rows, self.n_u**t.d)
            if t.coef.shape != expected:
                raise ValueError(f"degree-{t.d} term has shape {t.coef.shape}, expected {expected}")

    @classmethod
    def build(cls, n_rows: int, n_z: int, n_u: int, coefs: Mapping[int, np.ndarray]) -> InputMap:
        """Assemble from ``{d: coef}``, dropping terms that are exactly zero."""
        terms = tuple(
            InputTerm(d, np.asarray(c, dtype=float))
            for d, c in sorted(coefs.items())
            if np.any(c != 0.0)
        )
        return cls(n_rows, n_z, n_u, terms)

    @property
    def degrees(self) -> tuple[int, ...]:
        return tuple(t.d for t in self.terms)

    @property
    def is_empty(self) -> bool:
        return not self.terms

    def coefs(self) -> dict[int, np.ndarray]:
        return {t.d: t.coef for t in self.terms}

    def value(self, z, u) -> np.ndarray:
        z = np.asarray(z, dtype=float).ravel()
        u = np.asarray(u, dtype=float).ravel()
        zeta = np.concatenate(([1.0], z))
        out = np.zeros(self.n_rows)
        for t in self.terms:
            ud = kron_power_vec(u, t.d)
            out += np.einsum("jrc,j,c->r", t.coef, zeta, ud)
        return out

    def has_state_dependence(self) -> bool:
        return any(np.any(t.L != 0.0) for t in self.terms)


def _left(M: np.ndarray, imap: InputMap) -> InputMap:
    """Rows transformed by ``M``: the map ``(z, u) -> M imap(z, u)``."""
    coefs = {d: np.einsum("ir,jrc->jic", M, c) for d, c in imap.coefs().items()}
    return InputMap.build(M.shape[0], imap.n_z, imap.n_u, coefs)


def _place(imap: InputMap, n_rows: int, rows, n_z: int, coords) -> InputMap:
    """Embed into a map with more rows/coordinates (rows and coords are index arrays)."""
    rows = np.asarray(rows, dtype=int)
    coords = np.asarray(coords, dtype=int)
    out = {}
    for d, c in imap.coefs().items():
        new = np.zeros((1 + n_z, n_rows, c.shape[2]))
        new[0][rows] = c[0]
        if coords.size and rows.size:
            new[(1 + coords)[:, None], rows[None, :]] = c[1:]
        out[d] = new
    return InputMap.build(n_rows, n_z, imap.n_u, out)


def _sum(maps: Iterable[InputMap]) -> InputMap:
    maps = list(maps)
    first = maps[0]
    acc: dict[int, np.ndarray] = {}
    for m in maps:
        if (m.n_rows, m.n_z, m.n_u) != (first.n_rows, first.n_z, first.n_u):
            raise ValueError("cannot add input maps of different shapes")
        for d, c in m.coefs().items():
            acc[d] = acc[d] + c if d in acc else c.copy()
    return InputMap.build(first.n_rows, first.n_z, first.n_u, acc)


@dataclass(frozen=True, eq=False)
class PitiModel:
    A: np.ndarray
    C: np.ndarray
    state_input: InputMap
    output_input: InputMap
    atlas: Atlas
    n_u: int

    def __post_init__(self):
        n_z = self.A.shape[0]
        if self.A.shape != (n_z, n_z):
            raise ValueError("A must be square")
        if self.C.shape[1] != n_z:
            raise ValueError("C does not match the state dimension")
        if len(self.atlas) != n_z:
            raise ValueError(f"atlas has {len(self.atlas)} coordinates, model has {n_z}")
        si, so = self.state_input, self.output_input
        if (si.n_rows, si.n_z, si.n_u) != (n_z, n_z, self.n_u):
            raise ValueError("state input map has the wrong shape")
        if (so.n_rows, so.n_z, so.n_u) != (self.C.shape[0], n_z, self.n_u):
            raise ValueError("output input map has the wrong shape")

    @property
    def n_z(self) -> int:
        return self.A.shape[0]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    def rhs(self, z, u) -> np.ndarray:
        return self.A @ z + self.state_input.value(z, u)

    def output(self, z, u) -> np.ndarray:
        return self.C @ z + self.output_input.value(z, u)


@dataclass(frozen=True, eq=False)
class BltiModel:
    """``dz = A z + sum_k (Bbar[k] z + B[:, k]) u_k``, ``y = C z``."""

    A: np.ndarray
    C: np.ndarray
    B: np.ndarray
    Bbar: np.ndarray
    atlas: Atlas

    def rhs(self, z, u) -> np.ndarray:
        u = np.asarray(u, dtype=float).ravel()
        return self.A @ z + np.einsum("kij,j,k->i", self.Bbar, z, u) + self.B @ u


# -- elementary embeddings ---------------------------------------------------


def identity_model(n_u: int) -> PitiModel:
    """The empty chain ``y = u``: no state, unit feedthrough."""
    eye = np.eye(n_u)[None]
    return PitiModel(
        A=np.zeros((0, 0)),
        C=np.zeros((n_u, 0)),
        state_input=InputMap(0, 0, n_u),
        output_input=InputMap.build(n_u, 0, n_u, {1: eye}),
        atlas=Atlas(),
        n_u=n_u,
    )


def embed_lti_start(b: LtiBlock, block_id: str | None = None) -> PitiModel:
    n_x, n_u = b.n_x, b.n_in
    return PitiModel(
        A=b.A.copy(),
        C=b.C.copy(),
        state_input=InputMap.build(n_x, n_x, n_u, {1: np.concatenate([b.B[None], np.zeros((n_x, n_x, n_u))])}),
        output_input=InputMap.build(b.n_out, n_x, n_u, {1: np.concatenate([b.D[None], np.zeros((n_x, b.n_out, n_u))])}),
        atlas=Atlas.base(block_id or b.label, n_x),
        n_u=n_u,
    )


def _kron_index(idx: Iterable[int], n_u: int) -> int:
    out = 0
    for i in idx:
        out = out * n_u + i
    return out


def embed_sn_start(b: SnBlock) -> PitiModel:
    """SN block fed directly by ``u``: constant state ``z = 1``, all of ``f`` in the output map."""
    n_u, n_y = b.n_in, b.n_out
    f0, f_bar = split_const(b.to_multipoly())
    f_tilde = lambda_factor(f_bar)
    coefs: dict[int, np.ndarray] = {}
    # f_tilde(u) u regrouped by u-degree; monomial u^alpha u_k lands on one u^(d) column
    for (r, k), entry in f_tilde.entries.items():
        for exp, c in entry.items():
            idx = [i for i, a in enumerate(exp) for _ in range(a)] + [k]
            d = len(idx)
            arr = coefs.setdefault(d, np.zeros((2, n_y, n_u**d)))
            arr[0, r, _kron_index(idx, n_u)] += c
    return PitiModel(
        A=np.zeros((1, 1)),
        C=f0.reshape(n_y, 1),
        state_input=InputMap(1, 1, n_u),
        output_input=InputMap.build(n_y, 1, n_u, coefs),
        atlas=Atlas((ONE,), {}),
        n_u=n_u,
    )


def compose_ld(prev: PitiModel, b: LtiBlock, block_id: str | None = None) -> PitiModel:
    """Series connection of ``prev`` followed by the LTI block ``b``."""
    if b.n_in != prev.n_y:
        raise ValueError(f"'{b.label}' expects input {b.n_in}, model gives {prev.n_y}")
    n, n_x = prev.n_z, b.n_x
    n_new = n + n_x
    A = np.block([[prev.A, np.zeros((n, n_x))], [b.B @ prev.C, b.A]])
    C = np.hstack([b.D @ prev.C, b.C])
    old = np.arange(n)
    state_input = _sum([
        _place(prev.state_input, n_new, old, n_new, old),
        _place(_left(b.B, prev.output_input), n_new, n + np.arange(n_x), n_new, old),
    ])
    output_input = _place(_left(b.D, prev.output_input), b.n_out, np.arange(b.n_out), n_new, old)
    atlas = prev.atlas.concat(Atlas.base(block_id or b.label, n_x))
    return PitiModel(A, C, state_input, output_input, atlas, prev.n_u)


# Bi-graded polynomials in (z, u): {(a, d): X} means sum_{i,c} X[i, c] z^(a)_i u^(d)_c.


def _bg_mul(P: dict, Q: dict, n: int, n_u: int) -> dict:
    out: dict = {}
    for (a1, d1), X in P.items():
        for (a2, d2), Y in Q.items():
            prod = np.einsum("ij,kl->ikjl", X, Y).reshape(n ** (a1 + a2), n_u ** (d1 + d2))
            key = (a1 + a2, d1 + d2)
            out[key] = out[key] + prod if key in out else prod
    return out


def compose_sn(prev: PitiModel, b: SnBlock) -> PitiModel:
    """Series connection of ``prev`` followed by the static nonlinearity ``b``.

    The new state is ``[1, z, z^(2), ..., z^(p)]``. The state map of each
    Kronecker power follows from the chain rule: a constant input column ``k``
    becomes ``lifted_B(k, tau) z^(tau-1)`` and a state-dependent one ``G z``
    becomes ``lifted_A(G, tau) z^(tau)``. The output expands
    ``g_e(v_e C z + v_e h(z, u))`` binomially; the ``h``-free part gives ``C``.
    """
    if b.n_in != prev.n_y:
        raise ValueError(f"'{b.label}' expects input {b.n_in}, model gives {prev.n_y}")
    p = b.degree
    if p < 1:
        raise ValueError("SN degree must be >= 1")
    n, n_u = prev.n_z, prev.n_u
    sizes = [n**t for t in range(p + 1)]
    off = np.concatenate(([0], np.cumsum(sizes)))
    n_new = int(off[-1])

    A = block_diag(np.zeros((1, 1)), *[lifted_A(prev.A, t) for t in range(1, p + 1)])

    # state map
    state = {}
    for term in prev.state_input.terms:
        K, L = term.K, term.L
        ncol = K.shape[1]
        new = np.zeros((1 + n_new, n_new, ncol))
        for tau in range(1, p + 1):
            rows = slice(off[tau], off[tau + 1])
            # slot of z^(tau-1) in the coefficient array; z^(0) = 1 goes to K
            lo = 0 if tau == 1 else 1 + off[tau - 1]
            hi = lo + sizes[tau - 1]
            for c in range(ncol):
                if np.any(K[:, c] != 0.0):
                    new[lo:hi, rows, c] += lifted_B(K[:, c], tau).T
                G = L[:, :, c].T
                if np.any(G != 0.0):
                    new[1 + off[tau] : 1 + off[tau + 1], rows, c] += lifted_A(G, tau).T
        state[term.d] = new

    # output map
    v_tilde = b.V.T @ prev.C
    Gamma = np.zeros((b.r, n_new))
    for e in range(b.r):
        for t in range(p + 1):
            Gamma[e, off[t] : off[t + 1]] = b.gamma[e, t] * kron_power_vec(v_tilde[e], t)
    C = b.W @ Gamma

    out: dict[int, np.ndarray] = {}
    if not prev.output_input.is_empty:
        for e in range(b.r):
            v = b.V[:, e]
            h = {}
            for term in prev.output_input.terms:
                h[(0, term.d)] = (v @ term.K)[None, :]
                h[(1, term.d)] = np.einsum("r,jrc->jc", v, term.L)
            powers = [None, h]
            for k in range(2, p + 1):
                powers.append(_bg_mul(powers[-1], h, n, n_u))
            acc: dict = {}
            for l in range(1, p + 1):
                if b.gamma[e, l] == 0.0:
                    continue
                for k in range(1, l + 1):
                    vz = {(l - k, 0): (b.gamma[e, l] * comb(l, k) * kron_power_vec(v_tilde[e], l - k))[:, None]}
                    for key, X in _bg_mul(vz, powers[k], n, n_u).items():
                        acc[key] = acc[key] + X if key in acc else X
            w = b.W[:, e]
            for (a, d), X in acc.items():
                arr = out.setdefault(d, np.zeros((1 + n_new, b.n_out, n_u**d)))
                if a == 0:
                    arr[0] += w[:, None] * X[0][None, :]
                else:
                    arr[1 + off[a] : 1 + off[a + 1]] += X[:, None, :] * w[None, :, None]

    return PitiModel(
        A=A,
        C=C,
        state_input=InputMap.build(n_new, n_new, n_u, state),
        output_input=InputMap.build(b.n_out, n_new, n_u, out),
        atlas=power_atlas(prev.atlas, p),
        n_u=n_u,
    )


def split(prev: PitiModel, m: int) -> list[PitiModel]:
    """Input junction: ``m`` copies of ``prev`` (same block identifiers)."""
    if m < 2:
        raise ValueError("a junction needs at least 2 branches")
    return [prev] * m


def join(branches: list[PitiModel]) -> PitiModel:
    """Output junction: stack the branch states and sum their outputs."""
    if not branches:
        raise ValueError("nothing to join")
    n_u, n_y = branches[0].n_u, branches[0].n_y
    for m in branches[1:]:
        if (m.n_u, m.n_y) != (n_u, n_y):
            raise ValueError("joined branches must share input and output dimensions")
    if len(branches) == 1:
        return branches[0]
    sizes = [m.n_z for m in branches]
    off = np.concatenate(([0], np.cumsum(sizes)))
    n_new = int(off[-1])
    A = block_diag(*[m.A for m in branches]) if n_new else np.zeros((0, 0))
    C = np.hstack([m.C for m in branches])
    state_input = _sum(
        _place(m.state_input, n_new, off[i] + np.arange(m.n_z), n_new, off[i] + np.arange(m.n_z))
        for i, m in enumerate(branches)
    )
    output_input = _sum(
        _place(m.output_input, n_y, np.arange(n_y), n_new, off[i] + np.arange(m.n_z))
        for i, m in enumerate(branches)
    )
    atlas = branches[0].atlas.concat(*[m.atlas for m in branches[1:]])
    return PitiModel(A, C, state_input, output_input, atlas, n_u)


# -- driver ------------------------------------------------------------------


def _embed_seq(seq, prev: PitiModel | None, n_u: int, reduce_each: bool) -> PitiModel:
    for node in seq:
        if isinstance(node, LtiBlock):
            prev = embed_lti_start(node) if prev is None else compose_ld(prev, node)
        elif isinstance(node, SnBlock):
            prev = embed_sn_start(node) if prev is None else compose_sn(prev, node)
            if reduce_each:
                prev = reduce(prev)[0]
        elif isinstance(node, Parallel):
            starts = [None] * len(node.branches) if prev is None else split(prev, len(node.branches))
            prev = join([_embed_seq(br, s, n_u, reduce_each) for br, s in zip(node.branches, starts)])
        else:
            raise TypeError(f"unknown chain node {node!r}")
        log.debug("embedded %s: n_z=%d", getattr(node, "label", "parallel"), prev.n_z)
    return identity_model(n_u) if prev is None else prev


def embed_chain(chain: BlockChain, reduce_each: bool = False) -> PitiModel:
    """Embed a whole chain, folding the elementary rules from input to output.

    With ``reduce_each`` duplicate coordinates are merged after every SN
    block, which keeps intermediate models small without changing the I/O map.
    """
    return _embed_seq(chain.seq, None, chain.n_u, reduce_each)


def reduce(model: PitiModel) -> tuple[PitiModel, ReductionMap]:
    """Merge coordinates that carry the same monomial."""
    rm = dedup(model.atlas)
    n_red = len(rm.keep)

    def remap(imap: InputMap, rows) -> InputMap:
        out = {}
        for d, c in imap.coefs().items():
            c = c[:, rows]
            new = np.zeros((1 + n_red,) + c.shape[1:])
            new[0] = c[0]
            np.add.at(new, 1 + rm.rep, c[1:])
            out[d] = new
        return InputMap.build(len(rows) if not isinstance(rows, slice) else imap.n_rows, n_red, imap.n_u, out)

    reduced = PitiModel(
        A=rm.T @ model.A @ rm.T_dagger,
        C=model.C @ rm.T_dagger,
        state_input=remap(model.state_input, rm.keep),
        output_input=remap(model.output_input, slice(None)),
        atlas=rm.reduced_atlas,
        n_u=model.n_u,
    )
    return reduced, rm


def classify(model: PitiModel) -> str:
    state_deg = set(model.state_input.degrees)
    out_deg = set(model.output_input.degrees)
    if state_deg <= {1} and not out_deg:
        return BLTI_NO_FEEDTHROUGH
    if state_deg <= {1} and out_deg <= {1}:
        if model.state_input.has_state_dependence() or model.output_input.has_state_dependence():
            return BLTI
        return LTI
    return PITI


def _leads_with_sn(seq) -> bool:
    if not seq:
        return False
    first = seq[0]
    if isinstance(first, SnBlock):
        return True
    if isinstance(first, Parallel):
        return any(_leads_with_sn(br) for br in first.branches)
    return False


def predict_blti(chain: BlockChain) -> bool:
    """Sufficient conditions for a bilinear embedding without feedthrough.

    Every LTI block is strictly proper and the chain does not open with an SN
    block (directly or at the head of a leading junction branch). The empty
    chain ``y = u`` is pure feedthrough and is excluded.
    """
    if not chain.seq:
        return False
    if any(b.has_feedthrough for b in chain.lti_blocks()):
        return False
    return not _leads_with_sn(chain.seq)


def to_blti(model: PitiModel) -> BltiModel:
    cls = classify(model)
    if cls != BLTI_NO_FEEDTHROUGH:
        raise PreconditionError(f"model is {cls}; a BLTI model needs degree-1 state input and no feedthrough")
    n_z, n_u = model.n_z, model.n_u
    B = np.zeros((n_z, n_u))
    Bbar = np.zeros((n_u, n_z, n_z))
    for term in model.state_input.terms:
        B = term.K.copy()
        Bbar = np.transpose(term.L, (2, 1, 0)).copy()
    return BltiModel(model.A.copy(), model.C.copy(), B, Bbar, model.atlas)


# -- model file --------------------------------------------------------------


def _map_to_json(imap: InputMap) -> list:
    return [{"d": t.d, "K": t.K.tolist(), "L": t.L.tolist()} for t in imap.terms]


def _map_from_json(items, n_rows: int, n_z: int, n_u: int) -> InputMap:
    coefs = {}
    for it in items:
        d = int(it["d"])
        K = np.asarray(it["K"], dtype=float).reshape(n_rows, n_u**d)
        L = np.asarray(it["L"], dtype=float).reshape(n_z, n_rows, n_u**d)
        coefs[d] = np.concatenate([K[None], L])
    return InputMap.build(n_rows, n_z, n_u, coefs)


def model_to_json(model: PitiModel) -> dict:
    return {
        "n_z": model.n_z,
        "n_u": model.n_u,
        "n_y": model.n_y,
        "A": model.A.tolist(),
        "C": model.C.tolist(),
        "state_input": _map_to_json(model.state_input),
        "output_input": _map_to_json(model.output_input),
        "atlas": [[list(f) for f in m.factors] for m in model.atlas.coords],
        "base_dims": dict(model.atlas.base_dims),
        "class": classify(model),
    }


def model_from_json(obj: Mapping) -> PitiModel:
    from .kron import Monomial

    n_z, n_u = int(obj["n_z"]), int(obj["n_u"])
    C = np.asarray(obj["C"], dtype=float)
    n_y = int(obj.get("n_y", C.shape[0]))
    C = C.reshape(n_y, n_z)
    coords = tuple(Monomial(tuple((b, i) for b, i in m)) for m in obj["atlas"])
    dims = obj.get("base_dims")
    if dims is None:
        dims = {}
        for m in coords:
            for b, i in m.factors:
                dims[b] = max(dims.get(b, 0), i + 1)
    return PitiModel(
        A=np.asarray(obj["A"], dtype=float).reshape(n_z, n_z),
        C=C,
        state_input=_map_from_json(obj["state_input"], n_z, n_z, n_u),
        output_input=_map_from_json(obj["output_input"], n_y, n_z, n_u),
        atlas=Atlas(coords, dims),
        n_u=n_u,
    )
