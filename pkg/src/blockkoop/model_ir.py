"""Block-chain description of block-oriented nonlinear systems.

A chain is an ordered sequence of nodes fed by the system input ``u``:

* :class:`LtiBlock` -- ``dx = A x + B u_i``, ``y_i = C x + D u_i``
* :class:`SnBlock`  -- static polynomial ``y_i = W g(V^T u_i)`` in decoupled form
* :class:`Parallel` -- the input is copied into every branch and the branch
  outputs are summed, so every branching is closed by construction.

An empty chain is the identity ``y = u``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Sequence, Union

import numpy as np

from .polyops import MultiPoly


class BlockKoopError(Exception):
    """Base class for errors raised by this package."""


class ModelParseError(BlockKoopError):
    """The model text is malformed."""


class ModelValidationError(BlockKoopError):
    """The chain is well-formed but its signal dimensions do not fit."""


class PreconditionError(BlockKoopError):
    """An operation was applied to a model it is not defined for."""


def _as_matrix(value, name: str) -> np.ndarray:
    M = np.asarray(value, dtype=float)
    if M.ndim != 2:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} has non-finite entries")
    return M


@dataclass(frozen=True, eq=False)
class LtiBlock:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    label: str = ""

    def __post_init__(self):
        for name in "ABCD":
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        A, B, C, D = self.A, self.B, self.C, self.D
        if A.shape[0] != A.shape[1]:
            raise ValueError(f"A must be square, got {A.shape}")
        if B.shape[0] != A.shape[0]:
            raise ValueError(f"B has {B.shape[0]} rows, A has {A.shape[0]}")
        if C.shape[1] != A.shape[0]:
            raise ValueError(f"C has {C.shape[1]} columns, A has {A.shape[0]}")
        if D.shape != (C.shape[0], B.shape[1]):
            raise ValueError(f"D must be {C.shape[0]}x{B.shape[1]}, got {D.shape}")

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_in(self) -> int:
        return self.D.shape[1]

    @property
    def n_out(self) -> int:
        return self.D.shape[0]

    @property
    def has_feedthrough(self) -> bool:
        return bool(np.any(self.D != 0.0))

    def __eq__(self, other):
        if not isinstance(other, LtiBlock):
            return NotImplemented
        return self.label == other.label and all(
            np.array_equal(getattr(self, k), getattr(other, k)) for k in "ABCD"
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class SnBlock:
    """Static nonlinearity ``y = W g(V^T u)``.

    Row ``e`` of ``gamma`` holds the coefficients of ``g_e`` in increasing
    degree, so ``gamma`` is ``r x (p + 1)``. ``raw_poly`` is an optional
    non-decoupled form of the same map, kept only for consistency checks.
    """

    W: np.ndarray
    V: np.ndarray
    gamma: np.ndarray
    label: str = ""
    raw_poly: MultiPoly | None = None

    def __post_init__(self):
        for name in ("W", "V", "gamma"):
            object.__setattr__(self, name, _as_matrix(getattr(self, name), name))
        r = self.W.shape[1]
        if r < 1:
            raise ValueError("an SN block needs at least one branch (r >= 1)")
        if self.V.shape[1] != r:
            raise ValueError(f"V has {self.V.shape[1]} columns, W has {r}")
        if self.gamma.shape[0] != r:
            raise ValueError(f"gamma has {self.gamma.shape[0]} rows, expected r={r}")
        if self.gamma.shape[1] < 2:
            raise ValueError("gamma rows need at least two coefficients (p >= 1)")
        if self.raw_poly is not None and (
            self.raw_poly.n_in != self.n_in or self.raw_poly.n_out != self.n_out
        ):
            raise ValueError("raw_poly dimensions do not match W/V")

    @property
    def n_in(self) -> int:
        return self.V.shape[0]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]

    @property
    def r(self) -> int:
        return self.W.shape[1]

    @property
    def degree(self) -> int:
        return self.gamma.shape[1] - 1

    def to_multipoly(self) -> MultiPoly:
        return MultiPoly.from_decoupled(self.W, self.V, self.gamma)

    def __eq__(self, other):
        if not isinstance(other, SnBlock):
            return NotImplemented
        return (
            self.label == other.label
            and self.raw_poly == other.raw_poly
            and all(np.array_equal(getattr(self, k), getattr(other, k)) for k in ("W", "V", "gamma"))
        )

    __hash__ = None


@dataclass(frozen=True)
class Parallel:
    branches: tuple[tuple["ChainNode", ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "branches", tuple(tuple(b) for b in self.branches))


ChainNode = Union[LtiBlock, SnBlock, Parallel]


@dataclass(frozen=True)
class BlockChain:
    seq: tuple[ChainNode, ...]
    n_u: int
    n_y: int

    def __post_init__(self):
        object.__setattr__(self, "seq", tuple(self.seq))

    def lti_blocks(self) -> list[LtiBlock]:
        return [n for n in iter_blocks(self.seq) if isinstance(n, LtiBlock)]


def iter_blocks(seq: Sequence[ChainNode]):
    """Yield every LTI/SN block of ``seq`` depth-first, in chain order."""
    for node in seq:
        if isinstance(node, Parallel):
            for branch in node.branches:
                yield from iter_blocks(branch)
        else:
            yield node


# -- parsing -----------------------------------------------------------------


def _matrix_field(obj: dict, key: str, where: str, shape_hint=(None, None)) -> np.ndarray:
    if key not in obj:
        raise ModelParseError(f"{where}: missing field '{key}'")
    value = obj[key]
    if isinstance(value, list) and len(value) == 0:
        rows = shape_hint[0] or 0
        cols = shape_hint[1] or 0
        if rows:
            raise ModelParseError(f"{where}: '{key}' is empty but needs {rows} rows")
        return np.zeros((0, cols))
    try:
        M = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ModelParseError(f"{where}: '{key}' is not a rectangular numeric matrix") from None
    if M.ndim != 2:
        raise ModelParseError(f"{where}: '{key}' must be an array of arrays")
    if M.shape[1] == 0 and shape_hint[1]:
        M = np.zeros((M.shape[0], shape_hint[1]))
    if not np.all(np.isfinite(M)):
        raise ModelParseError(f"{where}: '{key}' has non-finite entries")
    return M


def _parse_node(obj: Any, where: str, counters: dict) -> ChainNode:
    if not isinstance(obj, dict):
        raise ModelParseError(f"{where}: node must be an object")
    kind = obj.get("kind")
    if kind == "lti":
        D = _matrix_field(obj, "D", where)
        A = _matrix_field(obj, "A", where)
        n_x = A.shape[0] if A.size else 0
        A = A.reshape(n_x, n_x) if A.size == 0 else A
        B = _matrix_field(obj, "B", where, (None, D.shape[1]))
        C = _matrix_field(obj, "C", where, (None, n_x))
        if C.shape[0] == 0 and D.shape[0]:
            C = np.zeros((D.shape[0], n_x))
        counters["lti"] += 1
        label = str(obj.get("label") or f"G{counters['lti']}")
        try:
            return LtiBlock(A, B, C, D, label)
        except ValueError as exc:
            raise ModelParseError(f"{where} ('{label}'): {exc}") from None
    if kind == "sn":
        W = _matrix_field(obj, "W", where)
        V = _matrix_field(obj, "V", where)
        gamma = _matrix_field(obj, "gamma", where)
        counters["sn"] += 1
        label = str(obj.get("label") or f"f{counters['sn']}")
        raw = None
        if obj.get("raw_poly") is not None:
            try:
                raw = MultiPoly.from_json(obj["raw_poly"])
            except (KeyError, TypeError, ValueError) as exc:
                raise ModelParseError(f"{where} ('{label}'): bad raw_poly: {exc}") from None
        try:
            return SnBlock(W, V, gamma, label, raw)
        except ValueError as exc:
            raise ModelParseError(f"{where} ('{label}'): {exc}") from None
    if kind == "parallel":
        branches = obj.get("branches")
        if not isinstance(branches, list):
            raise ModelParseError(f"{where}: 'branches' must be a list of node lists")
        parsed = []
        for b, branch in enumerate(branches):
            if not isinstance(branch, list):
                raise ModelParseError(f"{where}.branches[{b}]: must be a list of nodes")
            parsed.append(
                tuple(
                    _parse_node(n, f"{where}.branches[{b}][{k}]", counters)
                    for k, n in enumerate(branch)
                )
            )
        return Parallel(tuple(parsed))
    raise ModelParseError(f"{where}: unknown block kind {kind!r}")


def parse_model(text: str) -> BlockChain:
    """Parse model-file JSON into a :class:`BlockChain`.

    Blocks without a label get ``G<k>`` (LTI) or ``f<k>`` (SN), numbered in
    chain order.
    """
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelParseError(f"line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(obj, dict):
        raise ModelParseError("top level must be a JSON object")
    for key in ("n_u", "n_y", "chain"):
        if key not in obj:
            raise ModelParseError(f"missing top-level field '{key}'")
    if not isinstance(obj["chain"], list):
        raise ModelParseError("'chain' must be a list of nodes")
    try:
        n_u, n_y = int(obj["n_u"]), int(obj["n_y"])
    except (TypeError, ValueError):
        raise ModelParseError("'n_u' and 'n_y' must be integers") from None
    counters = {"lti": 0, "sn": 0}
    seq = tuple(_parse_node(n, f"chain[{k}]", counters) for k, n in enumerate(obj["chain"]))
    return BlockChain(seq, n_u, n_y)


def load_model(path) -> BlockChain:
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read())


def _node_to_json(node: ChainNode) -> dict:
    if isinstance(node, LtiBlock):
        return {
            "kind": "lti",
            "label": node.label,
            **{k: getattr(node, k).tolist() for k in "ABCD"},
        }
    if isinstance(node, SnBlock):
        out = {
            "kind": "sn",
            "label": node.label,
            "W": node.W.tolist(),
            "V": node.V.tolist(),
            "gamma": node.gamma.tolist(),
        }
        if node.raw_poly is not None:
            out["raw_poly"] = node.raw_poly.to_json()
        return out
    return {"kind": "parallel", "branches": [[_node_to_json(n) for n in b] for b in node.branches]}


def serialize(chain: BlockChain) -> str:
    obj = {"n_u": chain.n_u, "n_y": chain.n_y, "chain": [_node_to_json(n) for n in chain.seq]}
    return json.dumps(obj, indent=1)


# -- validation --------------------------------------------------------------


@dataclass(frozen=True)
class NodeDims:
    path: str
    kind: str
    label: str
    n_in: int
    n_out: int
    n_x: int = 0


@dataclass(frozen=True)
class DimensionReport:
    n_u: int
    n_y: int
    nodes: tuple[NodeDims, ...] = field(default_factory=tuple)

    def __str__(self) -> str:
        lines = [f"chain: n_u={self.n_u} n_y={self.n_y}"]
        for nd in self.nodes:
            name = f" '{nd.label}'" if nd.label else ""
            extra = f" n_x={nd.n_x}" if nd.kind == "lti" else ""
            lines.append(f"  {nd.path:<24} {nd.kind:<8}{name}: {nd.n_in} -> {nd.n_out}{extra}")
        return "\n".join(lines)


def _name(nd: NodeDims | None) -> str:
    if nd is None:
        return "chain input"
    return f"'{nd.label}'" if nd.label else nd.path


def validate(chain: BlockChain) -> DimensionReport:
    """Check signal dimensions along the chain and list every interface.

    Raises
    ------
    ModelValidationError
        On a dimension mismatch (both offending nodes are named), a parallel
        node with fewer than two branches, or a repeated block label.
    """
    nodes: list[NodeDims] = []
    labels: dict[str, str] = {}

    def walk(seq, n_in: int, prefix: str, upstream: NodeDims | None) -> tuple[int, NodeDims | None]:
        dim, prev = n_in, upstream
        for k, node in enumerate(seq):
            path = f"{prefix}[{k}]"
            if isinstance(node, Parallel):
                if len(node.branches) < 2:
                    raise ModelValidationError(f"{path}: parallel node needs at least 2 branches")
                outs = []
                for b, branch in enumerate(node.branches):
                    if not branch:
                        raise ModelValidationError(f"{path}.branches[{b}] is empty")
                    outs.append(walk(branch, dim, f"{path}.branches[{b}]", prev))
                first_dim, first_last = outs[0]
                for d, last in outs[1:]:
                    if d != first_dim:
                        raise ModelValidationError(
                            f"dimension mismatch at output junction {path}: "
                            f"{_name(first_last)} gives {first_dim}, {_name(last)} gives {d}"
                        )
                nd = NodeDims(path, "parallel", "", dim, first_dim)
                nodes.append(nd)
                dim, prev = first_dim, nd
                continue
            kind = "lti" if isinstance(node, LtiBlock) else "sn"
            nd = NodeDims(path, kind, node.label, node.n_in, node.n_out,
                          node.n_x if kind == "lti" else 0)
            if node.label:
                if node.label in labels:
                    raise ModelValidationError(
                        f"block label '{node.label}' used at {labels[node.label]} and {path}"
                    )
                labels[node.label] = path
            if node.n_in != dim:
                raise ModelValidationError(
                    f"dimension mismatch between {_name(prev)} (output {dim}) "
                    f"and {_name(nd)} (input {node.n_in})"
                )
            nodes.append(nd)
            dim, prev = node.n_out, nd
        return dim, prev

    out_dim, last = walk(chain.seq, chain.n_u, "chain", None)
    if out_dim != chain.n_y:
        raise ModelValidationError(
            f"dimension mismatch between {_name(last)} (output {out_dim}) and chain output (n_y={chain.n_y})"
        )
    return DimensionReport(chain.n_u, chain.n_y, tuple(nodes))


# -- static nonlinear blocks -------------------------------------------------


def eval_sn(block: SnBlock, u) -> np.ndarray:
    """Evaluate ``W g(V^T u)``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.shape != (block.n_in,):
        raise ValueError(f"'{block.label}' expects input of length {block.n_in}, got {u.size}")
    sigma = block.V.T @ u
    g = block.gamma[:, -1].copy()
    for m in range(block.gamma.shape[1] - 2, -1, -1):
        g = g * sigma + block.gamma[:, m]
    return block.W @ g


def check_decoupling(f: MultiPoly, block: SnBlock, samples: int = 200, seed: int = 0) -> float:
    """Largest ``||f(u) - eval_sn(block, u)||_inf`` over seeded unit-ball samples."""
    if (f.n_in, f.n_out) != (block.n_in, block.n_out):
        raise ValueError(
            f"polynomial is {f.n_in}->{f.n_out} but block is {block.n_in}->{block.n_out}"
        )
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(samples):
        d = rng.standard_normal(block.n_in)
        d /= np.linalg.norm(d) or 1.0
        u = d * rng.uniform() ** (1.0 / block.n_in)
        worst = max(worst, float(np.max(np.abs(f(u) - eval_sn(block, u)), initial=0.0)))
    return worst
