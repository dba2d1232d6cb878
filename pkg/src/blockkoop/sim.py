"""Fixed-step RK4 simulation of block chains and lifted models.

Both sides of a comparison are driven by the same precomputed stage inputs:
for step ``n`` the RK4 stages see ``u(t_n)``, ``u(t_n + dt/2)`` (twice) and
``u(t_n + dt)``. With a held input all three equal the sample ``u_n``.
Outputs are recorded on the grid ``t_n = n dt`` from ``(x_n, u(t_n))``.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence, Union

import numpy as np
import scipy.sparse as sp

from .embed import BltiModel, PitiModel
from .kron import lift
from .model_ir import BlockChain, BlockKoopError, LtiBlock, PreconditionError, SnBlock, iter_blocks

log = logging.getLogger(__name__)


class SimulationDivergence(BlockKoopError):
    """The integrated state became non-finite."""

    def __init__(self, t: float, what: str = "state"):
        super().__init__(f"non-finite {what} at t={t:.6g}")
        self.t = t


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-4
    horizon: float = 5.0
    method: str = "rk4"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.horizon >= self.dt:
            raise ValueError("horizon must be at least one step")
        if self.method != "rk4":
            raise ValueError(f"unsupported method {self.method!r}")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def times(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


@dataclass(frozen=True)
class WhiteNoise:
    """Gaussian ``N(0, variance I)`` samples held constant over each step."""

    seed: int = 0
    variance: float = 1.0


@dataclass(frozen=True)
class Multisine:
    """``sum_i amps[i] sin(2 pi freqs[i] t + phases[i])`` on every channel."""

    freqs: tuple[float, ...] = tuple(np.linspace(0.1, 1.0, 6))
    amps: tuple[float, ...] = (1.0, 0.8, 0.6, 0.5, 0.4, 0.3)
    phases: tuple[float, ...] | None = None

    def __post_init__(self):
        object.__setattr__(self, "freqs", tuple(float(f) for f in self.freqs))
        object.__setattr__(self, "amps", tuple(float(a) for a in self.amps))
        if self.phases is None:
            object.__setattr__(self, "phases", (0.0,) * len(self.freqs))
        object.__setattr__(self, "phases", tuple(float(p) for p in self.phases))
        if not len(self.freqs) == len(self.amps) == len(self.phases):
            raise ValueError("freqs, amps and phases must have equal length")

    def __call__(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        out = np.zeros_like(t)
        for f, a, p in zip(self.freqs, self.amps, self.phases):
            out += a * np.sin(2 * np.pi * f * t + p)
        return out


@dataclass(frozen=True, eq=False)
class Samples:
    """External input, one row per grid step, held over the step."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise ValueError("samples must be a finite 2-D array")
        object.__setattr__(self, "values", v)


InputSignal = Union[WhiteNoise, Multisine, Samples]


@dataclass(frozen=True, eq=False)
class StageInputs:
    """Inputs at the grid points and at the RK4 mid/end stages of each step."""

    grid: np.ndarray  # (N + 1, n_u)
    mid: np.ndarray  # (N, n_u)
    end: np.ndarray  # (N, n_u)


def stage_inputs(spec: InputSignal, n_u: int, cfg: SimConfig) -> StageInputs:
    N = cfg.n_steps
    if isinstance(spec, WhiteNoise):
        rng = np.random.default_rng(spec.seed)
        grid = np.sqrt(spec.variance) * rng.standard_normal((N + 1, n_u))
        return StageInputs(grid, grid[:-1], grid[:-1])
    if isinstance(spec, Multisine):
        t = cfg.times()
        grid = np.repeat(spec(t)[:, None], n_u, axis=1)
        mid = np.repeat(spec(t[:-1] + 0.5 * cfg.dt)[:, None], n_u, axis=1)
        return StageInputs(grid, mid, grid[1:])
    if isinstance(spec, Samples):
        v = spec.values
        if v.shape[1] != n_u:
            raise ValueError(f"samples have {v.shape[1]} channels, model has {n_u}")
        if v.shape[0] < N + 1:
            raise ValueError(f"need {N + 1} input samples for the horizon, got {v.shape[0]}")
        grid = v[: N + 1]
        return StageInputs(grid, grid[:-1], grid[:-1])
    raise TypeError(f"unknown input signal {spec!r}")


def gen_input(spec: InputSignal, n_u: int, cfg: SimConfig) -> np.ndarray:
    """Input sampled on the time grid, shape ``(N + 1, n_u)``."""
    return stage_inputs(spec, n_u, cfg).grid


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    inputs: np.ndarray
    outputs: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        if len(self.inputs) != n or len(self.outputs) != n or (self.states is not None and len(self.states) != n):
            raise ValueError("trajectory arrays must have equal length")

    def to_csv(self, path) -> None:
        cols = [self.times[:, None], self.inputs, self.outputs]
        header = ["t"] + [f"u_{i + 1}" for i in range(self.inputs.shape[1])]
        header += [f"y_{i + 1}" for i in range(self.outputs.shape[1])]
        if self.states is not None:
            cols.append(self.states)
            header += [f"z_{i + 1}" for i in range(self.states.shape[1])]
        data = np.hstack(cols)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for row in data:
                w.writerow(["%.17g" % v for v in row])


def read_samples_csv(path) -> Samples:
    """Input samples from a CSV; ``u_*`` columns are used if present, otherwise all columns."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty input file")
    header = rows[0]
    try:
        [float(x) for x in header]
        body, cols = rows, list(range(len(header)))
    except ValueError:
        body = rows[1:]
        cols = [i for i, h in enumerate(header) if h.strip().startswith("u")] or list(range(len(header)))
    return Samples(np.array([[float(r[i]) for i in cols] for r in body if r]))


@dataclass(frozen=True)
class ErrorReport:
    max_abs: float
    rms: float
    per_channel_max: tuple[float, ...]
    per_channel_rms: tuple[float, ...]
    scale: float = 0.0

    @property
    def max_rel(self) -> float:
        """``max_abs`` relative to the largest reference output magnitude."""
        return self.max_abs / self.scale if self.scale > 0 else self.max_abs

    def __str__(self) -> str:
        ch = ", ".join(f"{v:.3e}" for v in self.per_channel_max)
        return f"max_abs={self.max_abs:.3e} rms={self.rms:.3e} max_rel={self.max_rel:.3e} per_channel_max=[{ch}]"


def compare(a: Trajectory, b: Trajectory) -> ErrorReport:
    """Output error of ``b`` against the reference ``a``."""
    if a.times.shape != b.times.shape or not np.array_equal(a.times, b.times):
        raise ValueError("trajectories are on different time grids")
    if a.outputs.shape != b.outputs.shape:
        raise ValueError("trajectories have different output dimensions")
    err = np.abs(a.outputs - b.outputs)
    if err.size == 0:
        return ErrorReport(0.0, 0.0, (), (), 0.0)
    return ErrorReport(
        max_abs=float(err.max()),
        rms=float(np.sqrt(np.mean(err**2))),
        per_channel_max=tuple(float(v) for v in err.max(axis=0)),
        per_channel_rms=tuple(float(v) for v in np.sqrt(np.mean(err**2, axis=0))),
        scale=float(np.abs(a.outputs).max()),
    )


# -- integrator ----------------------------------------------------------------


def _rk4(f: Callable, x0: np.ndarray, u: StageInputs, cfg: SimConfig, keep_states: bool) -> tuple:
    """Integrate with ``f(x, u) -> (dx, y)``; the grid output reuses the next first stage."""
    N, h = cfg.n_steps, cfg.dt
    x = np.array(x0, dtype=float)
    dx, y = f(x, u.grid[0])
    ys = np.empty((N + 1, np.size(y)))
    ys[0] = y
    xs = np.empty((N + 1, x.size)) if keep_states else None
    if keep_states:
        xs[0] = x
    for n in range(N):
        k1 = dx
        k2 = f(x + 0.5 * h * k1, u.mid[n])[0]
        k3 = f(x + 0.5 * h * k2, u.mid[n])[0]
        k4 = f(x + h * k3, u.end[n])[0]
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(x)):
            raise SimulationDivergence((n + 1) * h)
        dx, ys[n + 1] = f(x, u.grid[n + 1])
        if keep_states:
            xs[n + 1] = x
    if not np.all(np.isfinite(ys)):
        bad = int(np.argmax(~np.all(np.isfinite(ys), axis=1)))
        raise SimulationDivergence(bad * h, "output")
    return ys, xs


def _as_stage(input: InputSignal | StageInputs, n_u: int, cfg: SimConfig) -> StageInputs:
    return input if isinstance(input, StageInputs) else stage_inputs(input, n_u, cfg)


# -- block chain -----------------------------------------------------------------


def _state_layout(chain: BlockChain) -> dict[str, slice]:
    layout, k = {}, 0
    for b in iter_blocks(chain.seq):
        if isinstance(b, LtiBlock):
            layout[b.label] = slice(k, k + b.n_x)
            k += b.n_x
    return layout


def _chain_fn(chain: BlockChain, layout: Mapping[str, slice]):
    """Return ``g(x, u) -> (dx, y)`` propagating signals through the chain."""

    def compile_seq(seq):
        steps = []
        for node in seq:
            if isinstance(node, LtiBlock):
                steps.append(("lti", layout[node.label], node.A, node.B, node.C, node.D))
            elif isinstance(node, SnBlock):
                # Horner coefficients, highest degree first
                steps.append(("sn", node.V.T, node.gamma[:, ::-1].T.copy(), node.W))
            else:
                steps.append(("par", [compile_seq(br) for br in node.branches]))
        return steps

    def run(steps, s, x, dx):
        for st in steps:
            if st[0] == "lti":
                _, sl, A, B, C, D = st
                xs = x[sl]
                dx[sl] = A @ xs + B @ s
                s = C @ xs + D @ s
            elif st[0] == "sn":
                _, VT, coefs, W = st
                sigma = VT @ s
                g = coefs[0]
                for c in coefs[1:]:
                    g = g * sigma + c
                s = W @ g
            else:
                s = sum(run(br, s, x, dx) for br in st[1])
        return s

    program = compile_seq(chain.seq)

    def g(x, u):
        dx = np.empty_like(x)
        y = run(program, np.asarray(u, dtype=float), x, dx)
        return dx, y

    return g


def initial_state(chain: BlockChain, value: float = 1.0) -> dict[str, np.ndarray]:
    """Every dynamic block starts at ``value * ones``."""
    return {b.label: np.full(b.n_x, value) for b in iter_blocks(chain.seq) if isinstance(b, LtiBlock)}


def simulate_chain(
    chain: BlockChain,
    x0: Mapping[str, Sequence[float]],
    input: InputSignal | StageInputs,
    cfg: SimConfig,
    keep_states: bool = False,
) -> Trajectory:
    layout = _state_layout(chain)
    n = sum(s.stop - s.start for s in layout.values())
    x = np.zeros(n)
    for label, sl in layout.items():
        if sl.stop == sl.start:
            continue
        if label not in x0:
            raise PreconditionError(f"no initial state for block '{label}'")
        v = np.asarray(x0[label], dtype=float).ravel()
        if v.size != sl.stop - sl.start:
            raise PreconditionError(f"initial state for '{label}' has length {v.size}, expected {sl.stop - sl.start}")
        x[sl] = v
    u = _as_stage(input, chain.n_u, cfg)
    g = _chain_fn(chain, layout)
    ys, xs = _rk4(g, x, u, cfg, keep_states)
    return Trajectory(cfg.times(), u.grid.copy(), ys, xs)


# -- lifted models -----------------------------------------------------------------


def _use_sparse(M: np.ndarray) -> bool:
    return M.shape[0] >= 200 and np.count_nonzero(M) < 0.05 * M.size


def piti_function(model: PitiModel) -> Callable:
    """``f(z, u) -> (dz, y)`` for a PITI model.

    The whole model is one array ``M`` acting on ``[1; z] (x) w(u)`` with
    ``w(u) = [1; u^(d1); u^(d2); ...]``: the ``1`` slot of ``w`` carries ``A``
    and ``C``, the others the input-map coefficients.
    """
    n_z, n_y, n_u = model.n_z, model.n_y, model.n_u
    degrees = sorted(set(model.state_input.degrees) | set(model.output_input.degrees))
    offsets, width = {}, 1
    for d in degrees:
        offsets[d] = width
        width += n_u**d
    M = np.zeros((n_z + n_y, 1 + n_z, width))
    M[:n_z, 1:, 0] = model.A
    M[n_z:, 1:, 0] = model.C
    for rows, imap in ((slice(0, n_z), model.state_input), (slice(n_z, n_z + n_y), model.output_input)):
        for t in imap.terms:
            M[rows, :, offsets[t.d] : offsets[t.d] + n_u**t.d] = np.transpose(t.coef, (1, 0, 2))
    max_d = max(degrees, default=0)

    def features(u):
        w, cur = [np.ones(1)], np.ones(1)
        for d in range(1, max_d + 1):
            cur = np.kron(cur, u)
            if d in offsets:
                w.append(cur)
        return np.concatenate(w)

    flat = M.reshape(n_z + n_y, -1)
    if _use_sparse(flat):
        flat = sp.csr_matrix(flat)

        def f(z, u):
            r = flat @ np.outer(np.concatenate(([1.0], z)), features(u)).ravel()
            return r[:n_z], r[n_z:]

        return f

    # RK4 stages often share an input sample; contract M with it once
    cache = {"u": None, "Mu": None}

    def f(z, u):
        if cache["u"] is None or not np.array_equal(u, cache["u"]):
            cache["u"] = np.array(u, dtype=float)
            cache["Mu"] = M @ features(u)
        Mu = cache["Mu"]
        r = Mu[:, 0] + Mu[:, 1:] @ z
        return r[:n_z], r[n_z:]

    return f


def simulate_piti(
    model: PitiModel, z0, input: InputSignal | StageInputs, cfg: SimConfig, keep_states: bool = False
) -> Trajectory:
    z0 = np.asarray(z0, dtype=float).ravel()
    if z0.size != model.n_z:
        raise ValueError(f"z0 has length {z0.size}, model has n_z={model.n_z}")
    u = _as_stage(input, model.n_u, cfg)
    ys, zs = _rk4(piti_function(model), z0, u, cfg, keep_states)
    return Trajectory(cfg.times(), u.grid.copy(), ys, zs)


def simulate_blti(
    model: BltiModel, z0, input: InputSignal | StageInputs, cfg: SimConfig, keep_states: bool = False
) -> Trajectory:
    z0 = np.asarray(z0, dtype=float).ravel()
    n_u = model.B.shape[1]
    u = _as_stage(input, n_u, cfg)
    # dz = A z + [Bbar_1 ... Bbar_m] (u (x) z) + B u
    Bcat = np.hstack(list(model.Bbar)) if n_u else np.zeros((z0.size, 0))
    A, B, C = model.A, model.B, model.C

    def f(z, u):
        return A @ z + Bcat @ np.kron(u, z) + B @ u, C @ z

    ys, zs = _rk4(f, z0, u, cfg, keep_states)
    return Trajectory(cfg.times(), u.grid.copy(), ys, zs)


def lift_initial(model: PitiModel | BltiModel, x0: Mapping[str, Sequence[float]]) -> np.ndarray:
    """Lifted initial condition ``z0 = Phi(x0)`` from per-block states."""
    try:
        return lift(model.atlas, x0)
    except KeyError as exc:
        raise PreconditionError(str(exc.args[0])) from None
