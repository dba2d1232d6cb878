"""Command-line front end: ``blockkoop validate | embed | compare``.

Exit codes: 0 ok, 2 parse error, 3 validation error, 4 numerical failure,
5 precondition error. Verbosity follows ``BLOCKKOOP_LOG=debug|info``.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .embed import classify, embed_chain, model_to_json, reduce
from .model_ir import ModelParseError, ModelValidationError, PreconditionError, load_model, validate
from .sim import (
    Multisine,
    SimConfig,
    SimulationDivergence,
    WhiteNoise,
    compare,
    initial_state,
    lift_initial,
    read_samples_csv,
    simulate_chain,
    simulate_piti,
    stage_inputs,
)

log = logging.getLogger("blockkoop")

EXIT_OK, EXIT_PARSE, EXIT_INVALID, EXIT_NUMERIC, EXIT_PRECONDITION = 0, 2, 3, 4, 5


@dataclass
class RunManifest:
    model: str
    command: str
    version: str = __version__
    config: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _read(path: str):
    try:
        return load_model(path)
    except OSError as exc:
        raise ModelParseError(f"cannot read {path}: {exc.strerror}") from None


def _load(path: str):
    chain = _read(path)
    validate(chain)
    return chain


def cmd_validate(args) -> int:
    chain = _read(args.model)
    report = validate(chain)
    print(report)
    print("valid")
    print(RunManifest(args.model, "validate").to_json())
    return EXIT_OK


def cmd_embed(args) -> int:
    chain = _load(args.model)
    model = embed_chain(chain, reduce_each=args.reduce_each)
    n_full = model.n_z
    if args.reduce:
        model, _ = reduce(model)
    manifest = RunManifest(args.model, "embed", config={"reduce": args.reduce, "reduce_each": args.reduce_each})
    if args.out:
        Path(args.out).write_text(json.dumps(model_to_json(model)), encoding="utf-8")
        manifest.outputs.append(args.out)
    print(f"{n_full} -> {model.n_z}, class={classify(model)}")
    print(manifest.to_json())
    return EXIT_OK


def _parse_input(text: str, seed: int):
    if text == "gauss":
        return WhiteNoise(seed)
    if text == "multisine":
        return Multisine()
    if text.startswith("file:"):
        return read_samples_csv(text[5:])
    raise PreconditionError(f"unknown input spec {text!r}; use gauss, multisine or file:<csv>")


def _parse_x0(text: str, chain):
    if text == "all-ones":
        return initial_state(chain)
    if text.startswith("file:"):
        with open(text[5:], encoding="utf-8") as fh:
            obj = json.load(fh)
        return {k: np.asarray(v, dtype=float) for k, v in obj.items()}
    raise PreconditionError(f"unknown x0 spec {text!r}; use all-ones or file:<json>")


def cmd_compare(args) -> int:
    chain = _load(args.model)
    signal = _parse_input(args.input, args.seed)
    horizon = args.horizon
    if horizon is None:
        if args.input.startswith("file:"):
            horizon = (len(signal.values) - 1) * args.dt
        else:
            horizon = 20.0 if args.input == "multisine" else 5.0
    cfg = SimConfig(dt=args.dt, horizon=horizon)
    x0 = _parse_x0(args.x0, chain)
    model, _ = reduce(embed_chain(chain))
    u = stage_inputs(signal, chain.n_u, cfg)
    ref = simulate_chain(chain, x0, u, cfg)
    lifted = simulate_piti(model, lift_initial(model, x0), u, cfg)
    report = compare(ref, lifted)
    manifest = RunManifest(
        args.model,
        "compare",
        config={"input": args.input, "seed": args.seed, "dt": args.dt, "horizon": horizon, "x0": args.x0},
    )
    if args.out_csv:
        out = Path(args.out_csv)
        lifted_path = out.with_name(f"{out.stem}_lifted{out.suffix}")
        ref.to_csv(out)
        lifted.to_csv(lifted_path)
        manifest.outputs += [str(out), str(lifted_path)]
    print(f"n_z={model.n_z}, class={classify(model)}")
    print(report)
    print(manifest.to_json())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="blockkoop", description="Exact Koopman embeddings of block-chain systems")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    v = sub.add_parser("validate", help="check a model file and print its dimensions")
    v.add_argument("model")
    v.set_defaults(func=cmd_validate)

    e = sub.add_parser("embed", help="build the lifted model")
    e.add_argument("model")
    e.add_argument("--reduce", action="store_true", help="merge duplicate monomial coordinates")
    e.add_argument("--reduce-each", action="store_true", help="also merge after every SN block")
    e.add_argument("--out", help="write the embedded model as JSON")
    e.set_defaults(func=cmd_embed)

    c = sub.add_parser("compare", help="simulate chain and lifted model and report the output error")
    c.add_argument("model")
    c.add_argument("--input", default="gauss", help="gauss | multisine | file:<csv>")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--dt", type=float, default=1e-4)
    c.add_argument("--horizon", type=float, default=None, help="seconds (default 5, or 20 for multisine)")
    c.add_argument("--x0", default="all-ones", help="all-ones | file:<json>")
    c.add_argument("--out-csv", help="chain trajectory CSV; the lifted one goes to <stem>_lifted<suffix>")
    c.set_defaults(func=cmd_compare)
    return p


def main(argv=None) -> int:
    level = os.environ.get("BLOCKKOOP_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ModelParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ModelValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SimulationDivergence as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (PreconditionError, ValueError, OSError) as exc:
        print(f"precondition error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


if __name__ == "__main__":
    sys.exit(main())
