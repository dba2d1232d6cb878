"""Exact Koopman embeddings of block-oriented nonlinear systems.

A block chain of LTI systems and static polynomial nonlinearities (series and
parallel interconnections, no feedback) is rewritten as a finite-dimensional
model that is linear in a lifted state and polynomial in the input (PITI).
"""

from importlib import resources
from pathlib import Path

from .embed import (
    BltiModel,
    InputMap,
    InputTerm,
    PitiModel,
    classify,
    embed_chain,
    predict_blti,
    reduce,
    to_blti,
)
from .model_ir import (
    BlockChain,
    BlockKoopError,
    LtiBlock,
    ModelParseError,
    ModelValidationError,
    Parallel,
    PreconditionError,
    SnBlock,
    load_model,
    parse_model,
    validate,
)

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Path of a bundled example model (``mimo_wh``, ``mimo_wh_noft``, ``siso_chain``, ``sn_example``)."""
    if not name.endswith(".json"):
        name += ".json"
    return Path(str(resources.files(__package__) / "fixtures" / name))


def load_fixture(name: str) -> BlockChain:
    return load_model(fixture_path(name))
