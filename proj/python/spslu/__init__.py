"""Joint intent detection and slot filling (stack-propagation SLU)."""

from ._spslu import (
    ConfigError,
    DataError,
    Model,
    NumericError,
    __version__,
    extract_chunks,
    gradcheck,
    run_cli,
    slot_f1,
    train,
    variants,
    vote_intent,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Model",
    "NumericError",
    "__version__",
    "extract_chunks",
    "gradcheck",
    "run_cli",
    "slot_f1",
    "train",
    "variants",
    "vote_intent",
]
