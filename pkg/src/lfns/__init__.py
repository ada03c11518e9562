"""Decentralized estimation and LQ control for leader-follower linear systems."""

__version__ = "0.1.0"

from .model import (  # noqa: F401
    CompactModel,
    CostSpec,
    LfnsModel,
    ModelValidationError,
    SpecFormatError,
    assemble_compact,
    make_cost,
    make_model,
    step,
    validate,
)
