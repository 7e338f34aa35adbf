"""Closed-form tensor voting with MRF refinement and EM-based robust fitting."""
from __future__ import annotations

from ._accel import BACKEND
from .errors import (DegenerateInputError, DegenerateSupportError, InvalidInputError,
                     NumericalFailure, TensorVoteError, UnderdeterminedError, UnderflowError)
from .spatial import NeighborIndex, PointSet
from .tensors import Scale, cftv_vote, cftv_vote_inverse, cftv_vote_symmetric, decompose

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "DegenerateInputError", "DegenerateSupportError", "InvalidInputError",
    "NeighborIndex", "NumericalFailure", "PointSet", "Scale", "TensorVoteError",
    "UnderdeterminedError", "UnderflowError", "cftv_vote", "cftv_vote_inverse",
    "cftv_vote_symmetric", "decompose",
]
