"""Scene labeling with four-direction recurrent context over the image lattice.

Feature maps are plain numpy arrays of shape (height, width, channels) in
row-major order; weight matrices are (out, in); vectors are 1-D. All passes
are hand-derived, deterministic, and verified against finite differences.
"""

from latticeseg.errors import (
    DegenerateInputError,
    DimensionError,
    ParseError,
    StateError,
    TrainingError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "DimensionError",
    "ParseError",
    "StateError",
    "TrainingError",
]
