"""Phase-only control of linear absorption in a three-level Lambda system."""

from ._linabs import (
    Config,
    Problem,
    constant_sweep,
    validate,
    LEVEL_G,
    LEVEL_S,
    LEVEL_F,
)

__all__ = ["Config", "Problem", "constant_sweep", "validate", "LEVEL_G", "LEVEL_S", "LEVEL_F"]
