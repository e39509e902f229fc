"""Gradient low-rank projection toolkit.

Matrices are NumPy float64 arrays. Configs, specs and memory requests are the
same dicts the ``galore`` command line reads from JSON files. ``ConfigError``
carries ``(message, field_path)`` in ``args``; ``DivergenceError`` carries
``(message, last_valid_step)``.
"""

from ._core import (
    NEVER_SWITCH,
    VERIFY_SEED,
    ConfigError,
    DivergenceError,
    GaLoreOptimizer,
    Projector,
    estimate_layer,
    estimate_memory,
    numerical_rank,
    q8_roundtrip,
    stable_rank,
    svd,
    theory,
    train,
    verify,
)

__all__ = [
    "NEVER_SWITCH",
    "VERIFY_SEED",
    "ConfigError",
    "DivergenceError",
    "GaLoreOptimizer",
    "Projector",
    "estimate_layer",
    "estimate_memory",
    "numerical_rank",
    "q8_roundtrip",
    "stable_rank",
    "svd",
    "theory",
    "train",
    "verify",
]
