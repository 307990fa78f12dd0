"""Model-based value expansion experiments (C++ core)."""

from ._core import (
    combine,
    config,
    discounted_chain_value,
    metrics_header,
    run_toy,
    strategies,
    train,
    true_chain_value,
)

__all__ = [
    "combine",
    "config",
    "discounted_chain_value",
    "metrics_header",
    "run_toy",
    "strategies",
    "train",
    "true_chain_value",
]
