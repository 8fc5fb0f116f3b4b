"""Federated LightGCN training simulator with a full-graph reference trainer."""

from fedlight._core import (
    expansion_oracle,
    fixture_edges,
    protocol_expansion,
    sym_norm_coeff,
    train_centralized,
    train_federated,
)

__all__ = [
    "expansion_oracle",
    "fixture_edges",
    "protocol_expansion",
    "sym_norm_coeff",
    "train_centralized",
    "train_federated",
]
