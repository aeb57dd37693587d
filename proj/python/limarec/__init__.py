"""Streaming multi-interest sequential recommender."""

from ._core import (
    DataError,
    FeatureMap,
    NumericError,
    Recommender,
    UserState,
    hr_at_k,
    ndcg_at_k,
    pessimistic_rank,
    run_cli,
)

__all__ = [
    "DataError",
    "FeatureMap",
    "NumericError",
    "Recommender",
    "UserState",
    "hr_at_k",
    "ndcg_at_k",
    "pessimistic_rank",
    "run_cli",
]
