#!/usr/bin/env python
"""
split.py: Per-user train/validation/test partitioning.

Each user's interactions are shuffled and cut by the ratios with floor
rounding for validation and test, the remainder going to train. Users with
fewer than `MIN_INTERACTIONS_TO_SPLIT` interactions keep everything in train,
so every user with an interaction is trained on.
"""

from typing import Optional, Sequence

import numpy as np
import pandas as pd

from reviewgraph.data import SplitDataset
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)

MIN_INTERACTIONS_TO_SPLIT = 3


def split_sizes(n: int, ratios: Sequence[float]) -> tuple:
    """(train, val, test) counts for a user with ``n`` interactions."""
    if n < MIN_INTERACTIONS_TO_SPLIT:
        return n, 0, 0
    n_val = int(np.floor(n * ratios[1] + 1e-9))
    n_test = int(np.floor(n * ratios[2] + 1e-9))
    return n - n_val - n_test, n_val, n_test


def split_per_user(
    interactions: pd.DataFrame,
    num_users: int,
    num_items: int,
    ratios: Sequence[float] = (0.75, 0.05, 0.20),
    seed: Optional[int] = 0,
) -> SplitDataset:
    """Splits interactions user by user.

    Args:
        interactions: Interaction list.
        num_users: Catalog size, for validation of the result.
        num_items: Catalog size, for validation of the result.
        ratios: (train, val, test) fractions, summing to 1.
        seed: Seed of the shuffle; the same seed gives the same split.

    Returns:
        The split dataset.

    Raises:
        ValueError: If the ratios are negative or do not sum to 1.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or min(ratios) < 0 or not np.isclose(sum(ratios), 1.0):
        raise ValueError(
            f"ratios must be three non-negative fractions summing to 1, got {ratios}"
        )

    rng = np.random.default_rng(seed)
    ordered = interactions.sort_values(["user", "item"], kind="stable")
    ordered = ordered.reset_index(drop=True)
    parts = {"train": [], "val": [], "test": []}
    for _, group in ordered.groupby("user", sort=True):
        positions = group.index.to_numpy()[rng.permutation(len(group))]
        n_train, n_val, _ = split_sizes(len(group), ratios)
        parts["train"].append(positions[:n_train])
        parts["val"].append(positions[n_train : n_train + n_val])
        parts["test"].append(positions[n_train + n_val :])

    frames = {
        name: (
            ordered.loc[np.sort(np.concatenate(chunks))] if chunks else ordered.iloc[:0]
        )
        for name, chunks in parts.items()
    }
    split = SplitDataset(
        train=frames["train"].reset_index(drop=True),
        val=frames["val"].reset_index(drop=True),
        test=frames["test"].reset_index(drop=True),
        num_users=num_users,
        num_items=num_items,
        ratios=ratios,
        seed=seed,
    )
    logger.info(
        "Split %d interactions into %d train / %d val / %d test",
        len(ordered),
        len(split.train),
        len(split.val),
        len(split.test),
    )
    return split
