#!/usr/bin/env python
"""
filter.py: K-core filtering of the interaction list.

Each round first drops users with fewer than ``user_k`` interactions, then
items with fewer than ``item_k``; rounds repeat until nothing changes.
"""

import pandas as pd

from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)


def kcore_filter(interactions: pd.DataFrame, user_k: int, item_k: int) -> pd.DataFrame:
    """Returns the largest sub-list where every user has at least ``user_k``
    and every item at least ``item_k`` interactions.

    Dense indices are left untouched; reindex through the loader if a compact
    catalog is needed.
    """
    if user_k < 1 or item_k < 1:
        raise ValueError("user_k and item_k must be positive")
    current = interactions
    rounds = 0
    while True:
        rounds += 1
        user_counts = current["user"].map(current["user"].value_counts())
        current = current.loc[user_counts >= user_k]
        item_counts = current["item"].map(current["item"].value_counts())
        kept = current.loc[item_counts >= item_k]
        if len(kept) == len(current) and (
            kept["user"].map(kept["user"].value_counts()) >= user_k
        ).all():
            current = kept
            break
        current = kept
    logger.info(
        "K-core (%d/%d) kept %d of %d interactions after %d rounds",
        user_k,
        item_k,
        len(current),
        len(interactions),
        rounds,
    )
    return current.reset_index(drop=True)
