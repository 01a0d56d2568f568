#!/usr/bin/env python
"""
sampling.py: Uniform negative sampling for pairwise training.

A negative for user u is an item outside N_u in the train graph, drawn
uniformly by rejection.
"""

import numpy as np

from reviewgraph.data import BipartiteGraph
from reviewgraph.exceptions import SamplingError


def sample_negative(user: int, graph: BipartiteGraph, rng: np.random.Generator) -> int:
    """Draws one item the user has not interacted with in train.

    Raises:
        SamplingError: If the user interacted with every item.
    """
    if graph.user_degree[user] >= graph.num_items:
        raise SamplingError(f"user {user} has interacted with every item")
    while True:
        item = int(rng.integers(graph.num_items))
        if not graph.has_edge(user, item):
            return item


def sample_negatives(
    users: np.ndarray, graph: BipartiteGraph, rng: np.random.Generator
) -> np.ndarray:
    """Vectorised `sample_negative`: one negative per entry of ``users``.

    Rejected draws are redrawn in bulk until every entry is valid, which
    keeps each draw uniform over the user's non-interacted items.

    Raises:
        SamplingError: If one of the users interacted with every item.
    """
    users = np.asarray(users, dtype=np.int64)
    full = graph.user_degree[users] >= graph.num_items
    if full.any():
        raise SamplingError(
            f"user {int(users[full][0])} has interacted with every item"
        )
    negatives = rng.integers(graph.num_items, size=users.size)
    pending = np.arange(users.size)
    while pending.size:
        rows, cols = users[pending], negatives[pending]
        hits = np.asarray(graph.user_adj[rows, cols]).ravel() > 0
        pending = pending[hits]
        negatives[pending] = rng.integers(graph.num_items, size=pending.size)
    return negatives
