from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import pytest

from reviewgraph.data import INTERACTION_COLUMNS, BipartiteGraph
from reviewgraph.models.epim import InitSources
from reviewgraph.preprocessing.split import split_per_user

FIXTURES = Path(__file__).resolve().parent / "fixtures" / "data"


def _random_interactions(
    num_users: int, num_items: int, per_user: int, seed: int = 0, reviewed: float = 1.0
) -> pd.DataFrame:
    rng = np.random.default_rng(seed)
    users, items = [], []
    for user in range(num_users):
        chosen = np.sort(rng.choice(num_items, per_user, replace=False))
        users.append(np.full(per_user, user))
        items.append(chosen)
    users = np.concatenate(users)
    items = np.concatenate(items)
    review_rows = np.arange(users.size)
    review_rows[rng.random(users.size) >= reviewed] = -1
    return pd.DataFrame(
        {"user": users, "item": items, "review_row": review_rows},
        columns=INTERACTION_COLUMNS,
    )


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def random_interactions() -> Callable[..., pd.DataFrame]:
    """Factory of interaction lists with ``per_user`` distinct items per user."""
    return _random_interactions


@pytest.fixture
def random_graph() -> Callable[..., BipartiteGraph]:
    """Factory of random bipartite graphs, isolated nodes allowed."""

    def make(num_users: int, num_items: int, density: float, seed: int = 0):
        rng = np.random.default_rng(seed)
        mask = rng.random((num_users, num_items)) < density
        users, items = np.nonzero(mask)
        frame = pd.DataFrame({"user": users, "item": items, "review_row": -1})
        return BipartiteGraph.from_interactions(frame, num_users, num_items)

    return make


@pytest.fixture
def small_split():
    """30 users x 40 items, 20 interactions each (15 train, 1 val, 4 test),
    every interaction reviewed."""
    interactions = _random_interactions(30, 40, 20, seed=3)
    return split_per_user(interactions, 30, 40, seed=0)


@pytest.fixture
def numeric_gradient() -> Callable[[Callable[[], float], np.ndarray], np.ndarray]:
    """Central finite differences of ``loss()`` with respect to ``param``,
    perturbing ``param`` in place (h = 1e-5)."""

    def gradient(loss: Callable[[], float], param: np.ndarray, h: float = 1e-5):
        grad = np.zeros_like(param, dtype=np.float64)
        flat = param.reshape(-1)
        out = grad.reshape(-1)
        for index in range(flat.size):
            original = flat[index]
            flat[index] = original + h
            upper = loss()
            flat[index] = original - h
            lower = loss()
            flat[index] = original
            out[index] = (upper - lower) / (2 * h)
        return grad

    return gradient


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


@pytest.fixture
def rel_error() -> Callable[[np.ndarray, np.ndarray], float]:
    return relative_error


@pytest.fixture
def sources(small_split):
    """Random content codes for ``small_split``: 4-wide image and text codes
    and 5-wide review codes for every review row."""
    rng = np.random.default_rng(0)
    num_reviews = int(small_split.all_interactions()["review_row"].max()) + 1
    return InitSources(
        train=small_split.train,
        image_codes=rng.standard_normal((40, 4)),
        text_codes=rng.standard_normal((40, 4)) * 3,
        review_codes=rng.standard_normal((num_reviews, 5)),
    )
