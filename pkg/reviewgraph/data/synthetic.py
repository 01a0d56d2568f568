#!/usr/bin/env python
"""
synthetic.py: Planted-topic worlds for end-to-end verification.

Users and items get unit-norm, non-negative topic vectors dominated by one
topic each. Interactions, content embeddings and reviews are all derived
from these vectors, so the true affinity ``user_topic . item_topic`` is a
known ranking oracle:

- each user's items are drawn without replacement with probability
  proportional to ``exp(concentration * affinity)``;
- raw image and text embeddings are two independent noisy linear lifts of
  the item topic vector into ``raw_dim`` dimensions;
- the raw review of (u, i) is a noisy lift of ``user_topic * item_topic``,
  so reviews carry user-specific signal.
"""

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.linear_model import LogisticRegression

from reviewgraph.data.core import (
    INTERACTION_COLUMNS,
    Catalog,
    EmbeddingKind,
    EmbeddingTable,
)
from reviewgraph.evaluation.metrics import rank_items
from reviewgraph.exceptions import SamplingError
from reviewgraph.loader.io import save_dataset
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)

GROUND_TRUTH_FILENAME = "ground_truth.tsv"
WORLD_FILENAME = "world.json"


@dataclass
class WorldParams:
    num_users: int = 1000
    num_items: int = 600
    num_topics: int = 8
    raw_dim: int = 768
    interaction_rate: float = 0.025
    concentration: float = 5.0
    topic_noise: float = 0.3
    sigma_review: float = 0.1
    sigma_content: float = 0.1
    missing_image_rate: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Validation of the world parameters.

        Raises:
            ValueError: If a count is not positive, a noise level is negative
              or a rate is outside [0, 1].
        """
        for name in ("num_users", "num_items", "num_topics", "raw_dim"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        for name in ("sigma_review", "sigma_content", "topic_noise", "concentration"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        for name in ("interaction_rate", "missing_image_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class PlantedWorld:
    params: WorldParams
    user_topics: np.ndarray
    item_topics: np.ndarray
    user_clusters: np.ndarray
    item_clusters: np.ndarray

    def affinity(self) -> np.ndarray:
        return self.user_topics @ self.item_topics.T


@dataclass
class GeneratedWorld:
    world: PlantedWorld
    catalog: Catalog
    interactions: pd.DataFrame
    tables: Dict[str, EmbeddingTable] = field(default_factory=dict)

    @property
    def density(self) -> float:
        cells = self.catalog.num_users * self.catalog.num_items
        return len(self.interactions) / cells


def _topic_vectors(
    count: int, num_topics: int, noise: float, rng: np.random.Generator
) -> Tuple[np.ndarray, np.ndarray]:
    clusters = np.arange(count) % num_topics
    vectors = np.eye(num_topics)[clusters] + noise * np.abs(
        rng.standard_normal((count, num_topics))
    )
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    return vectors, clusters


def plant_world(params: WorldParams) -> PlantedWorld:
    """Draws the latent topic vectors of a world."""
    rng = np.random.default_rng(params.seed)
    user_topics, user_clusters = _topic_vectors(
        params.num_users, params.num_topics, params.topic_noise, rng
    )
    item_topics, item_clusters = _topic_vectors(
        params.num_items, params.num_topics, params.topic_noise, rng
    )
    return PlantedWorld(params, user_topics, item_topics, user_clusters, item_clusters)


def _lift(num_topics: int, raw_dim: int, rng: np.random.Generator) -> np.ndarray:
    return rng.standard_normal((num_topics, raw_dim)) / np.sqrt(num_topics)


def generate(
    params: WorldParams, directory: Optional[Union[str, Path]] = None
) -> GeneratedWorld:
    """Generates interactions, raw embedding tables and the ground truth.

    Args:
        params: World parameters; the seed fixes everything.
        directory: When given, the dataset files, ``ground_truth.tsv`` and
          ``world.json`` are written there.

    Raises:
        SamplingError: If the world has no interactions.
    """
    world = plant_world(params)
    rng = np.random.default_rng([params.seed, 1])
    affinity = world.affinity()

    counts = rng.poisson(params.interaction_rate * params.num_items, params.num_users)
    counts = np.minimum(counts, params.num_items - 1)
    users, items = [], []
    for user in range(params.num_users):
        if counts[user] == 0:
            continue
        logits = params.concentration * affinity[user]
        probs = np.exp(logits - logits.max())
        probs /= probs.sum()
        chosen = rng.choice(params.num_items, counts[user], replace=False, p=probs)
        chosen = np.sort(chosen)
        users.append(np.full(chosen.size, user))
        items.append(chosen)
    if not users:
        raise SamplingError(
            "planted world produced no interactions "
            f"(interaction_rate={params.interaction_rate}, "
            f"num_items={params.num_items})"
        )
    users = np.concatenate(users)
    items = np.concatenate(items)
    interactions = pd.DataFrame(
        {"user": users, "item": items, "review_row": np.arange(users.size)},
        columns=INTERACTION_COLUMNS,
    )

    lift_img = _lift(params.num_topics, params.raw_dim, rng)
    lift_txt = _lift(params.num_topics, params.raw_dim, rng)
    lift_rev = _lift(params.num_topics, params.raw_dim, rng)
    image = world.item_topics @ lift_img
    image += params.sigma_content * rng.standard_normal(image.shape)
    text = world.item_topics @ lift_txt
    text += params.sigma_content * rng.standard_normal(text.shape)
    review = (world.user_topics[users] * world.item_topics[items]) @ lift_rev
    review += params.sigma_review * rng.standard_normal(review.shape)

    missing = rng.random(params.num_items) < params.missing_image_rate
    image[missing] = 0.0

    catalog = Catalog(
        user_ids=[f"u{u}" for u in range(params.num_users)],
        item_ids=[f"i{i}" for i in range(params.num_items)],
    )
    tables = {
        "image": EmbeddingTable(EmbeddingKind.RAW_IMAGE, image, missing=missing),
        "text": EmbeddingTable(EmbeddingKind.RAW_TEXT, text),
        "review": EmbeddingTable(EmbeddingKind.RAW_REVIEW, review),
    }
    generated = GeneratedWorld(world, catalog, interactions, tables)
    logger.info(
        "Generated world: %d users, %d items, %d interactions (density %.5f)",
        params.num_users,
        params.num_items,
        len(interactions),
        generated.density,
    )
    if directory is not None:
        write_world(generated, directory)
    return generated


def write_world(
    generated: GeneratedWorld,
    directory: Union[str, Path],
    fingerprint: Optional[str] = None,
) -> Path:
    """Writes the dataset files plus ``ground_truth.tsv`` and ``world.json``."""
    directory = Path(directory)
    for table in generated.tables.values():
        table.fingerprint = fingerprint
    save_dataset(directory, generated.catalog, generated.interactions, generated.tables)

    world = generated.world
    affinity = world.affinity()
    users, items = np.meshgrid(
        np.arange(affinity.shape[0]), np.arange(affinity.shape[1]), indexing="ij"
    )
    truth = pd.DataFrame(
        {
            "user": np.asarray(generated.catalog.user_ids)[users.ravel()],
            "item": np.asarray(generated.catalog.item_ids)[items.ravel()],
            "affinity": affinity.ravel(),
        }
    )
    with open(directory / GROUND_TRUTH_FILENAME, "w", encoding="utf-8") as handle:
        if fingerprint:
            handle.write(f"# fingerprint={fingerprint}\n")
        truth.to_csv(
            handle, sep="\t", index=False, float_format="%.17g", lineterminator="\n"
        )
    summary = {
        "params": asdict(world.params),
        "num_interactions": len(generated.interactions),
        "density": generated.density,
        "fingerprint": fingerprint,
    }
    (directory / WORLD_FILENAME).write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def read_ground_truth(
    directory: Union[str, Path], catalog: Catalog
) -> np.ndarray:
    """Dense |U| x |I| affinity matrix from ``ground_truth.tsv``."""
    truth = pd.read_csv(
        Path(directory) / GROUND_TRUTH_FILENAME,
        sep="\t",
        comment="#",
        dtype={"user": str, "item": str, "affinity": np.float64},
        float_precision="round_trip",
    )
    affinity = np.zeros((catalog.num_users, catalog.num_items))
    affinity[
        truth["user"].map(catalog.user_index).to_numpy(),
        truth["item"].map(catalog.item_index).to_numpy(),
    ] = truth["affinity"].to_numpy()
    return affinity


def oracle_rank(
    world: PlantedWorld, user: int, exclude: Optional[np.ndarray] = None
) -> np.ndarray:
    """Items ranked by true affinity, best first, ties by ascending index."""
    exclude = np.empty(0, dtype=np.int64) if exclude is None else exclude
    return rank_items(world.affinity()[user], exclude)


def review_probe_accuracy(
    generated: GeneratedWorld, review: Optional[np.ndarray] = None, seed: int = 0
) -> Tuple[float, float]:
    """Held-out accuracy of a linear probe predicting the reviewer's dominant
    topic from the review embedding, and the majority-class baseline.

    Args:
        generated: The world.
        review: Review embeddings indexed by review row; defaults to the raw
          review table.
        seed: Seed of the 70/30 probe split.
    """
    review = generated.tables["review"].matrix if review is None else review
    rows = generated.interactions["review_row"].to_numpy()
    labels = generated.world.user_clusters[generated.interactions["user"].to_numpy()]
    order = np.random.default_rng(seed).permutation(rows.size)
    cut = int(0.7 * rows.size)
    fit_idx, test_idx = order[:cut], order[cut:]
    probe = LogisticRegression(max_iter=1000)
    probe.fit(review[rows[fit_idx]], labels[fit_idx])
    accuracy = float(np.mean(probe.predict(review[rows[test_idx]]) == labels[test_idx]))
    chance = float(np.bincount(labels[test_idx]).max() / test_idx.size)
    return accuracy, chance
