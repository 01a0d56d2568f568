#!/usr/bin/env python
"""
core.py: Data model for the interaction corpus.

- `Catalog` maps external user/item ids to contiguous dense indices.
- Interaction lists are pandas DataFrames with integer columns ``user``,
  ``item`` and ``review_row`` (``NO_REVIEW`` when the interaction carries no
  review embedding). `validate_interactions` checks that contract.
- `EmbeddingTable` holds one vector per entity (item or interaction).
- `SplitDataset` holds the per-user train/val/test partition.
- `InteractionDataset` bundles a catalog, its interactions and tables.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from reviewgraph.exceptions import DanglingReviewError

INTERACTION_COLUMNS = ["user", "item", "review_row"]
NO_REVIEW = -1


class EmbeddingKind(str, Enum):
    RAW_IMAGE = "raw_image"
    RAW_TEXT = "raw_text"
    RAW_REVIEW = "raw_review"
    COMPRESSED_IMAGE = "compressed_image"
    COMPRESSED_TEXT = "compressed_text"
    COMPRESSED_REVIEW = "compressed_review"
    PROJECTED_IMAGE = "projected_image"
    PROJECTED_TEXT = "projected_text"
    ITEM_INIT = "item_init"
    USER_INIT = "user_init"

    @property
    def modality(self) -> str:
        return self.value.split("_", 1)[1]

    def compressed(self) -> "EmbeddingKind":
        return EmbeddingKind(f"compressed_{self.modality}")


@dataclass
class Catalog:
    user_ids: List[str] = field(default_factory=list)
    item_ids: List[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.user_ids = [str(x) for x in self.user_ids]
        self.item_ids = [str(x) for x in self.item_ids]
        self.user_index = {uid: idx for idx, uid in enumerate(self.user_ids)}
        self.item_index = {iid: idx for idx, iid in enumerate(self.item_ids)}
        self.validate()

    def validate(self) -> None:
        """Dense indices must form a bijection with the external ids.

        Raises:
            ValueError: If an external id is repeated.
        """
        if len(self.user_index) != len(self.user_ids):
            raise ValueError("user ids must be unique")
        if len(self.item_index) != len(self.item_ids):
            raise ValueError("item ids must be unique")

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_items(self) -> int:
        return len(self.item_ids)


def empty_interactions() -> pd.DataFrame:
    return pd.DataFrame({col: pd.Series(dtype=np.int64) for col in INTERACTION_COLUMNS})


def validate_interactions(
    interactions: pd.DataFrame, num_users: int, num_items: int
) -> None:
    """Checks the interaction-list contract.

    Raises:
        TypeError: If ``interactions`` is not a pandas DataFrame.
        ValueError: If a column is missing, an index is out of range or a
          (user, item) pair repeats.
    """
    if not isinstance(interactions, pd.DataFrame):
        raise TypeError("interactions must be a pandas DataFrame")
    missing = set(INTERACTION_COLUMNS) - set(interactions.columns)
    if missing:
        raise ValueError(f"interactions lack columns {sorted(missing)}")
    if interactions.empty:
        return
    users = interactions["user"].to_numpy()
    items = interactions["item"].to_numpy()
    if users.min() < 0 or users.max() >= num_users:
        raise ValueError("user index out of range")
    if items.min() < 0 or items.max() >= num_items:
        raise ValueError("item index out of range")
    if interactions.duplicated(["user", "item"]).any():
        raise ValueError("at most one interaction per (user, item) pair is allowed")


@dataclass
class EmbeddingTable:
    kind: EmbeddingKind
    matrix: np.ndarray
    missing: Optional[np.ndarray] = None
    fingerprint: Optional[str] = None

    def __post_init__(self) -> None:
        self.kind = EmbeddingKind(self.kind)
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.missing is None:
            self.missing = np.zeros(self.matrix.shape[0], dtype=bool)
        self.missing = np.asarray(self.missing, dtype=bool)
        self.validate()

    def validate(self) -> None:
        """Validation of the matrix and missing-row mask.

        Raises:
            ValueError: If the matrix is not 2-d with positive width, holds
              non-finite values, or the missing mask has the wrong length.
        """
        if self.matrix.ndim != 2 or self.matrix.shape[1] == 0:
            raise ValueError(f"{self.kind.value} table must be 2-d with dim > 0")
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError(f"{self.kind.value} table contains non-finite values")
        if self.missing.shape != (self.matrix.shape[0],):
            raise ValueError("missing mask must have one flag per row")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    @property
    def rows(self) -> int:
        return self.matrix.shape[0]


@dataclass
class SplitDataset:
    train: pd.DataFrame
    val: pd.DataFrame
    test: pd.DataFrame
    num_users: int
    num_items: int
    ratios: Tuple[float, float, float] = (0.75, 0.05, 0.20)
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Partitions must be disjoint and every user seen in val/test must
        also appear in train.

        Raises:
            ValueError: If either property fails.
        """
        for name in ("train", "val", "test"):
            validate_interactions(getattr(self, name), self.num_users, self.num_items)
        combined = pd.concat([self.train, self.val, self.test], ignore_index=True)
        if combined.duplicated(["user", "item"]).any():
            raise ValueError("train, val and test partitions must be disjoint")
        held_out = set(self.val["user"]) | set(self.test["user"])
        if not held_out <= set(self.train["user"]):
            raise ValueError("every held-out user must also appear in train")

    def all_interactions(self) -> pd.DataFrame:
        return pd.concat([self.train, self.val, self.test], ignore_index=True)

    def items_by_user(self, name: str) -> List[np.ndarray]:
        """Sorted item indices per user for one partition."""
        return items_by_user(getattr(self, name), self.num_users)


def items_by_user(interactions: pd.DataFrame, num_users: int) -> List[np.ndarray]:
    grouped = interactions.groupby("user")["item"].apply(
        lambda s: np.sort(s.to_numpy())
    )
    empty = np.empty(0, dtype=np.int64)
    return [grouped.get(u, empty) for u in range(num_users)]


@dataclass
class InteractionDataset:
    catalog: Catalog
    interactions: pd.DataFrame
    tables: Dict[str, EmbeddingTable] = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Validation of interactions against the catalog and review table.

        Raises:
            DanglingReviewError: If a review row lies outside the review table.
            ValueError: If interactions break the list contract.
        """
        validate_interactions(
            self.interactions, self.catalog.num_users, self.catalog.num_items
        )
        if "review" in self.tables:
            check_review_rows(self.interactions, self.tables["review"].rows)


def check_review_rows(
    interactions: pd.DataFrame,
    num_review_rows: int,
    line_numbers: Optional[np.ndarray] = None,
) -> None:
    """Checks that every review reference points into the review table.

    Args:
        interactions: Interaction list.
        num_review_rows: Number of rows in the review embedding table.
        line_numbers: Source-file line of each interaction, used in the error.

    Raises:
        DanglingReviewError: If a review row lies outside the review table.
    """
    rows = interactions["review_row"].to_numpy()
    out_of_range = (rows < 0) | (rows >= num_review_rows)
    bad = np.flatnonzero((rows != NO_REVIEW) & out_of_range)
    if bad.size:
        position = int(bad[0])
        raise DanglingReviewError(
            f"review row {rows[position]} outside review table of "
            f"{num_review_rows} rows",
            line=None if line_numbers is None else int(line_numbers[position]),
        )
