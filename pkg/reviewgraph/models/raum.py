#!/usr/bin/env python
"""
raum.py: Review-aware initialisation of user embeddings.

1. `item_review_means` averages the compressed review codes each item
   received in train (R-bar, |I| x d_r).
2. `build_cross_relation` relates review dimensions to item-embedding
   dimensions: D = R-bar^T E0 (d_r x d_i), E0 stacking the initial items.
3. `init_users` projects each of the user's review codes through D, and for
   every item-embedding dimension k softmaxes the projected values over the
   user's reviewed items. The user's k-th coordinate is the resulting
   weighted sum of the items' k-th coordinates.

Everything is computed from train interactions only and frozen afterwards.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
from sklearn.cluster import SpectralCoclustering

from reviewgraph.data import NO_REVIEW
from reviewgraph.exceptions import ShapeError
from reviewgraph.logger import setup_logger
from reviewgraph.models.compressor import ItemInitEmbeddings

logger = setup_logger(__name__)


@dataclass
class ItemReviewMeans:
    matrix: np.ndarray
    counts: np.ndarray

    @property
    def unreviewed(self) -> np.ndarray:
        """Items with no train review; their rows are zero."""
        return self.counts == 0


@dataclass
class CrossRelationMatrix:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.matrix)):
            raise ValueError("cross-relation matrix contains non-finite values")
        self.matrix.setflags(write=False)

    @property
    def shape(self) -> tuple:
        return self.matrix.shape


@dataclass
class UserInitEmbeddings:
    matrix: np.ndarray
    fallback: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))
    empty: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=bool))


def _reviewed(train: pd.DataFrame) -> pd.DataFrame:
    return train.loc[train["review_row"] != NO_REVIEW]


def item_review_means(
    train: pd.DataFrame, review_codes: np.ndarray, num_items: int
) -> ItemReviewMeans:
    """Mean review code per item over train interactions that carry a review."""
    reviewed = _reviewed(train)
    items = reviewed["item"].to_numpy()
    codes = review_codes[reviewed["review_row"].to_numpy()]
    sums = np.zeros((num_items, review_codes.shape[1]))
    np.add.at(sums, items, codes)
    counts = np.bincount(items, minlength=num_items)
    means = np.divide(
        sums, counts[:, None], out=np.zeros_like(sums), where=counts[:, None] > 0
    )
    return ItemReviewMeans(matrix=means, counts=counts)


def build_cross_relation(
    means: ItemReviewMeans, items: ItemInitEmbeddings
) -> CrossRelationMatrix:
    """D = R-bar^T E0.

    Raises:
        ShapeError: If the two matrices are not row-aligned.
    """
    if means.matrix.shape[0] != items.matrix.shape[0]:
        raise ShapeError("review means and item embeddings must be row-aligned")
    return CrossRelationMatrix(matrix=means.matrix.T @ items.matrix)


def dimension_attention(cross: np.ndarray, review_codes: np.ndarray) -> np.ndarray:
    """Per-dimension attention of one user over their reviewed items.

    Args:
        cross: The (d_r, d_i) cross-relation matrix.
        review_codes: (n, d_r) review codes of the user's reviewed items.

    Returns:
        (n, d_i) weights; every column sums to 1.
    """
    logits = review_codes @ cross
    logits = logits - logits.max(axis=0, keepdims=True)
    weights = np.exp(logits)
    return weights / weights.sum(axis=0, keepdims=True)


def init_users(
    cross: CrossRelationMatrix,
    items: ItemInitEmbeddings,
    train: pd.DataFrame,
    review_codes: np.ndarray,
    num_users: int,
) -> UserInitEmbeddings:
    """Dimension-based attention initialisation of every user.

    Users without a reviewed train interaction fall back to the unweighted
    mean of their train items (flagged in ``fallback``); users without any
    train interaction get a zero vector (flagged in ``empty``).

    Raises:
        ShapeError: If D does not match the review and item widths.
    """
    d_r, d_i = cross.shape
    if review_codes.shape[1] != d_r or items.dim != d_i:
        raise ShapeError(
            f"D is {cross.shape} but review codes have width {review_codes.shape[1]} "
            f"and items width {items.dim}"
        )
    users = np.zeros((num_users, d_i))
    has_review = np.zeros(num_users, dtype=bool)

    reviewed = _reviewed(train).sort_values(["user", "item"], kind="stable")
    if not reviewed.empty:
        user_idx = reviewed["user"].to_numpy()
        starts = np.flatnonzero(np.r_[True, user_idx[1:] != user_idx[:-1]])
        lengths = np.diff(np.r_[starts, len(user_idx)])
        owners = user_idx[starts]

        logits = review_codes[reviewed["review_row"].to_numpy()] @ cross.matrix
        maxima = np.maximum.reduceat(logits, starts, axis=0)
        logits -= np.repeat(maxima, lengths, axis=0)
        weights = np.exp(logits)
        weights /= np.repeat(np.add.reduceat(weights, starts, axis=0), lengths, axis=0)
        weighted = weights * items.matrix[reviewed["item"].to_numpy()]
        users[owners] = np.add.reduceat(weighted, starts, axis=0)
        has_review[owners] = True

    degree = np.bincount(train["user"].to_numpy(), minlength=num_users)
    empty = degree == 0
    fallback = ~has_review & ~empty
    if fallback.any():
        rows = train.loc[train["user"].isin(np.flatnonzero(fallback))]
        sums = np.zeros((num_users, d_i))
        np.add.at(sums, rows["user"].to_numpy(), items.matrix[rows["item"].to_numpy()])
        users[fallback] = sums[fallback] / degree[fallback, None]
        logger.warning(
            "%d users have no reviewed train interaction; using mean item embedding",
            int(fallback.sum()),
        )
    if empty.any():
        logger.warning("%d users have no train interaction", int(empty.sum()))
    return UserInitEmbeddings(matrix=users, fallback=fallback, empty=empty)


@dataclass
class CoClustering:
    row_labels: np.ndarray
    column_labels: np.ndarray


def export_cross_relation(
    cross: CrossRelationMatrix,
    path: Union[str, Path],
    n_clusters: int = 4,
    seed: Optional[int] = 0,
    fingerprint: Optional[str] = None,
) -> CoClustering:
    """Writes D as a TSV matrix plus co-cluster assignments for heatmaps.

    Rows (review dimensions) and columns (item dimensions) are co-clustered
    with spectral co-clustering on |D|. Assignments go to
    ``<stem>_rows.tsv`` and ``<stem>_cols.tsv`` beside ``path``. A zero D
    cannot be co-clustered and gets a single cluster.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    magnitude = np.abs(np.asarray(cross.matrix))
    n_rows, n_cols = magnitude.shape
    k = min(n_clusters, n_rows, n_cols)

    if not magnitude.any() or k < 2:
        if not magnitude.any():
            logger.warning("Cross-relation matrix is zero; exporting a single cluster")
        result = CoClustering(
            row_labels=np.zeros(n_rows, dtype=np.int64),
            column_labels=np.zeros(n_cols, dtype=np.int64),
        )
    else:
        # rows or columns of all zeros break the spectral normalisation
        model = SpectralCoclustering(n_clusters=k, random_state=seed)
        model.fit(magnitude + 1e-12)
        result = CoClustering(
            row_labels=model.row_labels_.astype(np.int64),
            column_labels=model.column_labels_.astype(np.int64),
        )

    header = f"# fingerprint={fingerprint}\n" if fingerprint else ""
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(header)
        pd.DataFrame(cross.matrix).to_csv(
            handle,
            sep="\t",
            header=False,
            index=False,
            float_format="%.17g",
            lineterminator="\n",
        )
    for suffix, labels in (("rows", result.row_labels), ("cols", result.column_labels)):
        labels_path = path.with_name(f"{path.stem}_{suffix}.tsv")
        with open(labels_path, "w", encoding="utf-8") as handle:
            handle.write(header)
            pd.DataFrame({"index": np.arange(labels.size), "cluster": labels}).to_csv(
                handle, sep="\t", index=False, lineterminator="\n"
            )
    logger.info("Exported cross-relation matrix %s to %s", cross.shape, path)
    return result
