#!/usr/bin/env python
"""
graph.py: CSR bipartite graph of train interactions.

The user view (``user_adj``, |U| x |I|) and the item view (``item_adj``,
|I| x |U|) hold the same edges. `normalized` gives the symmetrically
normalised user-item block, entry (u, i) = 1 / sqrt(|N_u| |N_i|).
"""

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import pandas as pd
import scipy.sparse as sp


@dataclass
class BipartiteGraph:
    user_adj: sp.csr_matrix
    item_adj: sp.csr_matrix

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Both CSR views must describe the same edge set.

        Raises:
            TypeError: If either view is not a scipy CSR matrix.
            ValueError: If the views disagree.
        """
        if not (sp.isspmatrix_csr(self.user_adj) and sp.isspmatrix_csr(self.item_adj)):
            raise TypeError("user_adj and item_adj must be scipy CSR matrices")
        if self.user_adj.shape[::-1] != self.item_adj.shape:
            raise ValueError("user and item views have incompatible shapes")
        if (self.user_adj.T != self.item_adj).nnz:
            raise ValueError("user and item views must hold the same edges")

    @classmethod
    def from_interactions(
        cls, interactions: pd.DataFrame, num_users: int, num_items: int
    ) -> "BipartiteGraph":
        users = interactions["user"].to_numpy()
        items = interactions["item"].to_numpy()
        user_adj = sp.csr_matrix(
            (np.ones(len(users)), (users, items)), shape=(num_users, num_items)
        )
        user_adj.sum_duplicates()
        user_adj.data[:] = 1.0
        user_adj.sort_indices()
        item_adj = user_adj.T.tocsr()
        item_adj.sort_indices()
        return cls(user_adj=user_adj, item_adj=item_adj)

    @property
    def num_users(self) -> int:
        return self.user_adj.shape[0]

    @property
    def num_items(self) -> int:
        return self.user_adj.shape[1]

    @property
    def num_edges(self) -> int:
        return self.user_adj.nnz

    @cached_property
    def user_degree(self) -> np.ndarray:
        return np.diff(self.user_adj.indptr)

    @cached_property
    def item_degree(self) -> np.ndarray:
        return np.diff(self.item_adj.indptr)

    def user_neighbors(self, user: int) -> np.ndarray:
        """Sorted items the user interacted with (N_u)."""
        start, stop = self.user_adj.indptr[user], self.user_adj.indptr[user + 1]
        return self.user_adj.indices[start:stop]

    def item_neighbors(self, item: int) -> np.ndarray:
        """Sorted users who interacted with the item (N_i)."""
        start, stop = self.item_adj.indptr[item], self.item_adj.indptr[item + 1]
        return self.item_adj.indices[start:stop]

    def has_edge(self, user: int, item: int) -> bool:
        neighbors = self.user_neighbors(user)
        position = np.searchsorted(neighbors, item)
        return bool(position < neighbors.size and neighbors[position] == item)

    @cached_property
    def normalized(self) -> sp.csr_matrix:
        """Symmetric-degree-normalised user-item block. Isolated nodes have
        empty rows/columns, so they receive no messages."""
        inv_user = np.zeros(self.num_users)
        nonzero = self.user_degree > 0
        inv_user[nonzero] = 1.0 / np.sqrt(self.user_degree[nonzero])
        inv_item = np.zeros(self.num_items)
        nonzero = self.item_degree > 0
        inv_item[nonzero] = 1.0 / np.sqrt(self.item_degree[nonzero])
        return (sp.diags(inv_user) @ self.user_adj @ sp.diags(inv_item)).tocsr()

    @cached_property
    def normalized_t(self) -> sp.csr_matrix:
        return self.normalized.T.tocsr()
