from .core import (
    INTERACTION_COLUMNS,
    NO_REVIEW,
    Catalog,
    EmbeddingKind,
    EmbeddingTable,
    InteractionDataset,
    SplitDataset,
    check_review_rows,
    empty_interactions,
    items_by_user,
    validate_interactions,
)
from .graph import BipartiteGraph

__all__ = [
    "INTERACTION_COLUMNS",
    "NO_REVIEW",
    "BipartiteGraph",
    "Catalog",
    "EmbeddingKind",
    "EmbeddingTable",
    "InteractionDataset",
    "SplitDataset",
    "check_review_rows",
    "empty_interactions",
    "items_by_user",
    "validate_interactions",
]
