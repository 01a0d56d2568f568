from .metrics import EvalReport, evaluate, ndcg_at_k, rank_items, recall_at_k
from .significance import paired_t_test

__all__ = [
    "EvalReport",
    "evaluate",
    "ndcg_at_k",
    "paired_t_test",
    "rank_items",
    "recall_at_k",
]
