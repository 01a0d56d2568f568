#!/usr/bin/env python
"""
metrics.py: Full-ranking top-N evaluation.

For each user with held-out items, every item outside the excluded set
(train items, plus validation items when testing) is ranked by inner-product
score, ties broken by ascending item index. Recall@K and NDCG@K are computed
per user and averaged over users with at least one relevant item.
"""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence, Union

import numpy as np
import pandas as pd

from reviewgraph.data import SplitDataset
from reviewgraph.logger import setup_logger
from reviewgraph.provenance import read_tsv_fingerprint

logger = setup_logger(__name__)

DEFAULT_KS = (5, 10)


def rank_items(scores: np.ndarray, exclude: Iterable[int]) -> np.ndarray:
    """Candidate items sorted by descending score, ties by ascending index."""
    scores = np.asarray(scores, dtype=np.float64)
    candidates = np.ones(scores.size, dtype=bool)
    candidates[np.array(list(exclude), dtype=np.int64)] = False
    order = np.argsort(-scores, kind="stable")
    return order[candidates[order]]


def recall_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float:
    """|top-k & relevant| / |relevant|; NaN when ``relevant`` is empty."""
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = set(int(x) for x in relevant)
    if not relevant:
        return float("nan")
    hits = sum(1 for item in list(ranked)[:k] if int(item) in relevant)
    return hits / len(relevant)


def ndcg_at_k(ranked: Sequence[int], relevant: Iterable[int], k: int) -> float:
    """Binary-relevance NDCG with the ideal DCG truncated at min(k, |relevant|).

    NaN when ``relevant`` is empty.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    relevant = set(int(x) for x in relevant)
    if not relevant:
        return float("nan")
    dcg = sum(
        1.0 / np.log2(rank + 2)
        for rank, item in enumerate(list(ranked)[:k])
        if int(item) in relevant
    )
    idcg = np.sum(1.0 / np.log2(np.arange(min(k, len(relevant))) + 2))
    return float(dcg / idcg)


def metric_columns(ks: Sequence[int]) -> list:
    return [name for k in ks for name in (f"R@{k}", f"N@{k}")]


@dataclass
class EvalReport:
    per_user: pd.DataFrame
    ks: Sequence[int] = DEFAULT_KS
    phase: str = "test"
    n_skipped: int = 0
    fingerprint: Optional[str] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    @property
    def aggregate(self) -> Dict[str, float]:
        return {
            column: float(self.per_user[column].mean()) if len(self.per_user) else 0.0
            for column in metric_columns(self.ks)
        }

    def to_json(self) -> Dict[str, Any]:
        return {
            "phase": self.phase,
            "ks": list(self.ks),
            "n_users": int(len(self.per_user)),
            "n_skipped": int(self.n_skipped),
            "aggregate": self.aggregate,
            "fingerprint": self.fingerprint,
            **self.metadata,
        }


def evaluate(
    user_final: np.ndarray,
    item_final: np.ndarray,
    split: SplitDataset,
    ks: Sequence[int] = DEFAULT_KS,
    phase: str = "test",
    fingerprint: Optional[str] = None,
) -> EvalReport:
    """Scores every user against the full candidate set.

    Args:
        user_final: |U| x d user embeddings.
        item_final: |I| x d item embeddings.
        split: The split; held-out items of ``phase`` are the relevance labels.
        ks: Cut-offs.
        phase: ``"test"`` excludes train and validation items from the
          candidates; ``"val"`` excludes train items only.
        fingerprint: Configuration fingerprint stored in the report.

    Returns:
        The per-user report. Users without relevant items are skipped and
        counted in ``n_skipped``.
    """
    if phase not in ("val", "test"):
        raise ValueError(f"phase must be 'val' or 'test', got {phase!r}")
    train_items = split.items_by_user("train")
    val_items = split.items_by_user("val")
    relevant_items = split.items_by_user(phase)
    max_k = max(ks)

    rows = []
    n_skipped = 0
    for user in range(split.num_users):
        relevant = relevant_items[user]
        if relevant.size == 0:
            n_skipped += 1
            continue
        exclude = train_items[user]
        if phase == "test":
            exclude = np.concatenate([exclude, val_items[user]])
        ranked = rank_items(item_final @ user_final[user], exclude)[:max_k]
        row = {"user": user}
        for k in ks:
            row[f"R@{k}"] = recall_at_k(ranked, relevant, k)
            row[f"N@{k}"] = ndcg_at_k(ranked, relevant, k)
        rows.append(row)

    per_user = pd.DataFrame(rows, columns=["user", *metric_columns(ks)])
    report = EvalReport(
        per_user=per_user,
        ks=tuple(ks),
        phase=phase,
        n_skipped=n_skipped,
        fingerprint=fingerprint,
    )
    logger.debug(
        "Evaluated %d users on %s (%d skipped)", len(per_user), phase, n_skipped
    )
    return report


def write_report(
    report: EvalReport, directory: Union[str, Path], name: str = "report"
) -> Path:
    """Writes ``<name>.tsv`` (per user) and ``<name>.json`` (aggregate)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tsv_path = directory / f"{name}.tsv"
    with open(tsv_path, "w", encoding="utf-8") as handle:
        if report.fingerprint:
            handle.write(f"# fingerprint={report.fingerprint}\n")
        report.per_user.to_csv(
            handle, sep="\t", index=False, float_format="%.10g", lineterminator="\n"
        )
    (directory / f"{name}.json").write_text(
        json.dumps(report.to_json(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    logger.info("Wrote %s report to %s", report.phase, tsv_path)
    return tsv_path


def read_report(path: Union[str, Path], ks: Sequence[int] = DEFAULT_KS) -> EvalReport:
    """Reads a per-user TSV written by `write_report`."""
    per_user = pd.read_csv(path, sep="\t", comment="#", float_precision="round_trip")
    return EvalReport(
        per_user=per_user, ks=tuple(ks), fingerprint=read_tsv_fingerprint(path)
    )
