#!/usr/bin/env python
"""
experiments.py: Mode ablation and propagation-depth sweep.

Both experiments train one model per setting on the same split and content
codes, evaluate it on the test partition and collect the aggregate metrics
in a single table. The ablation also reports paired t-test p-values of
every mode against the first one listed.
"""

from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from reviewgraph.config import TrainConfig
from reviewgraph.data import BipartiteGraph, SplitDataset
from reviewgraph.evaluation.metrics import (
    DEFAULT_KS,
    EvalReport,
    evaluate,
    metric_columns,
)
from reviewgraph.evaluation.significance import paired_t_test
from reviewgraph.logger import setup_logger
from reviewgraph.models.epim import (
    DEFAULT_LAYERS,
    InitMode,
    InitSources,
    ModelState,
    TrainResult,
    init_mode,
    propagate,
    train,
)
from reviewgraph.numerics import AdamWState
from reviewgraph.provenance import fingerprint_comment

logger = setup_logger(__name__)


def fit_and_evaluate(
    split: SplitDataset,
    mode: Union[InitMode, str],
    sources: Optional[InitSources] = None,
    num_layers: int = DEFAULT_LAYERS,
    settings: Optional[TrainConfig] = None,
    ks: Sequence[int] = DEFAULT_KS,
    seed: Optional[int] = 0,
    fingerprint: Optional[str] = None,
    graph: Optional[BipartiteGraph] = None,
) -> Tuple[EvalReport, TrainResult, ModelState]:
    """Initialises, trains and test-evaluates one model variant."""
    settings = settings or TrainConfig()
    graph = graph or BipartiteGraph.from_interactions(
        split.train, split.num_users, split.num_items
    )
    state = ModelState.create(
        split.num_users,
        split.num_items,
        settings.dim,
        num_layers=num_layers,
        seed=seed,
        lambda_bpr=settings.lambda_bpr,
        optimizer=AdamWState(lr=settings.lr, weight_decay=settings.weight_decay),
        reg_target=settings.reg_target,
        freeze_items=settings.freeze_items,
    )
    init_mode(state, mode, sources, match_scale=settings.match_init_scale)
    result = train(
        state,
        graph,
        split,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        patience=settings.patience,
        eval_every=settings.eval_every,
        fingerprint=fingerprint,
    )
    embs = propagate(state, graph)
    report = evaluate(
        embs.user_final, embs.item_final, split, ks=ks, fingerprint=fingerprint
    )
    report.metadata.update(
        {
            "mode": state.mode.value,
            "layers": state.num_layers,
            "best_epoch": result.best_epoch,
            "seed": seed,
        }
    )
    return report, result, state


def run_ablation(
    split: SplitDataset,
    sources: Optional[InitSources],
    modes: Sequence[Union[InitMode, str]],
    num_layers: int = DEFAULT_LAYERS,
    settings: Optional[TrainConfig] = None,
    ks: Sequence[int] = DEFAULT_KS,
    seed: Optional[int] = 0,
    fingerprint: Optional[str] = None,
) -> Tuple[pd.DataFrame, Dict[str, EvalReport]]:
    """Trains every mode and tabulates its test metrics.

    Returns:
        One row per mode with ``mode``, ``layers``, ``best_epoch``, the
        metric columns and ``p_<metric>`` (paired t-test against the first
        mode, NaN for the first mode itself), plus the per-mode reports.
    """
    graph = BipartiteGraph.from_interactions(
        split.train, split.num_users, split.num_items
    )
    reports: Dict[str, EvalReport] = {}
    for mode in modes:
        mode = InitMode(mode)
        logger.info("Ablation: training mode %s", mode.value)
        report, _, _ = fit_and_evaluate(
            split, mode, sources, num_layers, settings, ks, seed, fingerprint, graph
        )
        reports[mode.value] = report

    baseline = next(iter(reports.values()), None)
    rows = []
    for name, report in reports.items():
        row = {
            "mode": name,
            "layers": report.metadata["layers"],
            "best_epoch": report.metadata["best_epoch"],
            **report.aggregate,
        }
        for column in metric_columns(ks):
            row[f"p_{column}"] = (
                np.nan
                if report is baseline
                else paired_t_test(baseline, report, column)
            )
        rows.append(row)
    return pd.DataFrame(rows), reports


def run_layer_sweep(
    split: SplitDataset,
    sources: Optional[InitSources],
    layers: Sequence[int],
    mode: Union[InitMode, str] = InitMode.FULL,
    settings: Optional[TrainConfig] = None,
    ks: Sequence[int] = DEFAULT_KS,
    seed: Optional[int] = 0,
    fingerprint: Optional[str] = None,
) -> pd.DataFrame:
    """One row per propagation depth with the test metrics of ``mode``."""
    graph = BipartiteGraph.from_interactions(
        split.train, split.num_users, split.num_items
    )
    rows = []
    for depth in layers:
        logger.info("Layer sweep: training %d layers", depth)
        report, _, _ = fit_and_evaluate(
            split, mode, sources, depth, settings, ks, seed, fingerprint, graph
        )
        rows.append(
            {
                "layers": depth,
                "best_epoch": report.metadata["best_epoch"],
                **report.aggregate,
            }
        )
    return pd.DataFrame(rows)


def write_table(
    table: pd.DataFrame, path: Union[str, Path], fingerprint: Optional[str] = None
) -> Path:
    """Writes an experiment table as TSV with a fingerprint comment."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        if fingerprint:
            handle.write(fingerprint_comment(fingerprint))
        table.to_csv(
            handle,
            sep="\t",
            index=False,
            float_format="%.10g",
            na_rep="NA",
            lineterminator="\n",
        )
    logger.info("Wrote experiment table to %s", path)
    return path
