#!/usr/bin/env python
"""
pipeline.py: The stages behind each command-line subcommand.

Stages communicate only through files under the output directory:

==============  ===========================================================
stage           writes
==============  ===========================================================
synth           ``data/`` (dataset, ``ground_truth.tsv``, ``world.json``)
align           ``aligned/`` (projected image/text tables, head weights)
compress        ``compressed/`` (image, text and review codes)
init-users      ``init/`` (item and user layer-0 tables, cross-relation)
train           ``models/<mode>_L<layers>.npz`` and its training trace
eval            ``reports/<mode>_L<layers>.tsv`` and ``.json``
ablate          ``reports/ablation.tsv``
sweep-layers    ``reports/layer_sweep.tsv``
==============  ===========================================================

A stage whose input is absent raises `MissingArtifactError` naming the stage
to run first. Every artifact carries the configuration fingerprint.
"""

import dataclasses
import json
from pathlib import Path
from typing import Dict, Iterable, Optional, Tuple

import numpy as np
import pandas as pd

from reviewgraph.config import RunConfig
from reviewgraph.data import (
    BipartiteGraph,
    EmbeddingKind,
    EmbeddingTable,
    InteractionDataset,
    SplitDataset,
)
from reviewgraph.data.synthetic import generate, review_probe_accuracy, write_world
from reviewgraph.evaluation.experiments import (
    run_ablation,
    run_layer_sweep,
    write_table,
)
from reviewgraph.evaluation.metrics import (
    EvalReport,
    evaluate,
    read_report,
    write_report,
)
from reviewgraph.evaluation.significance import paired_t_test
from reviewgraph.exceptions import MissingArtifactError
from reviewgraph.loader import (
    INTERACTIONS_FILENAME,
    TABLE_FILENAMES,
    load_dataset,
    read_embedding_table,
    write_embedding_table,
)
from reviewgraph.logger import setup_logger
from reviewgraph.models.alignment import (
    ItcHead,
    project,
    retrieval_accuracy,
    train_itc,
)
from reviewgraph.models.compressor import AutoEncoder, compress, train_ae
from reviewgraph.models.epim import (
    InitMode,
    InitSources,
    ModelState,
    content_init,
    init_mode,
    load_checkpoint,
    propagate,
    train,
)
from reviewgraph.models.raum import export_cross_relation
from reviewgraph.numerics import AdamWState
from reviewgraph.preprocessing.split import split_per_user
from reviewgraph.provenance import check_fingerprint, fingerprint_comment

logger = setup_logger(__name__)

KINDS = ("image", "text", "review")


def _require(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(path, stage)
    return path


def artifact_dir(config: RunConfig, name: str) -> Path:
    return config.paths.output / name


def _raw_path(config: RunConfig, kind: str) -> Path:
    return config.paths.data / TABLE_FILENAMES[kind]


def train_graph(split: SplitDataset) -> BipartiteGraph:
    return BipartiteGraph.from_interactions(
        split.train, split.num_users, split.num_items
    )


def model_name(config: RunConfig) -> str:
    layers = 0 if config.train.mode == InitMode.BPRMF.value else config.train.layers
    return f"{config.train.mode}_L{layers}"


def load_data(config: RunConfig) -> InteractionDataset:
    directory = config.paths.data
    _require(directory / INTERACTIONS_FILENAME, "synth")
    return load_dataset(directory)


def load_split(
    config: RunConfig, dataset: Optional[InteractionDataset] = None
) -> SplitDataset:
    """The deterministic per-user split of the configured dataset."""
    dataset = dataset or load_data(config)
    return split_per_user(
        dataset.interactions,
        dataset.catalog.num_users,
        dataset.catalog.num_items,
        ratios=config.train.ratios,
        seed=config.seed,
    )


def load_codes(
    config: RunConfig, required: Iterable[str] = ()
) -> Dict[str, EmbeddingTable]:
    """Compressed tables present on disk; ``required`` ones must exist."""
    directory = artifact_dir(config, "compressed")
    codes = {}
    for kind in KINDS:
        path = directory / TABLE_FILENAMES[kind]
        if kind in required:
            _require(path, "compress")
        if path.exists():
            codes[kind] = read_embedding_table(path)
    return codes


def init_sources(
    config: RunConfig, split: SplitDataset, mode: InitMode
) -> Optional[InitSources]:
    """Content sources for ``mode``; random modes take whatever codes exist."""
    required = []
    if mode.uses_items:
        required = [
            kind
            for kind, skip in (
                ("image", InitMode.NO_IMAGE),
                ("text", InitMode.NO_TITLE),
            )
            if mode is not skip
        ]
        if mode.uses_reviews:
            required.append("review")
    codes = load_codes(config, required)
    if not codes:
        return None
    return InitSources(
        train=split.train,
        image_codes=codes["image"].matrix if "image" in codes else None,
        text_codes=codes["text"].matrix if "text" in codes else None,
        review_codes=codes["review"].matrix if "review" in codes else None,
    )


def run_synth(config: RunConfig) -> Path:
    """Generates a planted world into the data directory."""
    generated = generate(dataclasses.replace(config.synth, seed=config.seed))
    directory = write_world(
        generated, config.paths.data, fingerprint=config.fingerprint
    )
    accuracy, chance = review_probe_accuracy(generated, seed=config.seed)
    logger.info(
        "Synthetic world: %d users, %d items, %d interactions (density %.4f); "
        "review probe accuracy %.3f vs chance %.3f",
        generated.catalog.num_users,
        generated.catalog.num_items,
        len(generated.interactions),
        generated.density,
        accuracy,
        chance,
    )
    return directory


def run_align(config: RunConfig) -> Path:
    """Trains the contrastive head and projects the raw image/text tables."""
    dataset = load_data(config)
    for kind in ("image", "text"):
        if kind not in dataset.tables:
            raise MissingArtifactError(_raw_path(config, kind), "synth")
    image, text = dataset.tables["image"], dataset.tables["text"]
    settings = config.align
    head = ItcHead.create(
        image.dim,
        text.dim,
        projection_dim=settings.projection_dim,
        temperature=settings.temperature,
        seed=config.seed,
    )
    trace = train_itc(
        head,
        image,
        text,
        epochs=settings.epochs,
        batch_size=settings.batch_size,
        optimizer=AdamWState(lr=settings.lr, weight_decay=settings.weight_decay),
        seed=config.seed,
    )
    holdout = trace.holdout_rows
    if holdout.size:
        logger.info(
            "Held-out top-1 retrieval accuracy %.3f",
            retrieval_accuracy(head, image.matrix[holdout], text.matrix[holdout]),
        )

    directory = artifact_dir(config, "aligned")
    for table in (project(head, image), project(head, text)):
        table.fingerprint = config.fingerprint
        write_embedding_table(table, directory / TABLE_FILENAMES[table.kind.modality])
    np.savez(
        directory / "head.npz",
        w_img=head.w_img,
        w_txt=head.w_txt,
        log_temperature=head.log_temperature,
        fingerprint=np.array(config.fingerprint),
    )
    _write_trace(
        pd.DataFrame(
            {
                "epoch": np.arange(len(trace.train_losses)),
                "train_loss": trace.train_losses,
                "holdout_loss": trace.holdout_losses or np.nan,
            }
        ),
        directory / "trace.tsv",
        config.fingerprint,
    )
    return directory


def _compress_input(
    config: RunConfig, dataset: InteractionDataset, kind: str
) -> EmbeddingTable:
    if kind != "review" and config.align.first:
        aligned = artifact_dir(config, "aligned") / TABLE_FILENAMES[kind]
        table = read_embedding_table(_require(aligned, "align"))
        # projected tables are compressed like raw ones
        return EmbeddingTable(
            kind=EmbeddingKind(f"raw_{kind}"),
            matrix=table.matrix,
            missing=table.missing,
        )
    if kind not in dataset.tables:
        raise MissingArtifactError(_raw_path(config, kind), "synth")
    return dataset.tables[kind]


def run_compress(config: RunConfig, kinds: Iterable[str] = KINDS) -> Path:
    """Trains one auto-encoder per kind and writes the codes."""
    dataset = load_data(config)
    settings = config.compress
    directory = artifact_dir(config, "compressed")
    losses = []
    for kind in kinds:
        table = _compress_input(config, dataset, kind)
        ae = AutoEncoder.create(
            table.dim,
            settings.code_dim,
            l2_coeff=getattr(settings, f"l2_{kind}"),
            seed=config.seed,
        )
        trace = train_ae(
            ae,
            table,
            epochs=settings.epochs,
            batch_size=settings.batch_size,
            optimizer=AdamWState(lr=settings.lr, weight_decay=settings.weight_decay),
            seed=config.seed,
        )
        codes = compress(ae, table, normalize=settings.normalize_codes)
        codes.fingerprint = config.fingerprint
        write_embedding_table(codes, directory / TABLE_FILENAMES[kind])
        losses.append(
            pd.DataFrame(
                {
                    "kind": kind,
                    "epoch": np.arange(len(trace.losses)),
                    "loss": trace.losses,
                }
            )
        )
    if losses:
        _write_trace(pd.concat(losses), directory / "trace.tsv", config.fingerprint)
    return directory


def run_init_users(config: RunConfig) -> Path:
    """Writes the layer-0 item and user tables and the cross-relation export.

    Uses the configured mode when it initialises users from reviews, the
    ``full`` mode otherwise.
    """
    mode = InitMode(config.train.mode)
    if not mode.uses_reviews:
        mode = InitMode.FULL
    split = load_split(config)
    content = content_init(
        mode,
        init_sources(config, split, mode),
        split.num_users,
        split.num_items,
        match_scale=config.train.match_init_scale,
    )
    users = content.users

    directory = artifact_dir(config, "init")
    fingerprint = config.fingerprint
    for kind, matrix in (
        (EmbeddingKind.ITEM_INIT, content.items.matrix),
        (EmbeddingKind.USER_INIT, users.matrix),
    ):
        write_embedding_table(
            EmbeddingTable(kind=kind, matrix=matrix, fingerprint=fingerprint),
            directory / f"{kind.value}.emb",
        )
    export_cross_relation(
        content.cross,
        directory / "cross_relation.tsv",
        n_clusters=config.eval.cluster_k,
        seed=config.seed,
        fingerprint=fingerprint,
    )
    summary = {
        "mode": mode.value,
        "fallback_users": int(users.fallback.sum()),
        "empty_users": int(users.empty.sum()),
        "unreviewed_items": int(content.means.unreviewed.sum()),
        "fingerprint": fingerprint,
    }
    (directory / "summary.json").write_text(
        json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return directory


def _new_state(config: RunConfig, split: SplitDataset) -> ModelState:
    settings = config.train
    return ModelState.create(
        split.num_users,
        split.num_items,
        settings.dim,
        num_layers=settings.layers,
        seed=config.seed,
        lambda_bpr=settings.lambda_bpr,
        optimizer=AdamWState(lr=settings.lr, weight_decay=settings.weight_decay),
        reg_target=settings.reg_target,
        freeze_items=settings.freeze_items,
    )


def run_train(config: RunConfig) -> Path:
    """Initialises the configured mode, trains it and writes the checkpoint."""
    split = load_split(config)
    mode = InitMode(config.train.mode)
    state = _new_state(config, split)
    init_mode(
        state,
        mode,
        init_sources(config, split, mode),
        match_scale=config.train.match_init_scale,
    )
    graph = train_graph(split)
    directory = artifact_dir(config, "models")
    checkpoint = directory / f"{model_name(config)}.npz"
    result = train(
        state,
        graph,
        split,
        epochs=config.train.epochs,
        batch_size=config.train.batch_size,
        patience=config.train.patience,
        eval_every=config.train.eval_every,
        checkpoint_path=checkpoint,
        fingerprint=config.fingerprint,
    )
    _write_trace(
        result.trace, directory / f"{model_name(config)}_trace.tsv", config.fingerprint
    )
    return checkpoint


def run_eval(
    config: RunConfig, force: bool = False, compare: Optional[Path] = None
) -> Tuple[EvalReport, Path]:
    """Evaluates the trained checkpoint of the configured mode on test.

    Args:
        config: Run configuration.
        force: Evaluate even when the checkpoint fingerprint differs.
        compare: Per-user report of another model; paired t-test p-values
          against it are added to the JSON summary.

    Raises:
        MissingArtifactError: If the checkpoint does not exist.
        FingerprintMismatchError: If the checkpoint was trained under another
          configuration and ``force`` is not set.
    """
    checkpoint = artifact_dir(config, "models") / f"{model_name(config)}.npz"
    path = _require(checkpoint, "train")
    state, found = load_checkpoint(path)
    check_fingerprint(config.fingerprint, found, path, force=force)
    split = load_split(config)
    graph = train_graph(split)
    embs = propagate(state, graph)
    report = evaluate(
        embs.user_final,
        embs.item_final,
        split,
        ks=config.eval.ks,
        fingerprint=config.fingerprint,
    )
    report.metadata.update({"mode": state.mode.value, "layers": state.num_layers})
    if compare is not None:
        other = read_report(_require(Path(compare), "eval"), ks=config.eval.ks)
        report.metadata["compare"] = {
            column: paired_t_test(other, report, column)
            for column in report.aggregate
        }
    for column, value in report.aggregate.items():
        logger.info("%s = %.4f", column, value)
    path = write_report(report, artifact_dir(config, "reports"), model_name(config))
    return report, path


def run_ablate(config: RunConfig) -> Path:
    split = load_split(config)
    needs_content = any(InitMode(mode).uses_items for mode in config.eval.modes)
    widest = InitMode.FULL if needs_content else InitMode.NONE
    sources = init_sources(config, split, widest)
    table, _ = run_ablation(
        split,
        sources,
        config.eval.modes,
        num_layers=config.train.layers,
        settings=config.train,
        ks=config.eval.ks,
        seed=config.seed,
        fingerprint=config.fingerprint,
    )
    return write_table(
        table, artifact_dir(config, "reports") / "ablation.tsv", config.fingerprint
    )


def run_sweep_layers(config: RunConfig) -> Path:
    split = load_split(config)
    mode = InitMode(config.train.mode)
    table = run_layer_sweep(
        split,
        init_sources(config, split, mode),
        config.eval.sweep_layers,
        mode=mode,
        settings=config.train,
        ks=config.eval.ks,
        seed=config.seed,
        fingerprint=config.fingerprint,
    )
    return write_table(
        table, artifact_dir(config, "reports") / "layer_sweep.tsv", config.fingerprint
    )


def _write_trace(trace: pd.DataFrame, path: Path, fingerprint: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(fingerprint_comment(fingerprint))
        trace.to_csv(
            handle,
            sep="\t",
            index=False,
            float_format="%.10g",
            na_rep="NA",
            lineterminator="\n",
        )
