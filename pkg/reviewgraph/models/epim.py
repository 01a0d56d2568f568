#!/usr/bin/env python
"""
epim.py: Graph propagation, inner-product scoring and BPR training.

Layer-0 user and item embeddings are the only trainable parameters. Each
layer passes symmetric-degree-normalised messages across the bipartite
train graph with no transform or non-linearity:

    e_u^(l+1) = sum_{i in N_u} e_i^(l) / sqrt(|N_u| |N_i|)
    e_i^(l+1) = sum_{u in N_i} e_u^(l) / sqrt(|N_u| |N_i|)

and the final embeddings are the mean of layers 0..L. Because the combined
operator is linear and symmetric, the gradient with respect to layer 0 is
the same propagation applied to the gradient with respect to the finals.

`init_mode` fills layer 0 for the full model, its ablations, LightGCN
(``none``) and BPR matrix factorisation (``bprmf``, zero layers).
"""

import copy
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit

from reviewgraph.data import BipartiteGraph, SplitDataset
from reviewgraph.exceptions import ParseError, ShapeError, TrainingDivergedError
from reviewgraph.logger import setup_logger
from reviewgraph.models.compressor import (
    ItemInitEmbeddings,
    build_item_init,
    standardize_items,
)
from reviewgraph.models.raum import (
    CrossRelationMatrix,
    ItemReviewMeans,
    UserInitEmbeddings,
    build_cross_relation,
    init_users,
    item_review_means,
)
from reviewgraph.numerics import AdamWState, adamw_step, softplus
from reviewgraph.preprocessing.sampling import sample_negatives

logger = setup_logger(__name__)

DEFAULT_LAYERS = 7
MAX_LAYERS = 9
DEFAULT_LAMBDA_BPR = 1e-4
INIT_STD = 0.1
CHECKPOINT_VERSION = 1


class InitMode(str, Enum):
    FULL = "full"
    NO_IMAGE = "no_image"
    NO_TITLE = "no_title"
    NO_RAUM = "no_raum"
    NONE = "none"
    BPRMF = "bprmf"

    @classmethod
    def _missing_(cls, value):
        if isinstance(value, str) and value.lower() == "printf":
            return cls.FULL
        return None

    @property
    def uses_items(self) -> bool:
        return self in (self.FULL, self.NO_IMAGE, self.NO_TITLE, self.NO_RAUM)

    @property
    def uses_reviews(self) -> bool:
        return self in (self.FULL, self.NO_IMAGE, self.NO_TITLE)


class RegTarget(str, Enum):
    FINAL = "final"
    LAYER0 = "layer0"


@dataclass
class ModelState:
    user0: np.ndarray
    item0: np.ndarray
    num_layers: int = DEFAULT_LAYERS
    lambda_bpr: float = DEFAULT_LAMBDA_BPR
    optimizer: AdamWState = field(default_factory=AdamWState)
    mode: InitMode = InitMode.NONE
    reg_target: RegTarget = RegTarget.FINAL
    freeze_items: bool = False
    seed: Optional[int] = 0

    def __post_init__(self) -> None:
        self.mode = InitMode(self.mode)
        self.reg_target = RegTarget(self.reg_target)
        self.validate()

    def validate(self) -> None:
        """Validation of the layer-0 embeddings and depth.

        Raises:
            ShapeError: If user and item embeddings differ in width.
            ValueError: If the depth is outside 0..9 or an embedding is
              non-finite.
        """
        if self.user0.ndim != 2 or self.item0.ndim != 2:
            raise ShapeError("layer-0 embeddings must be 2-d")
        if self.user0.shape[1] != self.item0.shape[1]:
            raise ShapeError(
                f"user width {self.user0.shape[1]} != item width {self.item0.shape[1]}"
            )
        if not 0 <= self.num_layers <= MAX_LAYERS:
            raise ValueError(f"num_layers must be in [0, {MAX_LAYERS}]")
        if not (np.all(np.isfinite(self.user0)) and np.all(np.isfinite(self.item0))):
            raise ValueError("layer-0 embeddings contain non-finite values")

    @classmethod
    def create(
        cls,
        num_users: int,
        num_items: int,
        dim: int,
        num_layers: int = DEFAULT_LAYERS,
        seed: Optional[int] = 0,
        **kwargs,
    ) -> "ModelState":
        """Random N(0, INIT_STD^2) layer-0 embeddings."""
        rng = np.random.default_rng(seed)
        return cls(
            user0=rng.normal(0.0, INIT_STD, (num_users, dim)),
            item0=rng.normal(0.0, INIT_STD, (num_items, dim)),
            num_layers=num_layers,
            seed=seed,
            **kwargs,
        )

    @property
    def dim(self) -> int:
        return self.user0.shape[1]

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"user0": self.user0, "item0": self.item0}

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


@dataclass
class PropagatedEmbeddings:
    user_final: np.ndarray
    item_final: np.ndarray
    per_layer: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None


def propagate_matrices(
    user0: np.ndarray,
    item0: np.ndarray,
    graph: BipartiteGraph,
    num_layers: int,
    keep_layers: bool = False,
) -> PropagatedEmbeddings:
    """Propagates explicit layer-0 matrices; see `propagate`."""
    if user0.shape[0] != graph.num_users or item0.shape[0] != graph.num_items:
        raise ShapeError("embedding rows do not match the graph")
    norm, norm_t = graph.normalized, graph.normalized_t
    user_layer, item_layer = user0, item0
    user_sum, item_sum = user0.copy(), item0.copy()
    per_layer = [(user0, item0)] if keep_layers else None
    for _ in range(num_layers):
        user_layer, item_layer = norm @ item_layer, norm_t @ user_layer
        user_sum += user_layer
        item_sum += item_layer
        if keep_layers:
            per_layer.append((user_layer, item_layer))
    scale = 1.0 / (num_layers + 1)
    return PropagatedEmbeddings(
        user_final=user_sum * scale, item_final=item_sum * scale, per_layer=per_layer
    )


def propagate(
    state: ModelState, graph: BipartiteGraph, keep_layers: bool = False
) -> PropagatedEmbeddings:
    """Runs ``state.num_layers`` propagation layers and mean-combines them.

    Isolated nodes receive zero messages, so their final embedding is their
    layer-0 embedding divided by L + 1.
    """
    return propagate_matrices(
        state.user0, state.item0, graph, state.num_layers, keep_layers=keep_layers
    )


def score(embs: PropagatedEmbeddings, user: int, item: int) -> float:
    """Inner-product preference of ``user`` for ``item``.

    Raises:
        IndexError: If either index is out of range.
    """
    if not 0 <= user < embs.user_final.shape[0]:
        raise IndexError(f"user {user} out of range")
    if not 0 <= item < embs.item_final.shape[0]:
        raise IndexError(f"item {item} out of range")
    return float(embs.user_final[user] @ embs.item_final[item])


def _regularised(
    embs: PropagatedEmbeddings, state: Optional[ModelState], reg_target: RegTarget
) -> Tuple[np.ndarray, np.ndarray]:
    if reg_target is RegTarget.LAYER0:
        if state is None:
            raise ValueError("layer-0 regularisation needs the model state")
        return state.user0, state.item0
    return embs.user_final, embs.item_final


def bpr_loss(
    embs: PropagatedEmbeddings,
    triples: np.ndarray,
    lambda_bpr: float = DEFAULT_LAMBDA_BPR,
    state: Optional[ModelState] = None,
    reg_target: Union[RegTarget, str] = RegTarget.FINAL,
) -> float:
    """Pairwise ranking loss summed over (user, positive, negative) triples.

    Each triple contributes softplus(-(y_ui - y_uj)) + lambda (|e_u|^2 + |e_i|^2).
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    u, i, j = triples.T
    eu, ei, ej = embs.user_final[u], embs.item_final[i], embs.item_final[j]
    margin = np.sum(eu * (ei - ej), axis=1)
    reg_users, reg_items = _regularised(embs, state, RegTarget(reg_target))
    penalty = np.sum(reg_users[u] ** 2) + np.sum(reg_items[i] ** 2)
    return float(np.sum(softplus(-margin)) + lambda_bpr * penalty)


def bpr_objective(
    state: ModelState, graph: BipartiteGraph, triples: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """BPR loss and its gradients with respect to ``user0`` and ``item0``."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    u, i, j = triples.T
    embs = propagate(state, graph)
    loss = bpr_loss(embs, triples, state.lambda_bpr, state, state.reg_target)

    eu, ei, ej = embs.user_final[u], embs.item_final[i], embs.item_final[j]
    sig = expit(-np.sum(eu * (ei - ej), axis=1))[:, None]
    grad_users = np.zeros_like(embs.user_final)
    grad_items = np.zeros_like(embs.item_final)
    np.add.at(grad_users, u, -sig * (ei - ej))
    np.add.at(grad_items, i, -sig * eu)
    np.add.at(grad_items, j, sig * eu)
    if state.reg_target is RegTarget.FINAL:
        np.add.at(grad_users, u, 2.0 * state.lambda_bpr * eu)
        np.add.at(grad_items, i, 2.0 * state.lambda_bpr * ei)

    back = propagate_matrices(grad_users, grad_items, graph, state.num_layers)
    grads = {"user0": back.user_final, "item0": back.item_final}
    if state.reg_target is RegTarget.LAYER0:
        np.add.at(grads["user0"], u, 2.0 * state.lambda_bpr * state.user0[u])
        np.add.at(grads["item0"], i, 2.0 * state.lambda_bpr * state.item0[i])
    return loss, grads


@dataclass
class InitSources:
    """Compressed content available to `init_mode`.

    Attributes:
        train: Train interactions (the only ones RAUM may read).
        image_codes: |I| x d' image codes.
        text_codes: |I| x d' text codes.
        review_codes: Compressed review codes indexed by ``review_row``.
    """

    train: pd.DataFrame
    image_codes: Optional[np.ndarray] = None
    text_codes: Optional[np.ndarray] = None
    review_codes: Optional[np.ndarray] = None


@dataclass
class ContentInit:
    """Content-derived layer 0 of one mode, before any training.

    Attributes:
        items: Item embeddings, standardised unless scale matching is off.
        users: Review-aware user embeddings, or None for ``no_raum``.
        means: Per-item review means behind ``cross``.
        cross: The cross-relation matrix D built from ``items``.
    """

    items: ItemInitEmbeddings
    users: Optional[UserInitEmbeddings] = None
    means: Optional[ItemReviewMeans] = None
    cross: Optional[CrossRelationMatrix] = None


def content_init(
    mode: Union[InitMode, str],
    sources: Optional[InitSources],
    num_users: int,
    num_items: int,
    match_scale: bool = True,
) -> ContentInit:
    """Item embeddings from content codes and, for review-aware modes, users.

    With ``match_scale`` the concatenated codes are centred per dimension and
    rescaled to the standard deviation of the random initialiser before D and
    the user attention are computed, so users live in the same space.

    Raises:
        ValueError: If the mode does not use content or sources are missing.
        ShapeError: If the item codes do not cover every item.
    """
    mode = InitMode(mode)
    if not mode.uses_items:
        raise ValueError(f"mode {mode.value} does not use content codes")
    if sources is None:
        raise ValueError(f"mode {mode.value} needs compressed content codes")
    image = None if mode is InitMode.NO_IMAGE else sources.image_codes
    text = None if mode is InitMode.NO_TITLE else sources.text_codes
    if image is None and text is None:
        raise ValueError(f"mode {mode.value} needs image or text codes")
    items = build_item_init(image, text)
    if items.matrix.shape[0] != num_items:
        raise ShapeError(f"{items.matrix.shape[0]} item codes for {num_items} items")
    if match_scale:
        items = standardize_items(items, INIT_STD)
    if not mode.uses_reviews:
        return ContentInit(items=items)
    if sources.review_codes is None:
        raise ValueError(f"mode {mode.value} needs review codes")
    means = item_review_means(sources.train, sources.review_codes, num_items)
    cross = build_cross_relation(means, items)
    users = init_users(cross, items, sources.train, sources.review_codes, num_users)
    return ContentInit(items=items, users=users, means=means, cross=cross)


def init_mode(
    state: ModelState,
    mode: Union[InitMode, str],
    sources: Optional[InitSources] = None,
    match_scale: bool = True,
) -> ModelState:
    """Initialises layer-0 embeddings for one model variant.

    - ``full``: items from concatenated image/text codes, users by
      review-aware dimension attention.
    - ``no_image`` / ``no_title``: as ``full`` with text-only or image-only
      item codes (width d').
    - ``no_raum``: items as ``full``, users random.
    - ``none``: both random (LightGCN).
    - ``bprmf``: both random and zero propagation layers.

    Random embeddings keep the width of the content-based ones (2 d') when
    image and text codes are given. See `content_init` for ``match_scale``.

    Raises:
        ValueError: If the mode is unknown or needs sources that are missing.
    """
    mode = InitMode(mode)
    rng = np.random.default_rng(state.seed)
    num_users, num_items = state.user0.shape[0], state.item0.shape[0]

    if mode.uses_items:
        content = content_init(mode, sources, num_users, num_items, match_scale)
        item0 = content.items.matrix
        if content.users is None:
            user0 = rng.normal(0.0, INIT_STD, (num_users, item0.shape[1]))
        else:
            user0 = content.users.matrix
    else:
        dim = state.dim
        if sources is not None and sources.image_codes is not None:
            dim = sources.image_codes.shape[1] + (
                sources.text_codes.shape[1] if sources.text_codes is not None else 0
            )
        user0 = rng.normal(0.0, INIT_STD, (num_users, dim))
        item0 = rng.normal(0.0, INIT_STD, (num_items, dim))

    state.user0 = np.array(user0, dtype=np.float64)
    state.item0 = np.array(item0, dtype=np.float64)
    state.mode = mode
    if mode is InitMode.BPRMF:
        state.num_layers = 0
    state.optimizer = AdamWState(**state.optimizer.hyperparameters())
    state.validate()
    logger.info(
        "Initialised %s model: %d users, %d items, dim %d, %d layers",
        mode.value,
        num_users,
        num_items,
        state.dim,
        state.num_layers,
    )
    return state


@dataclass
class TrainResult:
    trace: pd.DataFrame
    best_epoch: int
    best_score: float
    best_state: ModelState


def train(
    state: ModelState,
    graph: BipartiteGraph,
    split: SplitDataset,
    epochs: int = 200,
    batch_size: int = 4096,
    patience: int = 20,
    eval_every: int = 1,
    validation_k: int = 10,
    checkpoint_path: Optional[Union[str, Path]] = None,
    fingerprint: Optional[str] = None,
    on_epoch: Optional[Callable[[int, float], None]] = None,
) -> TrainResult:
    """Trains ``state`` in place with BPR and early stopping.

    Every epoch samples one negative per train interaction, shuffles the
    triples and takes one AdamW step per batch (full propagation each
    step). Validation NDCG@``validation_k`` is checked every ``eval_every``
    epochs; training stops after ``patience`` epochs without improvement
    and ``state`` is restored to the best epoch.

    Raises:
        TrainingDivergedError: If the loss becomes non-finite; the error
          carries the last good state, which is also written to
          ``checkpoint_path`` when given.
    """
    from reviewgraph.evaluation.metrics import evaluate

    rng = np.random.default_rng(state.seed)
    users = split.train["user"].to_numpy()
    positives = split.train["item"].to_numpy()
    has_val = not split.val.empty
    best = state.copy()
    best_epoch, best_score, stale = -1, -np.inf, 0
    rows = []

    logger.info(
        "Training %s model (%d layers) on %d interactions for up to %d epochs",
        state.mode.value,
        state.num_layers,
        len(users),
        epochs,
    )
    for epoch in range(epochs):
        negatives = sample_negatives(users, graph, rng)
        triples = np.column_stack([users, positives, negatives])[
            rng.permutation(len(users))
        ]
        epoch_loss = 0.0
        for start in range(0, len(triples), batch_size):
            batch = triples[start : start + batch_size]
            loss, grads = bpr_objective(state, graph, batch)
            if not np.isfinite(loss):
                if checkpoint_path is not None:
                    save_checkpoint(best, checkpoint_path, fingerprint=fingerprint)
                raise TrainingDivergedError(
                    f"BPR loss became {loss} at epoch {epoch}",
                    epoch=epoch,
                    checkpoint=best,
                )
            if state.freeze_items:
                grads.pop("item0")
            adamw_step(state.optimizer, state.parameters(), grads)
            epoch_loss += loss
        mean_loss = epoch_loss / max(len(triples), 1)

        val_score = np.nan
        if has_val and (epoch + 1) % eval_every == 0:
            embs = propagate(state, graph)
            report = evaluate(
                embs.user_final,
                embs.item_final,
                split,
                ks=(validation_k,),
                phase="val",
            )
            val_score = report.aggregate[f"N@{validation_k}"]
            if val_score > best_score:
                best, best_epoch, best_score, stale = state.copy(), epoch, val_score, 0
            else:
                stale += eval_every
        elif not has_val:
            best, best_epoch = state.copy(), epoch

        rows.append(
            {"epoch": epoch, "loss": mean_loss, f"val_N@{validation_k}": val_score}
        )
        logger.debug("epoch %d: loss %.6g, val NDCG %.4f", epoch, mean_loss, val_score)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        if has_val and stale >= patience:
            logger.info("Early stopping at epoch %d (best epoch %d)", epoch, best_epoch)
            break

    state.user0[...] = best.user0
    state.item0[...] = best.item0
    state.optimizer = best.optimizer
    if checkpoint_path is not None:
        save_checkpoint(state, checkpoint_path, fingerprint=fingerprint)
    logger.info(
        "Best validation NDCG@%d %.4f at epoch %d", validation_k, best_score, best_epoch
    )
    return TrainResult(
        trace=pd.DataFrame(rows),
        best_epoch=best_epoch,
        best_score=float(best_score),
        best_state=best,
    )


def save_checkpoint(
    state: ModelState, path: Union[str, Path], fingerprint: Optional[str] = None
) -> Path:
    """Writes layer-0 embeddings, optimizer moments and a JSON header (``.npz``)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    opt = state.optimizer
    header = {
        "version": CHECKPOINT_VERSION,
        "num_users": state.user0.shape[0],
        "num_items": state.item0.shape[0],
        "dim": state.dim,
        "num_layers": state.num_layers,
        "mode": state.mode.value,
        "seed": state.seed,
        "lambda_bpr": state.lambda_bpr,
        "reg_target": state.reg_target.value,
        "freeze_items": state.freeze_items,
        "fingerprint": fingerprint,
        "optimizer": {**opt.hyperparameters(), "step": opt.step},
    }
    arrays = {"user0": state.user0, "item0": state.item0}
    for name in opt.m:
        arrays[f"m.{name}"] = opt.m[name]
        arrays[f"v.{name}"] = opt.v[name]
    with open(path, "wb") as handle:
        np.savez(handle, header=np.array(json.dumps(header, sort_keys=True)), **arrays)
    logger.debug("Saved checkpoint to %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[ModelState, Optional[str]]:
    """Reads a checkpoint written by `save_checkpoint`.

    Returns:
        The model state and the fingerprint stored with it.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ParseError: If the header is missing or of an unknown version.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with np.load(path, allow_pickle=False) as archive:
        if "header" not in archive:
            raise ParseError(f"{path}: checkpoint header missing")
        header = json.loads(str(archive["header"]))
        if header.get("version") != CHECKPOINT_VERSION:
            raise ParseError(f"{path}: unsupported checkpoint version")
        arrays = {key: archive[key] for key in archive.files if key != "header"}

    opt_header = dict(header["optimizer"])
    step = opt_header.pop("step")
    optimizer = AdamWState(**opt_header, step=step)
    for key, value in arrays.items():
        kind, _, name = key.partition(".")
        if kind == "m":
            optimizer.m[name] = value
        elif kind == "v":
            optimizer.v[name] = value
    state = ModelState(
        user0=arrays["user0"],
        item0=arrays["item0"],
        num_layers=header["num_layers"],
        lambda_bpr=header["lambda_bpr"],
        optimizer=optimizer,
        mode=header["mode"],
        reg_target=header["reg_target"],
        freeze_items=header["freeze_items"],
        seed=header["seed"],
    )
    return state, header.get("fingerprint")
