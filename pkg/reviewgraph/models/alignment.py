#!/usr/bin/env python
"""
alignment.py: Image-text contrastive head over precomputed [CLS] embeddings.

Projected similarities ``s[a, b] = (W_img img_a) . (W_txt txt_b)`` are divided
by a trainable temperature and softmaxed along rows (image-to-text) and
columns (text-to-image). Diagonal pairs are the positives; the loss is the
mean of the two cross-entropies, averaged over the batch.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp

from reviewgraph.data import EmbeddingKind, EmbeddingTable
from reviewgraph.exceptions import ShapeError, TrainingDivergedError
from reviewgraph.logger import setup_logger
from reviewgraph.numerics import AdamWState, adamw_step, softmax_rows

logger = setup_logger(__name__)

DEFAULT_TEMPERATURE = 0.07
DEFAULT_PROJECTION_DIM = 256


@dataclass
class ItcHead:
    w_img: np.ndarray
    w_txt: np.ndarray
    log_temperature: np.ndarray = field(
        default_factory=lambda: np.array(np.log(DEFAULT_TEMPERATURE))
    )

    def __post_init__(self) -> None:
        self.log_temperature = np.asarray(self.log_temperature, dtype=np.float64)
        if self.w_img.shape[0] != self.w_txt.shape[0]:
            raise ShapeError("image and text projections must share an output width")
        if not np.isfinite(self.log_temperature):
            raise ValueError("temperature must be positive and finite")

    @property
    def temperature(self) -> float:
        return float(np.exp(self.log_temperature))

    @classmethod
    def create(
        cls,
        img_dim: int,
        txt_dim: int,
        projection_dim: int = DEFAULT_PROJECTION_DIM,
        temperature: float = DEFAULT_TEMPERATURE,
        seed: Optional[int] = 0,
    ) -> "ItcHead":
        rng = np.random.default_rng(seed)
        return cls(
            w_img=rng.uniform(-1, 1, (projection_dim, img_dim)) / np.sqrt(img_dim),
            w_txt=rng.uniform(-1, 1, (projection_dim, txt_dim)) / np.sqrt(txt_dim),
            log_temperature=np.array(np.log(temperature)),
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        return {
            "w_img": self.w_img,
            "w_txt": self.w_txt,
            "log_temperature": self.log_temperature,
        }


def _check_batch(head: ItcHead, img: np.ndarray, txt: np.ndarray) -> None:
    if img.shape[0] != txt.shape[0]:
        raise ShapeError("image and text batches must have the same size")
    if img.shape[1] != head.w_img.shape[1] or txt.shape[1] != head.w_txt.shape[1]:
        raise ShapeError("batch widths do not match the projection inputs")


def similarity(
    head: ItcHead, img_batch: np.ndarray, txt_batch: np.ndarray
) -> np.ndarray:
    """B x B matrix of projected dot products, images along rows."""
    img_batch = np.atleast_2d(img_batch)
    txt_batch = np.atleast_2d(txt_batch)
    _check_batch(head, img_batch, txt_batch)
    return (img_batch @ head.w_img.T) @ (txt_batch @ head.w_txt.T).T


def itc_objective(
    head: ItcHead, img_batch: np.ndarray, txt_batch: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Contrastive loss and its gradients with respect to the head parameters.

    Raises:
        ShapeError: If the batches do not match each other or the head.
        ValueError: If the similarities are not finite.
    """
    img_batch = np.atleast_2d(img_batch)
    txt_batch = np.atleast_2d(txt_batch)
    _check_batch(head, img_batch, txt_batch)
    z_img = img_batch @ head.w_img.T
    z_txt = txt_batch @ head.w_txt.T
    sims = z_img @ z_txt.T
    if not np.all(np.isfinite(sims)):
        raise ValueError("non-finite image-text similarity")

    batch = sims.shape[0]
    logits = sims / head.temperature
    p_i2t = softmax_rows(logits, axis=1)
    p_t2i = softmax_rows(logits, axis=0)
    diagonal = np.arange(batch)
    matched = logits[diagonal, diagonal]
    loss_i2t = -np.mean(matched - logsumexp(logits, axis=1))
    loss_t2i = -np.mean(matched - logsumexp(logits, axis=0))
    loss = float(0.5 * loss_i2t + 0.5 * loss_t2i)

    eye = np.eye(batch)
    grad_logits = 0.5 * (p_i2t - eye) / batch + 0.5 * (p_t2i - eye) / batch
    grad_sims = grad_logits / head.temperature
    grads = {
        "w_img": (grad_sims @ z_txt).T @ img_batch,
        "w_txt": (grad_sims.T @ z_img).T @ txt_batch,
        "log_temperature": np.array(-np.sum(grad_logits * logits)),
    }
    return loss, grads


def itc_loss(head: ItcHead, img_batch: np.ndarray, txt_batch: np.ndarray) -> float:
    return itc_objective(head, img_batch, txt_batch)[0]


def retrieval_accuracy(head: ItcHead, img: np.ndarray, txt: np.ndarray) -> float:
    """Share of images whose most similar text is their own pair."""
    sims = similarity(head, img, txt)
    return float(np.mean(np.argmax(sims, axis=1) == np.arange(sims.shape[0])))


@dataclass
class ItcTrace:
    train_losses: List[float] = field(default_factory=list)
    holdout_losses: List[float] = field(default_factory=list)
    initial_holdout_loss: Optional[float] = None
    holdout_rows: np.ndarray = field(
        default_factory=lambda: np.empty(0, dtype=np.int64)
    )


def train_itc(
    head: ItcHead,
    img_table: EmbeddingTable,
    txt_table: EmbeddingTable,
    epochs: int = 50,
    batch_size: int = 32,
    optimizer: Optional[AdamWState] = None,
    holdout_fraction: float = 0.1,
    seed: Optional[int] = 0,
) -> ItcTrace:
    """Trains the head in place on row-aligned image/text tables.

    A ``holdout_fraction`` share of the usable rows is kept out of training;
    its loss is recorded before training and after every epoch. Rows whose
    image is missing are ignored.

    Raises:
        ShapeError: If the tables are not row-aligned.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    if img_table.rows != txt_table.rows:
        raise ShapeError("image and text tables must be row-aligned")
    usable = np.flatnonzero(~(img_table.missing | txt_table.missing))
    rng = np.random.default_rng(seed)
    shuffled = rng.permutation(usable)
    n_holdout = int(round(len(shuffled) * holdout_fraction))
    holdout, train_rows = np.sort(shuffled[:n_holdout]), shuffled[n_holdout:]

    optimizer = optimizer if optimizer is not None else AdamWState()
    params = head.parameters()
    trace = ItcTrace(holdout_rows=holdout)
    img, txt = img_table.matrix, txt_table.matrix
    if n_holdout:
        trace.initial_holdout_loss = itc_loss(head, img[holdout], txt[holdout])

    for epoch in range(epochs):
        order = rng.permutation(train_rows)
        epoch_losses = []
        for start in range(0, len(order), batch_size):
            rows = order[start : start + batch_size]
            loss, grads = itc_objective(head, img[rows], txt[rows])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"contrastive loss became {loss} at epoch {epoch}", epoch=epoch
                )
            adamw_step(optimizer, params, grads)
            epoch_losses.append(loss)
        trace.train_losses.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
        if n_holdout:
            trace.holdout_losses.append(itc_loss(head, img[holdout], txt[holdout]))
        logger.debug("epoch %d: contrastive loss %.6g", epoch, trace.train_losses[-1])
    logger.info(
        "Trained contrastive head for %d epochs, temperature %.4g",
        epochs,
        head.temperature,
    )
    return trace


def project(head: ItcHead, table: EmbeddingTable) -> EmbeddingTable:
    """Projects a raw image or text table through the matching head layer."""
    if table.kind is EmbeddingKind.RAW_IMAGE:
        weights, kind = head.w_img, EmbeddingKind.PROJECTED_IMAGE
    elif table.kind is EmbeddingKind.RAW_TEXT:
        weights, kind = head.w_txt, EmbeddingKind.PROJECTED_TEXT
    else:
        raise ValueError(f"cannot project a {table.kind.value} table")
    if table.dim != weights.shape[1]:
        raise ShapeError(
            f"table dim {table.dim} != projection input {weights.shape[1]}"
        )
    projected = table.matrix @ weights.T
    projected[table.missing] = 0.0
    return EmbeddingTable(kind=kind, matrix=projected, missing=table.missing.copy())
