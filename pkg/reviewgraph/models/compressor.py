#!/usr/bin/env python
"""
compressor.py: Auto-encoders that shrink raw content embeddings.

One auto-encoder per raw table (image, text, review) maps ``input_dim``
vectors to ``code_dim`` codes through a two-layer MLP encoder, and back
through a two-layer MLP decoder. Training minimises

    mean over rows of MSE(e, decoder(encoder(e))) + l2 * ||theta||^2

with AdamW. After training the encoder is frozen and `compress` produces the
codes used downstream; `build_item_init` concatenates image and text codes
into the initial item embeddings.
"""

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from reviewgraph.data import EmbeddingTable
from reviewgraph.exceptions import ShapeError, TrainingDivergedError
from reviewgraph.logger import setup_logger
from reviewgraph.numerics import (
    AdamWState,
    MlpParams,
    adamw_step,
    mlp_backward,
    mlp_forward,
)

logger = setup_logger(__name__)

DEFAULT_CODE_DIM = 64
DEFAULT_L2 = 1e-4


def hidden_width(input_dim: int, output_dim: int) -> int:
    """Geometric mean of the two widths, e.g. 768 -> 64 gives 222."""
    return max(1, int(round(np.sqrt(input_dim * output_dim))))


@dataclass
class AutoEncoder:
    encoder: MlpParams
    decoder: MlpParams
    l2_coeff: float = DEFAULT_L2

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        """Encoder and decoder must chain back to the input width.

        Raises:
            ShapeError: If encoder and decoder widths do not chain.
            ValueError: If the L2 coefficient is negative.
        """
        if self.encoder.output_dim != self.decoder.input_dim:
            raise ShapeError("encoder output width must equal decoder input width")
        if self.decoder.output_dim != self.encoder.input_dim:
            raise ShapeError("decoder output width must equal encoder input width")
        if self.l2_coeff < 0:
            raise ValueError("l2_coeff must be non-negative")

    @property
    def input_dim(self) -> int:
        return self.encoder.input_dim

    @property
    def code_dim(self) -> int:
        return self.encoder.output_dim

    @classmethod
    def create(
        cls,
        input_dim: int,
        code_dim: int = DEFAULT_CODE_DIM,
        l2_coeff: float = DEFAULT_L2,
        seed: Optional[int] = 0,
    ) -> "AutoEncoder":
        rng = np.random.default_rng(seed)
        hidden = hidden_width(input_dim, code_dim)
        return cls(
            encoder=MlpParams.init(input_dim, hidden, code_dim, rng),
            decoder=MlpParams.init(code_dim, hidden, input_dim, rng),
            l2_coeff=l2_coeff,
        )

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {f"encoder.{k}": v for k, v in self.encoder.parameters().items()}
        params.update({f"decoder.{k}": v for k, v in self.decoder.parameters().items()})
        return params

    def l2_penalty(self) -> float:
        weights = self.encoder.squared_norm() + self.decoder.squared_norm()
        return self.l2_coeff * weights


def encode(ae: AutoEncoder, x: np.ndarray) -> np.ndarray:
    codes, _ = mlp_forward(ae.encoder, x)
    return codes


def reconstruct(ae: AutoEncoder, x: np.ndarray) -> np.ndarray:
    return mlp_forward(ae.decoder, encode(ae, x))[0]


def ae_objective(
    ae: AutoEncoder, x: np.ndarray
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and parameter gradients on the rows of ``x``.

    Returns:
        ``(loss, grads)`` where ``loss`` is the batch-mean of per-row MSE plus
        the L2 penalty, and ``grads`` is keyed like `AutoEncoder.parameters`.
    """
    x = np.atleast_2d(x)
    batch, dim = x.shape
    codes, enc_cache = mlp_forward(ae.encoder, x)
    recon, dec_cache = mlp_forward(ae.decoder, codes)
    residual = recon - x
    loss = float(np.sum(residual * residual) / (batch * dim)) + ae.l2_penalty()

    grad_recon = 2.0 * residual / (batch * dim)
    dec_grads, grad_codes = mlp_backward(ae.decoder, dec_cache, grad_recon)
    enc_grads, _ = mlp_backward(ae.encoder, enc_cache, grad_codes)

    grads = {f"encoder.{k}": v for k, v in enc_grads.as_dict().items()}
    grads.update({f"decoder.{k}": v for k, v in dec_grads.as_dict().items()})
    params = ae.parameters()
    for name in grads:
        grads[name] = grads[name] + 2.0 * ae.l2_coeff * params[name]
    return loss, grads


@dataclass
class TrainTrace:
    losses: List[float] = field(default_factory=list)


def train_ae(
    ae: AutoEncoder,
    table: EmbeddingTable,
    epochs: int = 50,
    batch_size: int = 256,
    optimizer: Optional[AdamWState] = None,
    seed: Optional[int] = 0,
) -> TrainTrace:
    """Trains ``ae`` in place on the rows of ``table``.

    Rows flagged missing are skipped. The trace holds the full-dataset
    objective after each epoch.

    Raises:
        ValueError: If the table has no usable rows.
        ShapeError: If the table width differs from the auto-encoder input.
        TrainingDivergedError: If the loss becomes non-finite.
    """
    if table.dim != ae.input_dim:
        raise ShapeError(f"table dim {table.dim} != auto-encoder input {ae.input_dim}")
    data = table.matrix[~table.missing]
    if data.shape[0] == 0:
        raise ValueError("cannot train an auto-encoder on an empty table")

    optimizer = optimizer if optimizer is not None else AdamWState()
    rng = np.random.default_rng(seed)
    params = ae.parameters()
    trace = TrainTrace()
    logger.info(
        "Training %s auto-encoder %d -> %d on %d rows for %d epochs",
        table.kind.value,
        ae.input_dim,
        ae.code_dim,
        data.shape[0],
        epochs,
    )
    for epoch in range(epochs):
        order = rng.permutation(data.shape[0])
        for start in range(0, len(order), batch_size):
            _, grads = ae_objective(ae, data[order[start : start + batch_size]])
            adamw_step(optimizer, params, grads)
        loss, _ = ae_objective(ae, data)
        if not np.isfinite(loss):
            raise TrainingDivergedError(
                f"{table.kind.value} auto-encoder loss became {loss} at epoch {epoch}",
                epoch=epoch,
            )
        trace.losses.append(loss)
        logger.debug("epoch %d: auto-encoder loss %.6g", epoch, loss)
    if trace.losses:
        logger.info(
            "Final %s auto-encoder loss %.6g", table.kind.value, trace.losses[-1]
        )
    return trace


def compress(
    ae: AutoEncoder, table: EmbeddingTable, normalize: bool = False
) -> EmbeddingTable:
    """Encodes every row of a raw table.

    Args:
        ae: Trained auto-encoder.
        table: Raw table of width ``ae.input_dim``.
        normalize: L2-normalise each code.

    Returns:
        Table of width ``ae.code_dim`` aligned row for row with ``table``;
        missing rows stay flagged and get zero codes.

    Raises:
        ShapeError: If the table width differs from the auto-encoder input.
    """
    if table.dim != ae.input_dim:
        raise ShapeError(f"table dim {table.dim} != auto-encoder input {ae.input_dim}")
    codes = encode(ae, table.matrix) if table.rows else np.empty((0, ae.code_dim))
    if normalize:
        norms = np.linalg.norm(codes, axis=1, keepdims=True)
        codes = np.divide(codes, norms, out=np.zeros_like(codes), where=norms > 0)
    codes[table.missing] = 0.0
    return EmbeddingTable(
        kind=table.kind.compressed(), matrix=codes, missing=table.missing.copy()
    )


@dataclass
class ItemInitEmbeddings:
    matrix: np.ndarray

    def __post_init__(self) -> None:
        if self.matrix.ndim != 2 or not np.all(np.isfinite(self.matrix)):
            raise ValueError("item embeddings must be a finite 2-d matrix")

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


def build_item_init(
    img_codes: Union[EmbeddingTable, np.ndarray, None],
    txt_codes: Union[EmbeddingTable, np.ndarray, None],
) -> ItemInitEmbeddings:
    """Concatenates image and text codes per item, image half first.

    Either table may be ``None`` for the single-modality variants, in which
    case the remaining codes are used alone.

    Raises:
        ShapeError: If the tables have different row counts.
        ValueError: If both tables are ``None``.
    """
    parts = [
        t.matrix if isinstance(t, EmbeddingTable) else np.asarray(t, dtype=np.float64)
        for t in (img_codes, txt_codes)
        if t is not None
    ]
    if not parts:
        raise ValueError("at least one of image or text codes is required")
    if len({p.shape[0] for p in parts}) != 1:
        raise ShapeError("image and text code tables must have the same row count")
    return ItemInitEmbeddings(matrix=np.concatenate(parts, axis=1))


def standardize_items(items: ItemInitEmbeddings, std: float) -> ItemInitEmbeddings:
    """Centres every column on the item mean and rescales to overall ``std``.

    A constant matrix is only centred.
    """
    centred = items.matrix - items.matrix.mean(axis=0, keepdims=True)
    spread = centred.std()
    if spread > 0:
        centred = centred * (std / spread)
    return ItemInitEmbeddings(matrix=centred)
