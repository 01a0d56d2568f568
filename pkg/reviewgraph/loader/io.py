#!/usr/bin/env python
"""
io.py: Loader utilities for reading the interaction corpus and embedding tables.

File formats:

- Interactions: UTF-8 TSV without header, one row
  ``user_id<TAB>item_id<TAB>review_row|-`` per interaction, ``-`` meaning no
  review embedding.
- Catalog (optional): ``users.tsv`` / ``items.tsv`` next to the interactions,
  one external id per line in dense-index order. When present they pin the
  dense indexing, so row i of an item embedding table is item i.
- Embedding tables: an ASCII header line
  ``dim=<d> rows=<n> kind=<kind> [fingerprint=<hex>] [missing=<i,j,...>]``
  followed by little-endian float32 rows. Files ending in ``.tsv`` hold the
  same header followed by tab-separated text rows instead.

This module defines a `Loader` class tied to a dataset directory, and the
top-level function `load_dataset` that reads everything into an
`InteractionDataset`.
"""

import csv
from pathlib import Path
from typing import Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from reviewgraph.data import (
    INTERACTION_COLUMNS,
    NO_REVIEW,
    Catalog,
    EmbeddingKind,
    EmbeddingTable,
    InteractionDataset,
    check_review_rows,
    empty_interactions,
)
from reviewgraph.exceptions import ParseError
from reviewgraph.logger import setup_logger

logger = setup_logger(__name__)

PathLike = Union[str, Path]

INTERACTIONS_FILENAME = "interactions.tsv"
USERS_FILENAME = "users.tsv"
ITEMS_FILENAME = "items.tsv"
TABLE_FILENAMES = {"image": "image.emb", "text": "text.emb", "review": "review.emb"}


def _first_wide_line(path: Path, encoding: str) -> Optional[int]:
    """1-based number of the first line with more than three fields."""
    with open(path, encoding=encoding, newline="") as handle:
        for number, line in enumerate(handle, start=1):
            if line.rstrip("\r\n").count("\t") > 2:
                return number
    return None


def load_interactions(
    path: PathLike,
    catalog: Optional[Catalog] = None,
    num_review_rows: Optional[int] = None,
    encoding: str = "utf-8",
) -> Tuple[Catalog, pd.DataFrame]:
    """Reads an interactions TSV file and reindexes it densely.

    Duplicate (user, item) rows are collapsed to their first occurrence; the
    number dropped is logged and stored in ``interactions.attrs["n_duplicates"]``.

    Args:
        path: Interactions file.
        catalog: Fixed id mapping. When ``None``, dense indices follow the
          order of first appearance.
        num_review_rows: Size of the review table, used to reject dangling
          review references.
        encoding: Text encoding of the file.

    Returns:
        The catalog and the interactions DataFrame.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ParseError: If a row is malformed or references an unknown id.
        DanglingReviewError: If a review row lies outside the review table.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    try:
        raw = pd.read_csv(
            path,
            sep="\t",
            header=None,
            names=["user_id", "item_id", "review"],
            dtype=str,
            na_filter=False,
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
            encoding=encoding,
        )
    except pd.errors.EmptyDataError:
        raw = pd.DataFrame(columns=["user_id", "item_id", "review"])
    except pd.errors.ParserError as error:
        raise ParseError(
            "expected 3 tab-separated fields", line=_first_wide_line(path, encoding)
        ) from error

    lines = np.arange(1, len(raw) + 1)
    incomplete = raw.isna().any(axis=1) | (raw[["user_id", "item_id"]] == "").any(
        axis=1
    )
    if incomplete.any():
        first = int(lines[incomplete.to_numpy()][0])
        raise ParseError("expected 3 tab-separated fields", line=first)

    review = raw["review"].str.strip()
    review_rows = pd.to_numeric(
        review.where(review != "-", str(NO_REVIEW)), errors="coerce"
    )
    invalid = review_rows.isna() | ((review_rows < 0) & (review != "-"))
    invalid |= review_rows.notna() & (review_rows != np.floor(review_rows))
    if invalid.any():
        first = int(np.flatnonzero(invalid.to_numpy())[0])
        raise ParseError(
            "review row must be a non-negative integer or '-', "
            f"got {review.iloc[first]!r}",
            line=int(lines[first]),
        )

    duplicated = raw.duplicated(["user_id", "item_id"], keep="first").to_numpy()
    n_duplicates = int(duplicated.sum())
    if n_duplicates:
        logger.warning(
            "Collapsed %d duplicate (user, item) rows in %s", n_duplicates, path
        )
    raw = raw.loc[~duplicated]
    review_rows = review_rows.loc[~duplicated]
    lines = lines[~duplicated]

    if catalog is None:
        user_codes, user_ids = pd.factorize(raw["user_id"], sort=False)
        item_codes, item_ids = pd.factorize(raw["item_id"], sort=False)
        catalog = Catalog(user_ids=list(user_ids), item_ids=list(item_ids))
    else:
        user_codes = raw["user_id"].map(catalog.user_index)
        item_codes = raw["item_id"].map(catalog.item_index)
        unknown = (user_codes.isna() | item_codes.isna()).to_numpy()
        if unknown.any():
            raise ParseError("id not present in catalog", line=int(lines[unknown][0]))
        user_codes = user_codes.to_numpy()
        item_codes = item_codes.to_numpy()

    interactions = pd.DataFrame(
        {
            "user": np.asarray(user_codes, dtype=np.int64),
            "item": np.asarray(item_codes, dtype=np.int64),
            "review_row": review_rows.to_numpy(dtype=np.int64),
        },
        columns=INTERACTION_COLUMNS,
    )
    if interactions.empty:
        interactions = empty_interactions()
    if num_review_rows is not None:
        check_review_rows(interactions, num_review_rows, line_numbers=lines)

    interactions.attrs["n_duplicates"] = n_duplicates
    logger.info(
        "Loaded %d interactions (%d users, %d items) from %s",
        len(interactions),
        catalog.num_users,
        catalog.num_items,
        path,
    )
    return catalog, interactions


def write_interactions(
    path: PathLike, catalog: Catalog, interactions: pd.DataFrame
) -> None:
    """Writes interactions with external ids, the inverse of `load_interactions`."""
    review = interactions["review_row"].astype(str).where(
        interactions["review_row"] != NO_REVIEW, "-"
    )
    user_ids = np.asarray(catalog.user_ids, dtype=object)
    item_ids = np.asarray(catalog.item_ids, dtype=object)
    out = pd.DataFrame(
        {
            "user_id": user_ids[interactions["user"].to_numpy()],
            "item_id": item_ids[interactions["item"].to_numpy()],
            "review": review.to_numpy(),
        }
    )
    out.to_csv(
        path,
        sep="\t",
        header=False,
        index=False,
        quoting=csv.QUOTE_NONE,
        lineterminator="\n",
    )


def read_catalog(directory: PathLike) -> Optional[Catalog]:
    """Reads ``users.tsv`` and ``items.tsv`` if both exist in ``directory``."""
    directory = Path(directory)
    users_path = directory / USERS_FILENAME
    items_path = directory / ITEMS_FILENAME
    if not (users_path.exists() and items_path.exists()):
        return None
    user_ids = users_path.read_text(encoding="utf-8").splitlines()
    item_ids = items_path.read_text(encoding="utf-8").splitlines()
    return Catalog(user_ids=user_ids, item_ids=item_ids)


def write_catalog(directory: PathLike, catalog: Catalog) -> None:
    directory = Path(directory)
    (directory / USERS_FILENAME).write_text(
        "".join(f"{uid}\n" for uid in catalog.user_ids), encoding="utf-8"
    )
    (directory / ITEMS_FILENAME).write_text(
        "".join(f"{iid}\n" for iid in catalog.item_ids), encoding="utf-8"
    )


def _parse_header(line: str, path: Path) -> Dict[str, str]:
    fields = {}
    for token in line.split():
        key, sep, value = token.partition("=")
        if not sep:
            raise ParseError(f"{path}: malformed header token {token!r}", line=1)
        fields[key] = value
    for key in ("dim", "rows", "kind"):
        if key not in fields:
            raise ParseError(f"{path}: header lacks '{key}='", line=1)
    return fields


def read_embedding_table(path: PathLike) -> EmbeddingTable:
    """Reads an embedding table in the binary or TSV layout.

    Raises:
        FileNotFoundError: If ``path`` does not exist.
        ParseError: If the header or the payload is malformed.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    with open(path, "rb") as handle:
        header = _parse_header(handle.readline().decode("ascii"), path)
        payload = handle.read()

    try:
        dim, rows = int(header["dim"]), int(header["rows"])
        kind = EmbeddingKind(header["kind"])
    except ValueError as error:
        raise ParseError(f"{path}: {error}", line=1) from error

    if path.suffix == ".tsv":
        text = payload.decode("utf-8").strip()
        matrix = (
            np.loadtxt(text.splitlines(), delimiter="\t", dtype=np.float64, ndmin=2)
            if text
            else np.empty((0, dim))
        )
    else:
        matrix = np.frombuffer(payload, dtype="<f4").astype(np.float64)
        if matrix.size != dim * rows:
            raise ParseError(
                f"{path}: expected {dim * rows} float32 values, found {matrix.size}"
            )
        matrix = matrix.reshape(rows, dim)
    if matrix.shape != (rows, dim):
        raise ParseError(f"{path}: payload shape {matrix.shape} != ({rows}, {dim})")

    missing = np.zeros(rows, dtype=bool)
    if header.get("missing"):
        missing[[int(x) for x in header["missing"].split(",")]] = True
    return EmbeddingTable(
        kind=kind, matrix=matrix, missing=missing, fingerprint=header.get("fingerprint")
    )


def write_embedding_table(table: EmbeddingTable, path: PathLike) -> Path:
    """Writes ``table`` as binary float32, or as TSV when ``path`` ends in .tsv."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tokens = [f"dim={table.dim}", f"rows={table.rows}", f"kind={table.kind.value}"]
    if table.fingerprint:
        tokens.append(f"fingerprint={table.fingerprint}")
    if table.missing.any():
        tokens.append("missing=" + ",".join(map(str, np.flatnonzero(table.missing))))
    header = (" ".join(tokens) + "\n").encode("ascii")

    with open(path, "wb") as handle:
        handle.write(header)
        if path.suffix == ".tsv":
            body = "".join(
                "\t".join(format(value, ".17g") for value in row) + "\n"
                for row in table.matrix
            )
            handle.write(body.encode("utf-8"))
        else:
            handle.write(table.matrix.astype("<f4").tobytes())
    logger.debug("Wrote %s table %s to %s", table.kind.value, table.matrix.shape, path)
    return path


class Loader:
    """Utility class for loading a dataset directory.

    The directory must contain ``interactions.tsv`` and may contain the
    catalog files and the raw ``image.emb``, ``text.emb`` and ``review.emb``
    tables.

    Args:
        path: Dataset directory.
        encoding: Text encoding of the interactions file.

    Raises:
        FileNotFoundError: If ``path`` does not exist or is not a directory.
    """

    def __init__(self, path: PathLike, encoding: str = "utf-8") -> None:
        if not isinstance(path, (str, Path)):
            raise TypeError("path must be a string or Path")
        if not isinstance(encoding, str):
            raise TypeError("encoding must be string-valued")
        self.path = Path(path)
        self.encoding = encoding
        if not self.path.is_dir():
            raise FileNotFoundError(self.path)
        self.catalog: Optional[Catalog] = None
        logger.info("Set dataset path to %s", self.path)

    def table_path(self, name: str) -> Path:
        return self.path / TABLE_FILENAMES[name]

    def load_table(self, name: str) -> Optional[EmbeddingTable]:
        """Loads a raw table by name; returns ``None`` when the file is absent."""
        path = self.table_path(name)
        if not path.exists():
            logger.warning("No %s table found at %s", name, path)
            return None
        return read_embedding_table(path)

    def load_interactions(
        self, num_review_rows: Optional[int] = None
    ) -> Tuple[Catalog, pd.DataFrame]:
        catalog, interactions = load_interactions(
            self.path / INTERACTIONS_FILENAME,
            catalog=read_catalog(self.path),
            num_review_rows=num_review_rows,
            encoding=self.encoding,
        )
        self.catalog = catalog
        return catalog, interactions


def load_dataset(path: PathLike) -> InteractionDataset:
    """Wrapper function to load a dataset directory into an `InteractionDataset`.

    Examples:
        >>> from reviewgraph.loader import load_dataset
        >>> dataset = load_dataset("runs/synth")
        >>> dataset.catalog.num_items
    """
    loader = Loader(path)
    tables = {
        name: table
        for name in TABLE_FILENAMES
        if (table := loader.load_table(name)) is not None
    }
    review_rows = tables["review"].rows if "review" in tables else None
    catalog, interactions = loader.load_interactions(num_review_rows=review_rows)
    return InteractionDataset(catalog=catalog, interactions=interactions, tables=tables)


def save_dataset(
    directory: PathLike,
    catalog: Catalog,
    interactions: pd.DataFrame,
    tables: Optional[Dict[str, EmbeddingTable]] = None,
) -> Path:
    """Writes a dataset directory readable by `load_dataset`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_catalog(directory, catalog)
    write_interactions(directory / INTERACTIONS_FILENAME, catalog, interactions)
    for name, table in (tables or {}).items():
        write_embedding_table(table, directory / TABLE_FILENAMES[name])
    return directory
