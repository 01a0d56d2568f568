from .io import (
    INTERACTIONS_FILENAME,
    TABLE_FILENAMES,
    Loader,
    load_dataset,
    load_interactions,
    read_catalog,
    read_embedding_table,
    save_dataset,
    write_catalog,
    write_embedding_table,
    write_interactions,
)

__all__ = [
    "INTERACTIONS_FILENAME",
    "TABLE_FILENAMES",
    "Loader",
    "load_dataset",
    "load_interactions",
    "read_catalog",
    "read_embedding_table",
    "save_dataset",
    "write_catalog",
    "write_embedding_table",
    "write_interactions",
]
