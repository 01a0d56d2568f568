import numpy as np
import pandas as pd
import pytest

from reviewgraph.data import (
    BipartiteGraph,
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
from reviewgraph.exceptions import DanglingReviewError


def frame(rows):
    return pd.DataFrame(rows, columns=["user", "item", "review_row"])


@pytest.mark.unit
def test_catalog():
    catalog = Catalog(user_ids=["a", "b"], item_ids=[10, 11, 12])
    assert catalog.num_users == 2
    assert catalog.num_items == 3
    assert catalog.item_index["12"] == 2
    with pytest.raises(ValueError):
        Catalog(user_ids=["a", "a"], item_ids=["x"])


@pytest.mark.unit
def test_embedding_kind():
    assert EmbeddingKind.RAW_IMAGE.modality == "image"
    assert EmbeddingKind.RAW_REVIEW.compressed() is EmbeddingKind.COMPRESSED_REVIEW
    assert EmbeddingKind.PROJECTED_TEXT.compressed() is EmbeddingKind.COMPRESSED_TEXT


@pytest.mark.unit
def test_embedding_table_validation():
    table = EmbeddingTable("raw_text", np.ones((3, 2)))
    assert table.kind is EmbeddingKind.RAW_TEXT
    assert (table.rows, table.dim) == (3, 2)
    assert not table.missing.any()
    with pytest.raises(ValueError):
        EmbeddingTable(EmbeddingKind.RAW_TEXT, np.ones(3))
    with pytest.raises(ValueError):
        EmbeddingTable(EmbeddingKind.RAW_TEXT, np.full((2, 2), np.inf))
    with pytest.raises(ValueError):
        EmbeddingTable(EmbeddingKind.RAW_TEXT, np.ones((2, 2)), missing=[True])


@pytest.mark.unit
def test_validate_interactions():
    validate_interactions(empty_interactions(), 0, 0)
    validate_interactions(frame([[0, 1, -1], [1, 0, 0]]), 2, 2)
    with pytest.raises(ValueError):
        validate_interactions(frame([[0, 2, -1]]), 1, 2)
    with pytest.raises(ValueError):
        validate_interactions(frame([[0, 1, -1], [0, 1, 3]]), 1, 2)


@pytest.mark.unit
def test_check_review_rows():
    interactions = frame([[0, 0, 0], [0, 1, -1], [1, 1, 4]])
    check_review_rows(interactions, 5)
    with pytest.raises(DanglingReviewError) as excinfo:
        check_review_rows(interactions, 4, line_numbers=np.array([1, 2, 3]))
    assert excinfo.value.line == 3


@pytest.mark.unit
def test_interaction_dataset_checks_reviews():
    catalog = Catalog(user_ids=["u"], item_ids=["a", "b"])
    reviews = {"review": EmbeddingTable(EmbeddingKind.RAW_REVIEW, np.ones((1, 2)))}
    InteractionDataset(catalog, frame([[0, 0, 0], [0, 1, -1]]), reviews)
    with pytest.raises(DanglingReviewError):
        InteractionDataset(catalog, frame([[0, 0, 1]]), reviews)


@pytest.mark.unit
def test_split_dataset_validation():
    train = frame([[0, 0, -1], [1, 1, -1]])
    SplitDataset(train, frame([[0, 1, -1]]), frame([[1, 0, -1]]), 2, 2)
    with pytest.raises(ValueError):
        # overlapping partitions
        SplitDataset(train, frame([[0, 0, -1]]), empty_interactions(), 2, 2)
    with pytest.raises(ValueError):
        # held-out user without train interactions
        SplitDataset(train, empty_interactions(), frame([[2, 0, -1]]), 3, 2)


@pytest.mark.unit
def test_items_by_user():
    grouped = items_by_user(frame([[1, 3, -1], [1, 0, -1], [2, 2, -1]]), 4)
    assert [list(g) for g in grouped] == [[], [0, 3], [2], []]


@pytest.mark.unit
def test_bipartite_graph_views_and_degrees():
    graph = BipartiteGraph.from_interactions(
        frame([[0, 0, -1], [0, 2, -1], [1, 2, -1]]), num_users=3, num_items=3
    )
    assert (graph.num_users, graph.num_items, graph.num_edges) == (3, 3, 3)
    assert list(graph.user_degree) == [2, 1, 0]
    assert list(graph.item_degree) == [1, 0, 2]
    assert list(graph.user_neighbors(0)) == [0, 2]
    assert list(graph.item_neighbors(2)) == [0, 1]
    assert graph.has_edge(1, 2)
    assert not graph.has_edge(1, 0)
    assert not graph.has_edge(2, 1)


@pytest.mark.unit
def test_bipartite_graph_rejects_inconsistent_views():
    graph = BipartiteGraph.from_interactions(frame([[0, 1, -1]]), 2, 2)
    with pytest.raises(ValueError):
        BipartiteGraph(user_adj=graph.user_adj, item_adj=graph.user_adj)
    with pytest.raises(TypeError):
        BipartiteGraph(user_adj=graph.user_adj.toarray(), item_adj=graph.item_adj)


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(10))
def test_normalized_adjacency_matches_dense(seed, random_graph):
    graph = random_graph(7, 9, 0.3, seed=seed)
    dense = graph.user_adj.toarray()
    du = dense.sum(axis=1)
    di = dense.sum(axis=0)
    expected = np.zeros_like(dense)
    for u, i in zip(*np.nonzero(dense)):
        expected[u, i] = 1.0 / np.sqrt(du[u] * di[i])
    np.testing.assert_allclose(graph.normalized.toarray(), expected)
    np.testing.assert_allclose(graph.normalized_t.toarray(), expected.T)
