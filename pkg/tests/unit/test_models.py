import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from sklearn.decomposition import PCA
from sklearn.metrics import adjusted_rand_score

from reviewgraph.data import BipartiteGraph, EmbeddingKind, EmbeddingTable
from reviewgraph.exceptions import ParseError, ShapeError, TrainingDivergedError
from reviewgraph.models import epim
from reviewgraph.models.alignment import (
    ItcHead,
    itc_loss,
    itc_objective,
    project,
    retrieval_accuracy,
    similarity,
    train_itc,
)
from reviewgraph.models.compressor import (
    AutoEncoder,
    ItemInitEmbeddings,
    ae_objective,
    build_item_init,
    compress,
    hidden_width,
    reconstruct,
    standardize_items,
    train_ae,
)
from reviewgraph.models.epim import (
    INIT_STD,
    InitMode,
    InitSources,
    ModelState,
    PropagatedEmbeddings,
    bpr_loss,
    bpr_objective,
    content_init,
    init_mode,
    load_checkpoint,
    propagate,
    propagate_matrices,
    save_checkpoint,
    score,
    train,
)
from reviewgraph.models.raum import (
    CrossRelationMatrix,
    build_cross_relation,
    dimension_attention,
    export_cross_relation,
    init_users,
    item_review_means,
)
from reviewgraph.numerics import AdamWState


def frame(rows):
    return pd.DataFrame(rows, columns=["user", "item", "review_row"])


# Compressor


@pytest.mark.unit
def test_hidden_width():
    assert hidden_width(768, 64) == 222
    assert hidden_width(1, 1) == 1


@pytest.mark.unit
def test_autoencoder_shapes():
    ae = AutoEncoder.create(12, 3, seed=0)
    assert (ae.input_dim, ae.code_dim) == (12, 3)
    assert ae.encoder.hidden_dim == 6
    assert set(ae.parameters()) == {
        f"{part}.{name}"
        for part in ("encoder", "decoder")
        for name in ("w1", "b1", "w2", "b2")
    }
    assert reconstruct(ae, np.ones((2, 12))).shape == (2, 12)
    with pytest.raises(ShapeError):
        AutoEncoder(encoder=ae.encoder, decoder=ae.encoder)
    with pytest.raises(ValueError):
        AutoEncoder(encoder=ae.encoder, decoder=ae.decoder, l2_coeff=-1.0)


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(100))
def test_ae_gradient_matches_finite_differences(seed, numeric_gradient, rel_error):
    rng = np.random.default_rng(seed)
    ae = AutoEncoder.create(6, 2, l2_coeff=1e-2, seed=seed)
    x = rng.standard_normal((5, 6))
    _, grads = ae_objective(ae, x)
    for name, param in ae.parameters().items():
        numeric = numeric_gradient(lambda: ae_objective(ae, x)[0], param)
        assert rel_error(grads[name], numeric) < 1e-4, name


@pytest.mark.unit
def test_train_ae_reduces_loss():
    rng = np.random.default_rng(0)
    data = rng.standard_normal((200, 3)) @ rng.standard_normal((3, 16))
    table = EmbeddingTable(EmbeddingKind.RAW_TEXT, data)
    ae = AutoEncoder.create(16, 4, seed=0)
    initial, _ = ae_objective(ae, data)
    trace = train_ae(ae, table, epochs=30, batch_size=32, optimizer=AdamWState(lr=1e-2))
    assert len(trace.losses) == 30
    assert trace.losses[-1] < 0.5 * initial


@pytest.mark.unit
def test_train_ae_small_steps_never_raise_loss():
    data = np.random.default_rng(4).standard_normal((64, 8))
    table = EmbeddingTable(EmbeddingKind.RAW_TEXT, data)
    ae = AutoEncoder.create(8, 2, seed=0)
    optimizer = AdamWState(lr=1e-4, weight_decay=0.0)
    trace = train_ae(ae, table, epochs=50, batch_size=64, optimizer=optimizer)
    assert np.all(np.diff(trace.losses) <= 1e-12)


@pytest.mark.unit
def test_train_ae_memorises_a_constant_row():
    data = np.tile(np.linspace(-1.0, 1.0, 8), (32, 1))
    table = EmbeddingTable(EmbeddingKind.RAW_IMAGE, data)
    ae = AutoEncoder.create(8, 2, l2_coeff=0.0, seed=0)
    optimizer = AdamWState(lr=1e-3, weight_decay=0.0)
    train_ae(ae, table, epochs=500, batch_size=4, optimizer=optimizer)
    assert np.mean((reconstruct(ae, data) - data) ** 2) < 1e-4


@pytest.mark.unit
def test_train_ae_finds_a_rank_two_subspace():
    rng = np.random.default_rng(5)
    data = rng.uniform(0.0, 1.0, (400, 2)) @ rng.standard_normal((2, 32))
    data += 0.01 * rng.standard_normal(data.shape)
    pca_error = {}
    for rank in (1, 2):
        pca = PCA(n_components=rank).fit(data)
        restored = pca.inverse_transform(pca.transform(data))
        pca_error[rank] = np.mean((restored - data) ** 2)

    table = EmbeddingTable(EmbeddingKind.RAW_TEXT, data)
    ae = AutoEncoder.create(32, 2, seed=0)
    train_ae(ae, table, epochs=300, batch_size=32, optimizer=AdamWState(lr=1e-2))
    error = np.mean((reconstruct(ae, data) - data) ** 2)
    assert pca_error[2] < error < 0.5 * pca_error[1]


@pytest.mark.unit
def test_train_ae_errors():
    ae = AutoEncoder.create(4, 2)
    with pytest.raises(ShapeError):
        train_ae(ae, EmbeddingTable(EmbeddingKind.RAW_TEXT, np.ones((3, 5))))
    empty = EmbeddingTable(
        EmbeddingKind.RAW_IMAGE, np.ones((2, 4)), missing=[True, True]
    )
    with pytest.raises(ValueError):
        train_ae(ae, empty)


@pytest.mark.unit
def test_compress_table():
    rng = np.random.default_rng(1)
    table = EmbeddingTable(
        EmbeddingKind.RAW_IMAGE,
        rng.standard_normal((6, 8)),
        missing=[False, True, False, False, False, False],
    )
    ae = AutoEncoder.create(8, 3, seed=1)
    codes = compress(ae, table)
    assert codes.kind is EmbeddingKind.COMPRESSED_IMAGE
    assert codes.matrix.shape == (6, 3)
    np.testing.assert_array_equal(codes.matrix[1], 0.0)
    assert codes.missing.tolist() == table.missing.tolist()

    normalized = compress(ae, table, normalize=True)
    norms = np.linalg.norm(normalized.matrix, axis=1)
    np.testing.assert_allclose(norms[~table.missing], 1.0)


@pytest.mark.unit
def test_build_item_init():
    image = np.arange(6.0).reshape(3, 2)
    text = -np.arange(9.0).reshape(3, 3)
    items = build_item_init(image, EmbeddingTable(EmbeddingKind.COMPRESSED_TEXT, text))
    assert items.dim == 5
    np.testing.assert_array_equal(items.matrix[:, :2], image)
    np.testing.assert_array_equal(items.matrix[:, 2:], text)
    assert build_item_init(None, text).dim == 3
    with pytest.raises(ValueError):
        build_item_init(None, None)
    with pytest.raises(ShapeError):
        build_item_init(image, text[:2])


@pytest.mark.unit
def test_standardize_items():
    rng = np.random.default_rng(0)
    items = ItemInitEmbeddings(10.0 + 3.0 * rng.standard_normal((50, 6)))
    standardised = standardize_items(items, 0.1)
    np.testing.assert_allclose(standardised.matrix.mean(axis=0), 0.0, atol=1e-12)
    assert standardised.matrix.std() == pytest.approx(0.1)
    centred = items.matrix - items.matrix.mean(axis=0)
    np.testing.assert_allclose(standardised.matrix * centred.std() / 0.1, centred)

    constant = standardize_items(ItemInitEmbeddings(np.full((4, 3), 2.0)), 0.1)
    np.testing.assert_array_equal(constant.matrix, 0.0)


# Alignment


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(100))
def test_itc_gradient_matches_finite_differences(seed, numeric_gradient, rel_error):
    rng = np.random.default_rng(seed)
    head = ItcHead.create(4, 3, projection_dim=3, temperature=0.5, seed=seed)
    img = rng.standard_normal((5, 4))
    txt = rng.standard_normal((5, 3))
    _, grads = itc_objective(head, img, txt)
    for name, param in head.parameters().items():
        numeric = numeric_gradient(lambda: itc_loss(head, img, txt), param)
        assert rel_error(grads[name], numeric) < 1e-4, name


@pytest.mark.unit
def test_itc_loss_is_log_batch_for_flat_similarities():
    head = ItcHead.create(4, 4, projection_dim=2)
    head.w_img[...] = 0.0
    img = np.ones((8, 4))
    assert itc_loss(head, img, img) == pytest.approx(np.log(8))
    assert similarity(head, img, img).shape == (8, 8)
    with pytest.raises(ShapeError):
        itc_objective(head, img, img[:3])


@pytest.mark.unit
def test_itc_loss_stays_finite_for_saturated_logits():
    head = ItcHead(
        w_img=np.eye(2), w_txt=np.eye(2), log_temperature=np.array(np.log(0.07))
    )
    img = np.array([[0.0, 0.0], [10.0, 0.0]])
    txt = np.array([[10.0, 0.0], [0.0, 0.0]])
    loss, grads = itc_objective(head, img, txt)
    assert np.isfinite(loss)
    assert loss == pytest.approx(0.5 * (np.log(2) + 100 / 0.07), rel=1e-12)
    assert all(np.all(np.isfinite(grad)) for grad in grads.values())


@pytest.mark.unit
def test_itc_loss_ignores_rotation_and_batch_order():
    rng = np.random.default_rng(6)
    head = ItcHead.create(5, 4, projection_dim=3, temperature=0.2, seed=1)
    img = rng.standard_normal((7, 5))
    txt = rng.standard_normal((7, 4))
    loss = itc_loss(head, img, txt)

    rotation, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    rotated = ItcHead(
        w_img=rotation @ head.w_img,
        w_txt=rotation @ head.w_txt,
        log_temperature=head.log_temperature,
    )
    assert itc_loss(rotated, img, txt) == pytest.approx(loss, rel=1e-10)

    order = rng.permutation(7)
    assert itc_loss(head, img[order], txt[order]) == pytest.approx(loss, rel=1e-10)


@pytest.mark.unit
def test_itc_loss_sharpens_as_temperature_falls():
    img = np.eye(4)
    losses = []
    for temperature in (1.0, 0.3, 0.1, 0.01):
        head = ItcHead(
            w_img=np.eye(4),
            w_txt=np.eye(4),
            log_temperature=np.array(np.log(temperature)),
        )
        losses.append(itc_loss(head, img, img))
    assert np.all(np.diff(losses) < 0)
    assert losses[-1] < 1e-10

    # a wrong argmax is punished harder instead
    head.w_txt = np.eye(4)[::-1]
    assert itc_loss(head, img, img) > 10.0


def rotated_pairs(n: int, dim: int, noise: float, seed: int):
    rng = np.random.default_rng(seed)
    rotation, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    img = rng.standard_normal((n, dim))
    txt = img @ rotation + noise * rng.standard_normal((n, dim))
    return (
        EmbeddingTable(EmbeddingKind.RAW_IMAGE, img),
        EmbeddingTable(EmbeddingKind.RAW_TEXT, txt),
    )


@pytest.mark.unit
def test_train_itc_learns_planted_correspondence():
    img, txt = rotated_pairs(400, 16, 0.1, seed=0)
    head = ItcHead.create(16, 16, projection_dim=16, seed=0)
    trace = train_itc(
        head, img, txt, epochs=100, batch_size=32, optimizer=AdamWState(lr=1e-2)
    )
    holdout = trace.holdout_rows
    assert holdout.size == 40
    assert trace.holdout_losses[-1] < trace.initial_holdout_loss
    accuracy = retrieval_accuracy(head, img.matrix[holdout], txt.matrix[holdout])
    assert accuracy > 0.9


@pytest.mark.unit
def test_train_itc_shuffled_pairs_stay_near_chance():
    img, txt = rotated_pairs(400, 16, 0.1, seed=1)
    shuffled = np.random.default_rng(2).permutation(txt.rows)
    txt = EmbeddingTable(EmbeddingKind.RAW_TEXT, txt.matrix[shuffled])
    head = ItcHead.create(16, 16, projection_dim=16, seed=0)
    trace = train_itc(head, img, txt, epochs=20, optimizer=AdamWState(lr=1e-2))
    assert trace.holdout_losses[-1] > 0.9 * np.log(trace.holdout_rows.size)


@pytest.mark.unit
def test_project_tables():
    head = ItcHead.create(4, 3, projection_dim=2)
    image = EmbeddingTable(
        EmbeddingKind.RAW_IMAGE, np.ones((3, 4)), missing=[False, True, False]
    )
    projected = project(head, image)
    assert projected.kind is EmbeddingKind.PROJECTED_IMAGE
    assert projected.matrix.shape == (3, 2)
    np.testing.assert_array_equal(projected.matrix[1], 0.0)
    text = project(head, EmbeddingTable(EmbeddingKind.RAW_TEXT, np.ones((3, 3))))
    assert text.kind is EmbeddingKind.PROJECTED_TEXT
    with pytest.raises(ValueError):
        project(head, EmbeddingTable(EmbeddingKind.RAW_REVIEW, np.ones((3, 4))))


# Review-aware user initialisation


@pytest.mark.unit
def test_item_review_means():
    train = frame([[0, 0, 0], [1, 0, 1], [1, 1, -1], [2, 2, 2]])
    codes = np.array([[1.0, 0.0], [3.0, 2.0], [5.0, 5.0]])
    means = item_review_means(train, codes, num_items=4)
    np.testing.assert_allclose(means.matrix[0], [2.0, 1.0])
    np.testing.assert_allclose(means.matrix[1], 0.0)
    np.testing.assert_allclose(means.matrix[2], [5.0, 5.0])
    assert means.unreviewed.tolist() == [False, True, False, True]


@pytest.mark.unit
def test_cross_relation():
    means = item_review_means(frame([[0, 0, 0], [0, 1, 1]]), np.eye(2), num_items=2)
    items = ItemInitEmbeddings(np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    cross = build_cross_relation(means, items)
    assert cross.shape == (2, 3)
    np.testing.assert_allclose(cross.matrix, items.matrix)
    with pytest.raises(ValueError):
        cross.matrix[0, 0] = 1.0
    with pytest.raises(ShapeError):
        build_cross_relation(means, ItemInitEmbeddings(np.ones((3, 3))))


@pytest.mark.unit
def test_dimension_attention_columns_sum_to_one():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n, d_r, d_i = rng.integers(1, 8, size=3)
        weights = dimension_attention(
            rng.standard_normal((d_r, d_i)) * 10, rng.standard_normal((n, d_r))
        )
        assert weights.shape == (n, d_i)
        assert np.all(np.abs(weights.sum(axis=0) - 1.0) < 1e-9)


@pytest.mark.unit
def test_init_users_is_convex_per_dimension(random_interactions):
    rng = np.random.default_rng(0)
    train = random_interactions(1000, 30, 4, seed=5, reviewed=0.8)
    review_codes = rng.standard_normal((len(train), 5))
    items = ItemInitEmbeddings(rng.standard_normal((30, 6)))
    cross = build_cross_relation(
        item_review_means(train, review_codes, 30), items
    )
    users = init_users(cross, items, train, review_codes, 1000)
    assert users.matrix.shape == (1000, 6)
    for user, group in train.groupby("user"):
        reviewed = group.loc[group["review_row"] >= 0]
        if reviewed.empty:
            assert users.fallback[user]
            np.testing.assert_allclose(
                users.matrix[user], items.matrix[group["item"].to_numpy()].mean(axis=0)
            )
            continue
        coords = items.matrix[reviewed["item"].to_numpy()]
        assert np.all(users.matrix[user] >= coords.min(axis=0) - 1e-12)
        assert np.all(users.matrix[user] <= coords.max(axis=0) + 1e-12)


@pytest.mark.unit
def test_init_users_matches_attention_formula():
    rng = np.random.default_rng(3)
    train = frame([[0, 0, 0], [0, 2, 1], [0, 3, -1], [1, 1, 2]])
    review_codes = rng.standard_normal((3, 2))
    items = ItemInitEmbeddings(rng.standard_normal((4, 3)))
    cross = build_cross_relation(item_review_means(train, review_codes, 4), items)
    users = init_users(cross, items, train, review_codes, num_users=3)

    weights = dimension_attention(cross.matrix, review_codes[[0, 1]])
    expected = np.sum(weights * items.matrix[[0, 2]], axis=0)
    np.testing.assert_allclose(users.matrix[0], expected)
    # a single reviewed item gets all the weight
    np.testing.assert_allclose(users.matrix[1], items.matrix[1])
    # user 2 has no train interaction
    assert users.empty.tolist() == [False, False, True]
    np.testing.assert_array_equal(users.matrix[2], 0.0)
    assert not users.fallback.any()


@pytest.mark.unit
def test_init_users_shape_error():
    items = ItemInitEmbeddings(np.ones((2, 3)))
    cross = CrossRelationMatrix(np.ones((2, 3)))
    with pytest.raises(ShapeError):
        init_users(cross, items, frame([[0, 0, 0]]), np.ones((1, 4)), 1)


@pytest.mark.unit
def test_export_cross_relation_recovers_blocks():
    rng = np.random.default_rng(0)
    block = np.kron(np.eye(3), np.ones((4, 5))) * 10.0 + rng.random((12, 15))
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "d.tsv"
        result = export_cross_relation(
            CrossRelationMatrix(block), path, n_clusters=3, fingerprint="f00"
        )
        assert path.read_text().startswith("# fingerprint=f00\n")
        written = pd.read_csv(path, sep="\t", header=None, comment="#").to_numpy()
        rows = pd.read_csv(Path(tmpdir) / "d_rows.tsv", sep="\t", comment="#")
        assert (Path(tmpdir) / "d_cols.tsv").exists()
    np.testing.assert_allclose(written, block)
    assert rows["cluster"].tolist() == result.row_labels.tolist()
    assert adjusted_rand_score(np.repeat(np.arange(3), 4), result.row_labels) == 1.0
    assert adjusted_rand_score(np.repeat(np.arange(3), 5), result.column_labels) == 1.0


@pytest.mark.unit
def test_export_zero_cross_relation_is_single_cluster():
    with tempfile.TemporaryDirectory() as tmpdir:
        result = export_cross_relation(
            CrossRelationMatrix(np.zeros((3, 4))), Path(tmpdir) / "d.tsv"
        )
    assert set(result.row_labels) == {0}
    assert set(result.column_labels) == {0}


# Propagation and BPR


def dense_oracle(user0, item0, graph, num_layers):
    num_users = user0.shape[0]
    norm = graph.normalized.toarray()
    adjacency = np.block(
        [
            [np.zeros((num_users, num_users)), norm],
            [norm.T, np.zeros((norm.shape[1], norm.shape[1]))],
        ]
    )
    layer = np.vstack([user0, item0])
    total = layer.copy()
    for _ in range(num_layers):
        layer = adjacency @ layer
        total += layer
    total /= num_layers + 1
    return total[:num_users], total[num_users:]


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(50))
def test_propagation_matches_dense_oracle(seed, random_graph):
    rng = np.random.default_rng(seed)
    graph = random_graph(6, 8, 0.35, seed=seed)
    user0 = rng.standard_normal((6, 4))
    item0 = rng.standard_normal((8, 4))
    for num_layers in (1, 2, 3):
        embs = propagate_matrices(user0, item0, graph, num_layers)
        users, items = dense_oracle(user0, item0, graph, num_layers)
        assert np.max(np.abs(embs.user_final - users)) < 1e-9
        assert np.max(np.abs(embs.item_final - items)) < 1e-9


@pytest.mark.unit
def test_propagation_edge_cases():
    graph = BipartiteGraph.from_interactions(frame([[0, 0, -1]]), 2, 2)
    state = ModelState.create(2, 2, 3, num_layers=3, seed=0)
    embs = propagate(state, graph, keep_layers=True)
    assert len(embs.per_layer) == 4
    # isolated user 1 and item 1 only keep their own layer-0 share
    np.testing.assert_allclose(embs.user_final[1], state.user0[1] / 4)
    np.testing.assert_allclose(embs.item_final[1], state.item0[1] / 4)

    state.num_layers = 0
    embs = propagate(state, graph)
    np.testing.assert_array_equal(embs.user_final, state.user0)
    with pytest.raises(ShapeError):
        propagate_matrices(np.ones((3, 3)), np.ones((2, 3)), graph, 1)


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(10))
def test_propagation_is_linear(seed, random_graph):
    rng = np.random.default_rng(seed)
    graph = random_graph(5, 7, 0.4, seed=seed)
    first = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
    second = rng.standard_normal((5, 3)), rng.standard_normal((7, 3))
    a = propagate_matrices(*first, graph, 3)
    b = propagate_matrices(*second, graph, 3)

    scaled = propagate_matrices(2.5 * first[0], 2.5 * first[1], graph, 3)
    np.testing.assert_allclose(scaled.user_final, 2.5 * a.user_final, atol=1e-12)
    np.testing.assert_allclose(scaled.item_final, 2.5 * a.item_final, atol=1e-12)

    summed = propagate_matrices(first[0] + second[0], first[1] + second[1], graph, 3)
    np.testing.assert_allclose(
        summed.user_final, a.user_final + b.user_final, atol=1e-12
    )
    np.testing.assert_allclose(
        summed.item_final, a.item_final + b.item_final, atol=1e-12
    )


@pytest.mark.unit
def test_final_embedding_is_mean_of_layers(random_graph):
    graph = random_graph(6, 8, 0.35, seed=2)
    state = ModelState.create(6, 8, 4, num_layers=4, seed=3)
    embs = propagate(state, graph, keep_layers=True)
    assert len(embs.per_layer) == 5
    np.testing.assert_array_equal(embs.per_layer[0][0], state.user0)
    users = np.mean([layer[0] for layer in embs.per_layer], axis=0)
    items = np.mean([layer[1] for layer in embs.per_layer], axis=0)
    np.testing.assert_allclose(embs.user_final, users, atol=1e-12)
    np.testing.assert_allclose(embs.item_final, items, atol=1e-12)


@pytest.mark.unit
def test_score():
    embs = PropagatedEmbeddings(
        user_final=np.array([[1.0, 2.0]]), item_final=np.array([[3.0, 4.0], [0.0, 1.0]])
    )
    assert score(embs, 0, 0) == 11.0
    assert score(embs, 0, 1) == 2.0
    with pytest.raises(IndexError):
        score(embs, 1, 0)
    with pytest.raises(IndexError):
        score(embs, 0, -1)


@pytest.mark.unit
def test_bpr_loss_at_zero_is_log_two():
    embs = PropagatedEmbeddings(np.zeros((1, 2)), np.zeros((2, 2)))
    assert bpr_loss(embs, np.array([[0, 0, 1]]), 0.1) == pytest.approx(np.log(2))
    assert bpr_loss(embs, np.array([[0, 0, 1], [0, 0, 1]]), 0.1) == pytest.approx(
        2 * np.log(2)
    )


def gradient_instance(seed, random_graph, reg_target):
    rng = np.random.default_rng(seed)
    num_users = int(rng.integers(2, 11))
    num_items = int(rng.integers(3, 11))
    graph = random_graph(num_users, num_items, 0.4, seed=seed)
    state = ModelState.create(
        num_users,
        num_items,
        3,
        num_layers=int(rng.integers(0, 4)),
        seed=seed,
        lambda_bpr=0.05,
        reg_target=reg_target,
    )
    state.user0 *= 10
    state.item0 *= 10
    triples = np.column_stack(
        [
            rng.integers(num_users, size=6),
            rng.integers(num_items, size=6),
            rng.integers(num_items, size=6),
        ]
    )
    return state, graph, triples


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(100))
def test_bpr_gradient_matches_finite_differences(
    seed, random_graph, numeric_gradient, rel_error
):
    state, graph, triples = gradient_instance(seed, random_graph, "final")
    _, grads = bpr_objective(state, graph, triples)
    for name, param in state.parameters().items():
        numeric = numeric_gradient(
            lambda: bpr_objective(state, graph, triples)[0], param
        )
        assert rel_error(grads[name], numeric) < 1e-4, name


@pytest.mark.unit
@pytest.mark.parametrize("seed", range(20))
def test_bpr_gradient_with_layer0_regularisation(
    seed, random_graph, numeric_gradient, rel_error
):
    state, graph, triples = gradient_instance(seed, random_graph, "layer0")
    _, grads = bpr_objective(state, graph, triples)
    for name, param in state.parameters().items():
        numeric = numeric_gradient(
            lambda: bpr_objective(state, graph, triples)[0], param
        )
        assert rel_error(grads[name], numeric) < 1e-4, name


# Initialisation modes


@pytest.mark.unit
@pytest.mark.parametrize(
    "mode, width, layers",
    [
        ("full", 8, 2),
        ("printf", 8, 2),
        ("no_image", 4, 2),
        ("no_title", 4, 2),
        ("no_raum", 8, 2),
        ("none", 8, 2),
        ("bprmf", 8, 0),
    ],
)
def test_init_mode_shapes(mode, width, layers, sources):
    state = ModelState.create(30, 40, 16, num_layers=2, seed=0)
    init_mode(state, mode, sources)
    assert state.user0.shape == (30, width)
    assert state.item0.shape == (40, width)
    assert state.num_layers == layers
    assert state.mode is InitMode(mode)


@pytest.mark.unit
def test_init_mode_full_uses_content(sources):
    state = init_mode(ModelState.create(30, 40, 8, seed=0), "full", sources)
    items = np.hstack([sources.image_codes, sources.text_codes])
    centred = items - items.mean(axis=0)
    expected = centred * INIT_STD / centred.std()
    np.testing.assert_allclose(state.item0, expected)
    np.testing.assert_allclose(state.item0.mean(axis=0), 0.0, atol=1e-12)
    assert state.item0.std() == pytest.approx(INIT_STD)

    standardised = ItemInitEmbeddings(expected)
    means = item_review_means(sources.train, sources.review_codes, 40)
    cross = build_cross_relation(means, standardised)
    users = init_users(cross, standardised, sources.train, sources.review_codes, 30)
    np.testing.assert_allclose(state.user0, users.matrix)

    raw = init_mode(ModelState.create(30, 40, 8, seed=0), "full", sources, False)
    np.testing.assert_allclose(raw.item0, items)


def _offset_topic_sources(seed: int = 0) -> InitSources:
    """Codes with a large shared offset plus a two-topic signal; each of 20
    users interacts with six items of its own topic."""
    rng = np.random.default_rng(seed)
    topic = np.arange(40) % 2
    image = np.full((40, 4), 5.0) + 0.05 * rng.standard_normal((40, 4))
    image[:, :2] += np.eye(2)[topic]
    text = np.full((40, 4), 3.0) + 0.05 * rng.standard_normal((40, 4))
    text[:, 2:] += np.eye(2)[topic]
    users, items = [], []
    for user in range(20):
        chosen = rng.choice(np.flatnonzero(topic == user % 2), 6, replace=False)
        users.append(np.full(6, user))
        items.append(np.sort(chosen))
    users, items = np.concatenate(users), np.concatenate(items)
    train = pd.DataFrame(
        {"user": users, "item": items, "review_row": np.arange(users.size)}
    )
    return InitSources(
        train=train,
        image_codes=image,
        text_codes=text,
        review_codes=rng.standard_normal((users.size, 5)),
    )


def _cosines(matrix: np.ndarray) -> np.ndarray:
    unit = matrix / np.linalg.norm(matrix, axis=1, keepdims=True)
    return unit @ unit.T


@pytest.mark.unit
def test_content_init_separates_users_despite_shared_offset():
    sources = _offset_topic_sources()
    same = (np.arange(20)[:, None] % 2) == (np.arange(20)[None, :] % 2)

    content = content_init("full", sources, 20, 40)
    cosines = _cosines(content.users.matrix)
    assert cosines[same].min() > 0.8
    assert cosines[~same].max() < 0.0
    assert content.cross.shape == (5, 8)

    raw = content_init("full", sources, 20, 40, match_scale=False)
    assert _cosines(raw.users.matrix).min() > 0.9


@pytest.mark.unit
def test_content_init_errors(sources):
    assert content_init("no_raum", sources, 30, 40).users is None
    with pytest.raises(ValueError):
        content_init("none", sources, 30, 40)
    with pytest.raises(ValueError):
        content_init("full", None, 30, 40)
    with pytest.raises(ShapeError):
        content_init("full", sources, 30, 41)


@pytest.mark.unit
def test_init_mode_random_and_errors(sources):
    none = init_mode(ModelState.create(30, 40, 8, seed=0), "none")
    assert none.user0.shape == (30, 8)
    assert abs(none.user0.std() - INIT_STD) < 0.02
    no_raum = init_mode(ModelState.create(30, 40, 8, seed=0), "no_raum", sources)
    assert abs(no_raum.user0.std() - INIT_STD) < 0.02
    assert InitMode("PRINTF") is InitMode.FULL
    with pytest.raises(ValueError):
        init_mode(ModelState.create(30, 40, 8), "full")
    with pytest.raises(ValueError):
        init_mode(ModelState.create(30, 40, 8), "mystery", sources)
    partial = InitSources(train=sources.train, image_codes=sources.image_codes)
    with pytest.raises(ValueError):
        init_mode(ModelState.create(30, 40, 8), "full", partial)


@pytest.mark.unit
def test_model_state_validation():
    with pytest.raises(ShapeError):
        ModelState(user0=np.ones((2, 3)), item0=np.ones((2, 4)))
    with pytest.raises(ValueError):
        ModelState(user0=np.ones((2, 3)), item0=np.ones((2, 3)), num_layers=10)
    with pytest.raises(ValueError):
        ModelState(user0=np.full((2, 3), np.nan), item0=np.ones((2, 3)))


# Training


@pytest.mark.unit
def test_train_restores_best_state(small_split):
    graph = BipartiteGraph.from_interactions(small_split.train, 30, 40)
    state = ModelState.create(
        30, 40, 8, num_layers=2, seed=0, optimizer=AdamWState(lr=1e-2)
    )
    epochs = []
    result = train(
        state,
        graph,
        small_split,
        epochs=6,
        batch_size=128,
        patience=100,
        on_epoch=lambda epoch, loss: epochs.append(epoch),
    )
    assert epochs == list(range(6))
    assert list(result.trace.columns) == ["epoch", "loss", "val_N@10"]
    assert 0 <= result.best_epoch < 6
    assert result.best_score == pytest.approx(result.trace["val_N@10"].max())
    np.testing.assert_array_equal(state.user0, result.best_state.user0)
    assert result.trace["loss"].iloc[-1] < result.trace["loss"].iloc[0]


@pytest.mark.unit
def test_train_early_stopping(small_split):
    graph = BipartiteGraph.from_interactions(small_split.train, 30, 40)
    state = ModelState.create(30, 40, 8, num_layers=1, seed=0)
    result = train(state, graph, small_split, epochs=50, patience=2)
    assert len(result.trace) <= result.best_epoch + 3


@pytest.mark.unit
def test_bpr_ranks_the_observed_item_first():
    graph = BipartiteGraph.from_interactions(frame([[0, 0, -1]]), 1, 2)
    state = ModelState.create(
        1, 2, 4, num_layers=1, seed=0, optimizer=AdamWState(lr=1e-2)
    )
    triples = np.array([[0, 0, 1]])
    initial, _ = bpr_objective(state, graph, triples)
    for _ in range(200):
        _, grads = bpr_objective(state, graph, triples)
        epim.adamw_step(state.optimizer, state.parameters(), grads)
    embs = propagate(state, graph)
    assert score(embs, 0, 0) > score(embs, 0, 1)
    assert bpr_objective(state, graph, triples)[0] < initial


@pytest.mark.unit
def test_train_is_bitwise_reproducible(small_split):
    graph = BipartiteGraph.from_interactions(small_split.train, 30, 40)
    runs = []
    for _ in range(2):
        state = ModelState.create(30, 40, 8, num_layers=2, seed=4)
        result = train(state, graph, small_split, epochs=5, batch_size=100)
        runs.append((result.trace, state))
    (trace, state), (other_trace, other_state) = runs
    pd.testing.assert_frame_equal(trace, other_trace, check_exact=True)
    np.testing.assert_array_equal(state.user0, other_state.user0)
    np.testing.assert_array_equal(state.item0, other_state.item0)


@pytest.mark.unit
def test_train_with_frozen_items(small_split):
    graph = BipartiteGraph.from_interactions(small_split.train, 30, 40)
    state = ModelState.create(30, 40, 4, num_layers=1, seed=0, freeze_items=True)
    items = state.item0.copy()
    users = state.user0.copy()
    train(state, graph, small_split, epochs=2, batch_size=64)
    np.testing.assert_array_equal(state.item0, items)
    assert not np.array_equal(state.user0, users)


@pytest.mark.unit
def test_train_divergence_writes_checkpoint(small_split, monkeypatch):
    graph = BipartiteGraph.from_interactions(small_split.train, 30, 40)
    state = ModelState.create(30, 40, 4, num_layers=1, seed=0)
    monkeypatch.setattr(
        epim, "bpr_objective", lambda *args: (float("nan"), {})
    )
    with tempfile.TemporaryDirectory() as tmpdir:
        path = Path(tmpdir) / "model.npz"
        with pytest.raises(TrainingDivergedError) as excinfo:
            train(state, graph, small_split, epochs=3, checkpoint_path=path)
        assert excinfo.value.epoch == 0
        assert path.exists()
    np.testing.assert_array_equal(excinfo.value.checkpoint.user0, state.user0)


@pytest.mark.unit
def test_checkpoint_reads_back():
    state = ModelState.create(
        3, 4, 2, num_layers=5, seed=9, lambda_bpr=0.5, reg_target="layer0"
    )
    grads = {"user0": np.ones((3, 2)), "item0": np.ones((4, 2))}
    epim.adamw_step(state.optimizer, state.parameters(), grads)
    with tempfile.TemporaryDirectory() as tmpdir:
        path = save_checkpoint(state, Path(tmpdir) / "c.npz", fingerprint="abcd")
        loaded, fingerprint = load_checkpoint(path)
        with pytest.raises(FileNotFoundError):
            load_checkpoint(Path(tmpdir) / "absent.npz")
        broken = Path(tmpdir) / "broken.npz"
        np.savez(broken, user0=np.ones(2))
        with pytest.raises(ParseError):
            load_checkpoint(broken)
    assert fingerprint == "abcd"
    np.testing.assert_array_equal(loaded.user0, state.user0)
    np.testing.assert_array_equal(loaded.item0, state.item0)
    assert loaded.num_layers == 5
    assert loaded.seed == 9
    assert loaded.reg_target.value == "layer0"
    assert loaded.optimizer.step == 1
    np.testing.assert_array_equal(
        loaded.optimizer.m["user0"], state.optimizer.m["user0"]
    )
