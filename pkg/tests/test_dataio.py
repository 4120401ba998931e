import numpy as np
import pytest

from botmix import dataio
from botmix import tensor as tt
from botmix.datagen import SynthConfig, generate_world
from botmix.dataio import (
    Dataset,
    DatasetFormatError,
    HeteroGraph,
    UserRecord,
    load_dataset,
    make_splits,
    save_dataset,
    subsample_edges,
    zscore_normalize,
)


def tiny_dataset():
    def user(uid, label, split, base):
        return UserRecord(
            id=uid,
            label=label,
            split=split,
            numeric=np.array([base, base + 1, base + 2, base + 3, base + 4], dtype=float),
            categorical=np.array([1.0, 0.0, 1.0]),
            description_embedding=np.array([0.5 * base, -base]),
            tweet_embeddings=[np.array([base, base]), np.array([base + 1, base + 1])],
        )

    users = [user("u0", 0, "train", 1.0), user("u1", 1, "train", 2.0), user("u2", 0, "test", 3.0)]
    users[2].tweet_embeddings = []  # exercise the zero-tweets path
    graph = HeteroGraph(3, {"follower": np.array([[0, 1], [2, 1]]), "following": np.array([[1, 0]])})
    return Dataset(users=users, graph=graph).validate()


# ---------------------------------------------------------------------------
# load / save
# ---------------------------------------------------------------------------

def test_load_counts_match_files(tmp_path):
    d = tiny_dataset()
    users, edges, splits = tmp_path / "users.txt", tmp_path / "edges.tsv", tmp_path / "splits.tsv"
    save_dataset(d, users, edges, splits)
    loaded = load_dataset(users, edges, splits)
    assert loaded.n_users == 3
    assert loaded.graph.n_edges("follower") == 2
    assert loaded.graph.n_edges("following") == 1
    assert [u.split for u in loaded.users] == ["train", "train", "test"]


def test_load_reports_unknown_edge_id_with_line(tmp_path):
    d = tiny_dataset()
    users, edges = tmp_path / "users.txt", tmp_path / "edges.tsv"
    save_dataset(d, users, edges)
    edges.write_text(edges.read_text() + "u99\tu0\tfollower\n")
    with pytest.raises(DatasetFormatError, match=r"edges.tsv:4.*u99"):
        load_dataset(users, edges)


def test_load_rejects_unknown_relation(tmp_path):
    d = tiny_dataset()
    users, edges = tmp_path / "users.txt", tmp_path / "edges.tsv"
    save_dataset(d, users, edges)
    edges.write_text("u0\tu1\tretweet\n")
    with pytest.raises(DatasetFormatError, match="retweet"):
        load_dataset(users, edges)


def test_load_rejects_ragged_embeddings(tmp_path):
    d = tiny_dataset()
    d.users[1].description_embedding = np.array([1.0, 2.0, 3.0])
    users, edges = tmp_path / "users.txt", tmp_path / "edges.tsv"
    save_dataset(d, users, edges)
    with pytest.raises(DatasetFormatError, match="ragged"):
        load_dataset(users, edges)


def test_load_rejects_malformed_line(tmp_path):
    d = tiny_dataset()
    users, edges = tmp_path / "users.txt", tmp_path / "edges.tsv"
    save_dataset(d, users, edges)
    users.write_text(users.read_text() + "id=u9 split=train nonsense\n")
    with pytest.raises(DatasetFormatError, match="users.txt:4"):
        load_dataset(users, edges)


def test_round_trip_is_byte_identical(tmp_path):
    world = generate_world(SynthConfig(n_users=40, embed_dim=4, tweets_per_user=2, seed=3))
    first = {name: tmp_path / f"a_{name}" for name in ("users", "edges", "splits")}
    second = {name: tmp_path / f"b_{name}" for name in ("users", "edges", "splits")}
    save_dataset(world, first["users"], first["edges"], first["splits"])
    loaded = load_dataset(first["users"], first["edges"], first["splits"])
    save_dataset(loaded, second["users"], second["edges"], second["splits"])
    for name in first:
        assert first[name].read_bytes() == second[name].read_bytes()


# ---------------------------------------------------------------------------
# normalization
# ---------------------------------------------------------------------------

def test_zscore_matches_population_formula():
    d = tiny_dataset()
    # first numeric column over the train split is [1, 2]; all three users share scale
    normalized = zscore_normalize(d)
    mu, sigma = normalized.normalization_stats
    assert mu[0] == pytest.approx(1.5)
    assert sigma[0] == pytest.approx(0.5)
    col = [u.numeric[0] for u in normalized.users]
    assert col[0] == pytest.approx(-1.0)
    assert col[1] == pytest.approx(1.0)


def test_zscore_three_point_column():
    users = []
    for i, value in enumerate([1.0, 2.0, 3.0]):
        users.append(
            UserRecord(
                id=f"u{i}",
                label=0,
                split="train",
                numeric=np.array([value, 0.0, 0.0, 0.0, 0.0]),
                categorical=np.zeros(3),
                description_embedding=np.array([0.0]),
                tweet_embeddings=[],
            )
        )
    d = Dataset(users=users, graph=HeteroGraph(3, {}))
    out = zscore_normalize(d)
    col = np.array([u.numeric[0] for u in out.users])
    np.testing.assert_allclose(col, [-1.224745, 0.0, 1.224745], atol=1e-6)


def test_zscore_constant_column_maps_to_zero():
    d = tiny_dataset()
    normalized = zscore_normalize(d)
    # categorical untouched, constant numeric handled via the std floor
    cat = np.stack([u.categorical for u in normalized.users])
    np.testing.assert_array_equal(cat, np.stack([u.categorical for u in d.users]))
    constant = Dataset(
        users=[
            UserRecord(
                id=f"u{i}",
                label=0,
                split="train",
                numeric=np.full(5, 7.0),
                categorical=np.zeros(3),
                description_embedding=np.array([0.0]),
                tweet_embeddings=[],
            )
            for i in range(3)
        ],
        graph=HeteroGraph(3, {}),
    )
    out = zscore_normalize(constant)
    np.testing.assert_array_equal(np.stack([u.numeric for u in out.users]), np.zeros((3, 5)))


def test_zscore_is_statistically_idempotent():
    world = generate_world(SynthConfig(n_users=80, embed_dim=4, seed=5))
    twice = zscore_normalize(zscore_normalize(world))
    train = twice.split_indices("train")
    matrix = np.stack([twice.users[i].numeric for i in train])
    np.testing.assert_allclose(matrix.mean(axis=0), 0.0, atol=1e-12)
    np.testing.assert_allclose(matrix.std(axis=0), 1.0, atol=1e-9)


def test_stats_depend_only_on_train_split():
    world = generate_world(SynthConfig(n_users=80, embed_dim=4, seed=6))
    base = zscore_normalize(world)
    from dataclasses import replace

    users = [
        replace(u, numeric=u.numeric + 100.0) if u.split == "test" else u
        for u in world.users
    ]
    perturbed = zscore_normalize(Dataset(users=users, graph=world.graph))
    np.testing.assert_array_equal(base.normalization_stats[0], perturbed.normalization_stats[0])
    np.testing.assert_array_equal(base.normalization_stats[1], perturbed.normalization_stats[1])


# ---------------------------------------------------------------------------
# graph structure
# ---------------------------------------------------------------------------

def test_in_neighbors_match_edge_lists():
    world = generate_world(SynthConfig(n_users=50, embed_dim=4, seed=7))
    for relation in dataio.RELATIONS:
        edges = world.graph.edges[relation]
        for node in range(0, 50, 7):
            expected = sorted(int(s) for s, t in edges if t == node)
            got = sorted(world.graph.in_neighbors(relation, node).tolist())
            assert got == expected


def test_mean_adjacency_rows_average_in_neighbors():
    graph = HeteroGraph(4, {"follower": np.array([[0, 2], [1, 2], [3, 0]])})
    a = graph.mean_adjacency("follower")
    np.testing.assert_allclose(a[2], [0.5, 0.5, 0.0, 0.0])
    np.testing.assert_allclose(a[0], [0.0, 0.0, 0.0, 1.0])
    np.testing.assert_allclose(a[1], np.zeros(4))


# ---------------------------------------------------------------------------
# initial node features
# ---------------------------------------------------------------------------

def test_initial_features_width():
    world = zscore_normalize(generate_world(SynthConfig(n_users=30, embed_dim=4, seed=8)))
    rng = np.random.default_rng(0)
    params = dataio.init_feature_projections(rng, world.embed_dim, 8)
    out = dataio.initial_node_features(world, params, 8)
    assert out.shape == (30, 32)


def test_initial_features_zero_weights_tile_biases():
    world = zscore_normalize(generate_world(SynthConfig(n_users=10, embed_dim=4, seed=9)))
    rng = np.random.default_rng(0)
    params = dataio.init_feature_projections(rng, world.embed_dim, 3)
    for name, p in params.items():
        if name.endswith(".w"):
            p.data[...] = 0.0
        else:
            p.data[...] = np.arange(3, dtype=float)
    out = dataio.initial_node_features(world, params, 3)
    np.testing.assert_array_equal(out.data, np.tile(np.arange(3.0), (10, 4)))


def test_initial_features_zero_tweet_block():
    d = zscore_normalize(tiny_dataset())
    rng = np.random.default_rng(1)
    params = dataio.init_feature_projections(rng, d.embed_dim, 2)
    params["feat.tweet.b"].data[...] = 0.0
    out = dataio.initial_node_features(d, params, 2)
    # user u2 has no tweets: its tweet block is exactly the (zeroed) bias
    np.testing.assert_array_equal(out.data[2, 6:8], [0.0, 0.0])
    assert np.any(out.data[0, 6:8] != 0.0)


# ---------------------------------------------------------------------------
# splits and edge subsampling
# ---------------------------------------------------------------------------

def test_make_splits_full_fraction_is_identity():
    world = generate_world(SynthConfig(n_users=50, embed_dim=4, seed=10))
    assert make_splits(world, 1.0, seed=0) is world


def test_make_splits_counts_and_determinism():
    world = generate_world(SynthConfig(n_users=100, embed_dim=4, seed=11))
    n_train = len(world.labeled_indices("train"))
    a = make_splits(world, 0.1, seed=5)
    b = make_splits(world, 0.1, seed=5)
    kept_a = a.labeled_indices("train")
    assert len(kept_a) == int(0.1 * n_train)
    np.testing.assert_array_equal(kept_a, b.labeled_indices("train"))
    # valid/test untouched
    np.testing.assert_array_equal(a.labeled_indices("test"), world.labeled_indices("test"))


def test_make_splits_rejects_empty_supervision():
    world = generate_world(SynthConfig(n_users=50, embed_dim=4, seed=12))
    with pytest.raises(ValueError):
        make_splits(world, 0.0, seed=0)


def test_subsample_edges_counts_and_determinism():
    world = generate_world(SynthConfig(n_users=80, embed_dim=4, seed=13))
    half = subsample_edges(world, 0.5, seed=3)
    for relation in dataio.RELATIONS:
        assert half.graph.n_edges(relation) == int(0.5 * world.graph.n_edges(relation))
    again = subsample_edges(world, 0.5, seed=3)
    for relation in dataio.RELATIONS:
        np.testing.assert_array_equal(half.graph.edges[relation], again.graph.edges[relation])
