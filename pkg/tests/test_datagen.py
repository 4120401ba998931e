import numpy as np
import pytest
from scipy.optimize import minimize

from botmix.datagen import (
    SynthConfig,
    add_adversarial_edges,
    count_human_bot_edges,
    generate_world,
    manipulate_features,
    mask_numeric_features,
)
from botmix.dataio import RELATIONS, save_dataset


def logistic_accuracy(train_x, train_y, test_x, test_y):
    """Independent linear-probe oracle: L2-regularized logistic regression."""
    x = np.hstack([train_x, np.ones((len(train_x), 1))])

    def loss(w):
        z = x @ w
        return np.logaddexp(0, -z[train_y == 1]).sum() + np.logaddexp(0, z[train_y == 0]).sum() + 1e-3 * w @ w

    w = minimize(loss, np.zeros(x.shape[1]), method="L-BFGS-B").x
    pred = (np.hstack([test_x, np.ones((len(test_x), 1))]) @ w) > 0
    return (pred == (test_y == 1)).mean()


# ---------------------------------------------------------------------------
# generate_world
# ---------------------------------------------------------------------------

def test_exact_class_counts():
    world = generate_world(SynthConfig(n_users=500, bot_fraction=0.4, embed_dim=4, seed=0))
    bots = sum(1 for u in world.users if u.label == 1)
    assert bots == 200
    assert sum(1 for u in world.users if u.label == 0) == 300


def test_generation_is_deterministic(tmp_path):
    cfg = SynthConfig(n_users=60, embed_dim=4, tweets_per_user=2, seed=21)
    a, b = generate_world(cfg), generate_world(cfg)
    files = {}
    for tag, world in (("a", a), ("b", b)):
        paths = [tmp_path / f"{tag}_{name}" for name in ("users", "edges", "splits")]
        save_dataset(world, *paths)
        files[tag] = b"".join(p.read_bytes() for p in paths)
    assert files["a"] == files["b"]


def test_metadata_separation_supports_linear_probe():
    world = generate_world(SynthConfig(n_users=500, metadata_separation=4.0, embed_dim=4, seed=0))
    train = world.labeled_indices("train")
    test = world.labeled_indices("test")
    x = np.stack([u.numeric for u in world.users])
    y = np.array([u.label for u in world.users])
    acc = logistic_accuracy(x[train], y[train], x[test], y[test])
    assert acc >= 0.95


def test_intra_density_exceeds_inter_on_every_seed():
    for seed in range(10):
        cfg = SynthConfig(
            n_users=120, intra_edge_prob=0.1, inter_edge_prob=0.01, embed_dim=4, seed=seed
        )
        world = generate_world(cfg)
        comm = np.array([u.community for u in world.users])
        same = comm[:, None] == comm[None, :]
        np.fill_diagonal(same, False)
        intra_pairs = same.sum()
        inter_pairs = (~same).sum() - len(comm)  # drop the diagonal
        intra_edges = inter_edges = 0
        for relation in RELATIONS:
            for src, dst in world.graph.edges[relation]:
                if comm[src] == comm[dst]:
                    intra_edges += 1
                else:
                    inter_edges += 1
        assert intra_edges / intra_pairs > inter_edges / inter_pairs


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(intra_edge_prob=0.01, inter_edge_prob=0.1).validate()
    with pytest.raises(ValueError):
        SynthConfig(n_users=10, bot_fraction=0.0).validate()
    with pytest.raises(ValueError):
        generate_world(SynthConfig(n_users=10, bot_fraction=0.01))


# ---------------------------------------------------------------------------
# manipulate_features
# ---------------------------------------------------------------------------

def world_for_manipulation():
    return generate_world(SynthConfig(n_users=200, embed_dim=4, tweets_per_user=2, seed=33))


def test_zero_fraction_is_identity():
    world = world_for_manipulation()
    assert manipulate_features(world, "metadata", 0.0, seed=0) is world
    assert add_adversarial_edges(world, 0.0, seed=0) is world


def test_full_metadata_manipulation_is_human_multiset():
    world = world_for_manipulation()
    out = manipulate_features(world, "metadata", 1.0, seed=1)
    human_rows = {
        tuple(np.concatenate([u.numeric, u.categorical]).tolist())
        for u in world.users
        if u.label == 0
    }
    for u in out.users:
        if u.label == 1 and u.split == "test":
            assert tuple(np.concatenate([u.numeric, u.categorical]).tolist()) in human_rows


def test_manipulation_counts_and_determinism():
    world = world_for_manipulation()
    test_bots = [i for i, u in enumerate(world.users) if u.label == 1 and u.split == "test"]
    out1 = manipulate_features(world, "text", 0.5, seed=7)
    out2 = manipulate_features(world, "text", 0.5, seed=7)
    changed1 = [
        i for i in test_bots
        if not np.array_equal(out1.users[i].description_embedding,
                              world.users[i].description_embedding)
    ]
    changed2 = [
        i for i in test_bots
        if not np.array_equal(out2.users[i].description_embedding,
                              world.users[i].description_embedding)
    ]
    assert len(changed1) == len(test_bots) // 2
    assert changed1 == changed2


def test_manipulation_never_touches_labels_or_other_users():
    world = world_for_manipulation()
    out = manipulate_features(world, "metadata", 1.0, seed=2)
    assert [u.label for u in out.users] == [u.label for u in world.users]
    assert [u.split for u in out.users] == [u.split for u in world.users]
    for old, new in zip(world.users, out.users):
        if not (old.label == 1 and old.split == "test"):
            np.testing.assert_array_equal(old.numeric, new.numeric)
        # the text modality is untouched either way
        np.testing.assert_array_equal(old.description_embedding, new.description_embedding)
    # the input dataset itself was never mutated
    assert world.users is not out.users


def test_manipulation_rejects_unknown_modality():
    with pytest.raises(ValueError, match="unknown modality"):
        manipulate_features(world_for_manipulation(), "graph", 0.5, seed=0)


# ---------------------------------------------------------------------------
# add_adversarial_edges
# ---------------------------------------------------------------------------

def test_adversarial_edges_double_the_human_bot_count():
    world = world_for_manipulation()
    base = count_human_bot_edges(world)
    assert base > 0
    out = add_adversarial_edges(world, 1.0, seed=3)
    assert count_human_bot_edges(out) == 2 * base
    # every added edge runs human -> test bot
    for relation in RELATIONS:
        old = {tuple(e) for e in world.graph.edges[relation].tolist()}
        for src, dst in out.graph.edges[relation]:
            if (src, dst) not in old:
                assert world.users[src].label == 0
                assert world.users[dst].label == 1 and world.users[dst].split == "test"


def test_adversarial_edges_deterministic():
    world = world_for_manipulation()
    a = add_adversarial_edges(world, 0.5, seed=11)
    b = add_adversarial_edges(world, 0.5, seed=11)
    for relation in RELATIONS:
        np.testing.assert_array_equal(a.graph.edges[relation], b.graph.edges[relation])


def test_adversarial_edges_require_existing_human_bot_edge():
    world = generate_world(
        SynthConfig(n_users=20, intra_edge_prob=0.0, inter_edge_prob=0.0, embed_dim=4, seed=4)
    )
    with pytest.raises(ValueError, match="human-bot"):
        add_adversarial_edges(world, 0.5, seed=0)


# ---------------------------------------------------------------------------
# feature masking
# ---------------------------------------------------------------------------

def test_mask_numeric_features_zeroes_requested_fraction():
    world = world_for_manipulation()
    out = mask_numeric_features(world, 0.5, seed=5)
    matrix = np.stack([u.numeric for u in out.users])
    original = np.stack([u.numeric for u in world.users])
    zeroed = (matrix == 0.0) & (original != 0.0)
    rate = zeroed.mean()
    assert 0.4 < rate < 0.6
    assert mask_numeric_features(world, 0.0, seed=5) is world
