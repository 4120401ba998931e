"""Synthetic multi-community social worlds with bots, plus adversarial edits.

Worlds are pure functions of their config: user labels, communities,
metadata, text embeddings, and a stochastic-block-model follow graph are
all drawn from a single seeded generator in a fixed order.  Class signal is
planted as a fixed-distance offset between class means; each community gets
its own base location plus a mild community-specific tilt of the class
direction, so community-specialized models have something real to learn
while a single linear probe still separates the classes.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .dataio import (
    CATEGORICAL_FIELDS,
    NUMERIC_FIELDS,
    RELATIONS,
    Dataset,
    HeteroGraph,
    UserRecord,
)

# fixed design constants (not worth config knobs at desk scale)
_COMMUNITY_SCALE = 2.0       # spread of community base centers
_DIRECTION_TILT = 0.25       # community-specific tilt of the class direction
_FLAG_CLASS_SHIFT = np.array([-0.15, -0.25, 0.30])  # bots: less protected/verified, more default image
_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)  # train / valid / test, stratified by label


@dataclass(frozen=True)
class SynthConfig:
    n_users: int = 500
    bot_fraction: float = 0.4
    n_communities: int = 2
    metadata_separation: float = 4.0
    text_separation: float = 4.0
    embed_dim: int = 16
    tweets_per_user: int = 5
    intra_edge_prob: float = 0.05
    inter_edge_prob: float = 0.005
    bot_bot_affinity: float = 2.0
    seed: int = 0

    def validate(self):
        if self.n_users < 2:
            raise ValueError("n_users must be at least 2")
        if self.n_communities < 1:
            raise ValueError("n_communities must be at least 1")
        for name in ("bot_fraction", "intra_edge_prob", "inter_edge_prob"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.inter_edge_prob > self.intra_edge_prob:
            raise ValueError("inter_edge_prob must not exceed intra_edge_prob")
        for name in ("metadata_separation", "text_separation", "bot_bot_affinity"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.embed_dim < 1 or self.tweets_per_user < 1:
            raise ValueError("embed_dim and tweets_per_user must be positive")
        n_bots = int(round(self.n_users * self.bot_fraction))
        if n_bots == 0 or n_bots == self.n_users:
            raise ValueError("bot_fraction leaves one class empty")
        return self


def _class_geometry(rng, dim, n_communities, separation):
    """Community centers plus per-community unit class directions.

    Centers are orthogonalized against their community's class direction so
    the planted class margin is exactly `separation` regardless of where
    the community sits.
    """
    base = rng.normal(size=dim)
    base /= np.linalg.norm(base)
    directions = np.empty((n_communities, dim))
    centers = np.empty((n_communities, dim))
    for c in range(n_communities):
        tilt = rng.normal(size=dim)
        tilt /= np.linalg.norm(tilt)
        d = base + _DIRECTION_TILT * tilt
        d /= np.linalg.norm(d)
        center = rng.normal(scale=_COMMUNITY_SCALE, size=dim)
        center -= (center @ d) * d
        directions[c] = d
        centers[c] = center
    return centers, directions, separation


def _planted_means(centers, directions, separation, communities, labels):
    offsets = (labels[:, None] - 0.5) * separation
    return centers[communities] + offsets * directions[communities]


def _assign_splits(rng, labels):
    """Stratified train/valid/test assignment (60/20/20) per class."""
    split = np.empty(len(labels), dtype=object)
    for cls in (0, 1):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(len(members))]
        n_train = int(round(_SPLIT_FRACTIONS[0] * len(members)))
        n_valid = int(round(_SPLIT_FRACTIONS[1] * len(members)))
        if len(members) >= 3:
            n_train = max(1, min(n_train, len(members) - 2))
            n_valid = max(1, n_valid)
        for pos, idx in enumerate(members):
            if pos < n_train:
                split[idx] = "train"
            elif pos < n_train + n_valid:
                split[idx] = "valid"
            else:
                split[idx] = "test"
    # tiny worlds may leave a bucket empty; backfill from train
    for name in ("valid", "test"):
        if not (split == name).any():
            split[np.flatnonzero(split == "train")[-1]] = name
    return split


def generate_world(config):
    """Build a labeled multi-community Dataset; deterministic given the config."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    n = config.n_users
    n_bots = int(round(n * config.bot_fraction))

    labels = np.zeros(n, dtype=np.int64)
    labels[rng.permutation(n)[:n_bots]] = 1
    communities = rng.integers(config.n_communities, size=n)

    meta_centers, meta_dirs, meta_sep = _class_geometry(
        rng, NUMERIC_FIELDS, config.n_communities, config.metadata_separation
    )
    numeric = _planted_means(meta_centers, meta_dirs, meta_sep, communities, labels)
    numeric = numeric + rng.normal(size=(n, NUMERIC_FIELDS))

    flag_base = rng.uniform(0.1, 0.5, size=(config.n_communities, CATEGORICAL_FIELDS))
    flag_p = np.clip(flag_base[communities] + labels[:, None] * _FLAG_CLASS_SHIFT, 0.02, 0.98)
    categorical = (rng.random((n, CATEGORICAL_FIELDS)) < flag_p).astype(np.float64)

    text_centers, text_dirs, text_sep = _class_geometry(
        rng, config.embed_dim, config.n_communities, config.text_separation
    )
    text_means = _planted_means(text_centers, text_dirs, text_sep, communities, labels)
    descriptions = text_means + rng.normal(size=(n, config.embed_dim))
    tweets = text_means[:, None, :] + rng.normal(
        size=(n, config.tweets_per_user, config.embed_dim)
    )

    same_comm = communities[:, None] == communities[None, :]
    bot_pair = (labels[:, None] == 1) & (labels[None, :] == 1)
    prob = np.where(same_comm, config.intra_edge_prob, config.inter_edge_prob)
    prob = np.clip(np.where(bot_pair, prob * config.bot_bot_affinity, prob), 0.0, 1.0)
    np.fill_diagonal(prob, 0.0)
    edges = {}
    for relation in RELATIONS:
        drawn = rng.random((n, n)) < prob
        edges[relation] = np.argwhere(drawn).astype(np.int64)

    splits = _assign_splits(rng, labels)

    width = len(str(n - 1))
    users = [
        UserRecord(
            id=f"u{i:0{width}d}",
            label=int(labels[i]),
            split=str(splits[i]),
            numeric=numeric[i],
            categorical=categorical[i],
            description_embedding=descriptions[i],
            tweet_embeddings=[tweets[i, j] for j in range(config.tweets_per_user)],
            community=int(communities[i]),
        )
        for i in range(n)
    ]
    return Dataset(users=users, graph=HeteroGraph(n, edges)).validate()


# ---------------------------------------------------------------------------
# adversarial manipulations (test split only; inputs are never mutated)
# ---------------------------------------------------------------------------

MODALITIES = ("metadata", "text")


def manipulate_features(dataset, modality, fraction, seed):
    """Overwrite a fraction of test-split bots' features with human features.

    Donors are sampled from all humans uniformly with replacement; labels,
    edges, and the other modality stay untouched.  `modality` is one of
    {"metadata", "text"}; text replaces both the description and the tweets.
    """
    if modality not in MODALITIES:
        raise ValueError(f"unknown modality {modality!r}, expected one of {MODALITIES}")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    humans = [i for i, u in enumerate(dataset.users) if u.label == 0]
    if not humans:
        raise ValueError("dataset contains no humans to copy features from")
    test_bots = [i for i, u in enumerate(dataset.users) if u.label == 1 and u.split == "test"]
    count = int(fraction * len(test_bots))
    if count == 0:
        return dataset
    rng = np.random.default_rng(seed)
    targets = rng.choice(test_bots, size=count, replace=False)
    donors = rng.choice(humans, size=count, replace=True)

    users = list(dataset.users)
    for target, donor in zip(targets, donors):
        source = dataset.users[donor]
        if modality == "metadata":
            users[target] = replace(
                users[target],
                numeric=source.numeric.copy(),
                categorical=source.categorical.copy(),
            )
        else:
            users[target] = replace(
                users[target],
                description_embedding=source.description_embedding.copy(),
                tweet_embeddings=[t.copy() for t in source.tweet_embeddings],
            )
    return Dataset(users=users, graph=dataset.graph,
                   normalization_stats=dataset.normalization_stats)


def count_human_bot_edges(dataset):
    labels = np.array([-1 if u.label is None else u.label for u in dataset.users])
    total = 0
    for relation in RELATIONS:
        e = dataset.graph.edges[relation]
        if len(e):
            src, dst = labels[e[:, 0]], labels[e[:, 1]]
            total += int(((src == 0) & (dst == 1)).sum() + ((src == 1) & (dst == 0)).sum())
    return total


def add_adversarial_edges(dataset, fraction, seed):
    """Add floor(fraction * E_hb) human -> test-bot edges with random relation.

    E_hb is the current number of human-bot edges (either direction, any
    relation).  Duplicate (src, dst, relation) triples are skipped by
    resampling, so the new edges are all distinct from existing ones.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    base = count_human_bot_edges(dataset)
    if base == 0:
        raise ValueError("no existing human-bot edge; manipulation base undefined")
    count = int(fraction * base)
    if count == 0:
        return dataset
    humans = [i for i, u in enumerate(dataset.users) if u.label == 0]
    test_bots = [i for i, u in enumerate(dataset.users) if u.label == 1 and u.split == "test"]
    if not humans or not test_bots:
        raise ValueError("need at least one human and one test-split bot")

    existing = {
        (relation, int(src), int(dst))
        for relation in RELATIONS
        for src, dst in dataset.graph.edges[relation]
    }
    rng = np.random.default_rng(seed)
    added = {r: [] for r in RELATIONS}
    placed = 0
    while placed < count:
        src = humans[rng.integers(len(humans))]
        dst = test_bots[rng.integers(len(test_bots))]
        relation = RELATIONS[rng.integers(len(RELATIONS))]
        key = (relation, src, dst)
        if key in existing:
            continue
        existing.add(key)
        added[relation].append((src, dst))
        placed += 1

    edges = {}
    for relation in RELATIONS:
        old = dataset.graph.edges[relation]
        new = np.array(added[relation], dtype=np.int64).reshape(-1, 2)
        edges[relation] = np.concatenate([old, new], axis=0) if len(new) else old
    return Dataset(users=dataset.users, graph=dataset.graph.with_edges(edges),
                   normalization_stats=dataset.normalization_stats)


def mask_numeric_features(dataset, fraction, seed):
    """Zero a random fraction of the numeric metadata entries across all users.

    Supports degraded-feature studies; masking applies to whatever values
    the dataset currently holds.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0:
        return dataset
    rng = np.random.default_rng(seed)
    mask = rng.random((dataset.n_users, NUMERIC_FIELDS)) < fraction
    users = [
        replace(u, numeric=np.where(mask[i], 0.0, u.numeric))
        for i, u in enumerate(dataset.users)
    ]
    return Dataset(users=users, graph=dataset.graph,
                   normalization_stats=dataset.normalization_stats)
