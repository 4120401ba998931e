"""Dataset schema, on-disk formats, normalization, graph and split handling.

Users, edges, and splits live in three line-oriented text files so datasets
stay diffable and validate while streaming.  A loaded Dataset is immutable
by convention: every transformation returns a new Dataset, sharing the
arrays it did not change.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import tensor as tt

RELATIONS = ("follower", "following")
SPLITS = ("train", "valid", "test")

NUMERIC_FIELDS = 5   # followers, followings, statuses, active days, screen-name length
CATEGORICAL_FIELDS = 3  # protected, verified, default profile image

_EPS_STD = 1e-8


class DatasetFormatError(ValueError):
    """Raised for malformed or inconsistent dataset files."""


def _fmt(x):
    """Serialize a float with 17 significant digits (lossless round-trip)."""
    return format(float(x), ".17g")


def _fmt_vector(v):
    return ",".join(_fmt(x) for x in v)


def _parse_vector(text, where):
    if text == "":
        return np.zeros(0)
    try:
        return np.array([float(tok) for tok in text.split(",")], dtype=np.float64)
    except ValueError as exc:
        raise DatasetFormatError(f"{where}: bad float in vector: {exc}") from None


@dataclass
class UserRecord:
    id: str
    label: int | None            # 0 human, 1 bot, None unlabeled
    split: str
    numeric: np.ndarray          # 5 floats
    categorical: np.ndarray      # 3 binary flags
    description_embedding: np.ndarray
    tweet_embeddings: list[np.ndarray]
    community: int | None = None

    def validate(self, where="user"):
        if self.numeric.shape != (NUMERIC_FIELDS,):
            raise DatasetFormatError(f"{where}: expected {NUMERIC_FIELDS} numeric features")
        if self.categorical.shape != (CATEGORICAL_FIELDS,):
            raise DatasetFormatError(f"{where}: expected {CATEGORICAL_FIELDS} categorical flags")
        if not np.isin(self.categorical, (0.0, 1.0)).all():
            raise DatasetFormatError(f"{where}: categorical flags must be 0 or 1")
        if self.label not in (0, 1, None):
            raise DatasetFormatError(f"{where}: label must be 0, 1, or absent")
        if self.split not in SPLITS:
            raise DatasetFormatError(f"{where}: unknown split {self.split!r}")


class HeteroGraph:
    """Typed directed edges over dense node indices, one edge list per relation."""

    def __init__(self, n_nodes, edges):
        self.n_nodes = int(n_nodes)
        self.edges = {}
        for r in RELATIONS:
            e = np.asarray(edges.get(r, np.zeros((0, 2), dtype=np.int64)), dtype=np.int64)
            self.edges[r] = e.reshape(-1, 2)
        for r, e in self.edges.items():
            if e.size and (e.min() < 0 or e.max() >= self.n_nodes):
                raise DatasetFormatError(f"relation {r}: edge endpoint out of range")
        self._mean_adj = {}

    def n_edges(self, relation=None):
        if relation is not None:
            return len(self.edges[relation])
        return sum(len(e) for e in self.edges.values())

    def in_neighbors(self, relation, node):
        """Sources of relation edges terminating at `node`."""
        e = self.edges[relation]
        return e[e[:, 1] == node, 0]

    def mean_adjacency(self, relation):
        """Dense matrix A with A[i, j] = 1/|N_r(i)| for j in N_r(i).

        Cached per relation; suitable for desk-scale graphs where an
        n x n float matrix fits comfortably in memory.
        """
        cached = self._mean_adj.get(relation)
        if cached is not None:
            return cached
        a = np.zeros((self.n_nodes, self.n_nodes), dtype=np.float64)
        e = self.edges[relation]
        if len(e):
            np.add.at(a, (e[:, 1], e[:, 0]), 1.0)
            degree = a.sum(axis=1, keepdims=True)
            np.divide(a, degree, out=a, where=degree > 0)
        self._mean_adj[relation] = a
        return a

    def with_edges(self, edges):
        return HeteroGraph(self.n_nodes, edges)


@dataclass
class Dataset:
    users: list[UserRecord]
    graph: HeteroGraph
    normalization_stats: tuple[np.ndarray, np.ndarray] | None = None  # train (mean, std)

    @property
    def n_users(self):
        return len(self.users)

    def split_indices(self, split):
        return np.array([i for i, u in enumerate(self.users) if u.split == split], dtype=np.intp)

    def labeled_indices(self, split):
        return np.array(
            [i for i, u in enumerate(self.users) if u.split == split and u.label is not None],
            dtype=np.intp,
        )

    def labels(self, indices):
        return np.array([self.users[i].label for i in indices], dtype=np.intp)

    @property
    def embed_dim(self):
        return len(self.users[0].description_embedding) if self.users else 0

    def validate(self):
        if self.graph.n_nodes != len(self.users):
            raise DatasetFormatError("graph node count does not match user count")
        dim = self.embed_dim
        for u in self.users:
            u.validate(where=f"user {u.id!r}")
            if len(u.description_embedding) != dim:
                raise DatasetFormatError(f"user {u.id!r}: ragged description embedding")
            for t in u.tweet_embeddings:
                if len(t) != dim:
                    raise DatasetFormatError(f"user {u.id!r}: ragged tweet embedding")
        return self


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def _user_line(u):
    parts = [f"id={u.id}"]
    if u.label is not None:
        parts.append(f"label={u.label}")
    parts.append(f"split={u.split}")
    if u.community is not None:
        parts.append(f"community={u.community}")
    parts.append(f"numeric={_fmt_vector(u.numeric)}")
    parts.append("categorical=" + ",".join(str(int(x)) for x in u.categorical))
    parts.append(f"description={_fmt_vector(u.description_embedding)}")
    parts.append("tweets=" + "|".join(_fmt_vector(t) for t in u.tweet_embeddings))
    return " ".join(parts)


def _parse_user_line(line, where):
    fields = {}
    for token in line.split(" "):
        if "=" not in token:
            raise DatasetFormatError(f"{where}: malformed token {token!r}")
        key, value = token.split("=", 1)
        if key in fields:
            raise DatasetFormatError(f"{where}: duplicate key {key!r}")
        fields[key] = value
    known = {"id", "label", "split", "community", "numeric", "categorical",
             "description", "tweets"}
    unknown = set(fields) - known
    if unknown:
        raise DatasetFormatError(f"{where}: unknown keys {sorted(unknown)}")
    for required in ("id", "split", "numeric", "categorical", "description", "tweets"):
        if required not in fields:
            raise DatasetFormatError(f"{where}: missing key {required!r}")
    tweets_text = fields["tweets"]
    tweets = [] if tweets_text == "" else [
        _parse_vector(chunk, where) for chunk in tweets_text.split("|")
    ]
    try:
        label = int(fields["label"]) if "label" in fields else None
        community = int(fields["community"]) if "community" in fields else None
    except ValueError as exc:
        raise DatasetFormatError(f"{where}: bad integer field: {exc}") from None
    record = UserRecord(
        id=fields["id"],
        label=label,
        split=fields["split"],
        numeric=_parse_vector(fields["numeric"], where),
        categorical=_parse_vector(fields["categorical"], where),
        description_embedding=_parse_vector(fields["description"], where),
        tweet_embeddings=tweets,
        community=community,
    )
    record.validate(where)
    return record


def load_dataset(users_path, edges_path, splits_path=None):
    """Load and validate a dataset; ids resolve to dense indices in file order."""
    users = []
    index = {}
    with open(users_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            record = _parse_user_line(line, f"{users_path}:{lineno}")
            if record.id in index:
                raise DatasetFormatError(f"{users_path}:{lineno}: duplicate user id {record.id!r}")
            index[record.id] = len(users)
            users.append(record)

    edges = {r: [] for r in RELATIONS}
    with open(edges_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise DatasetFormatError(
                    f"{edges_path}:{lineno}: expected 'src<TAB>dst<TAB>relation'"
                )
            src, dst, relation = parts
            if relation not in RELATIONS:
                raise DatasetFormatError(f"{edges_path}:{lineno}: unknown relation {relation!r}")
            for uid in (src, dst):
                if uid not in index:
                    raise DatasetFormatError(f"{edges_path}:{lineno}: unknown user id {uid!r}")
            edges[relation].append((index[src], index[dst]))

    if splits_path is not None:
        with open(splits_path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise DatasetFormatError(f"{splits_path}:{lineno}: expected 'id<TAB>split'")
                uid, split = parts
                if uid not in index:
                    raise DatasetFormatError(f"{splits_path}:{lineno}: unknown user id {uid!r}")
                if split not in SPLITS:
                    raise DatasetFormatError(f"{splits_path}:{lineno}: unknown split {split!r}")
                users[index[uid]] = replace(users[index[uid]], split=split)

    graph = HeteroGraph(
        len(users),
        {r: np.array(e, dtype=np.int64).reshape(-1, 2) for r, e in edges.items()},
    )
    return Dataset(users=users, graph=graph).validate()


def save_dataset(dataset, users_path, edges_path, splits_path=None):
    """Write the three dataset files in canonical form."""
    with open(users_path, "w", encoding="utf-8") as fh:
        for u in dataset.users:
            if " " in u.id or "\t" in u.id:
                raise DatasetFormatError(f"user id {u.id!r} contains whitespace")
            fh.write(_user_line(u) + "\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for relation in RELATIONS:
            for src, dst in dataset.graph.edges[relation]:
                fh.write(f"{dataset.users[src].id}\t{dataset.users[dst].id}\t{relation}\n")
    if splits_path is not None:
        with open(splits_path, "w", encoding="utf-8") as fh:
            for u in dataset.users:
                fh.write(f"{u.id}\t{u.split}\n")


# ---------------------------------------------------------------------------
# normalization, features, splits
# ---------------------------------------------------------------------------

def zscore_normalize(dataset):
    """Z-score numeric features with train-split statistics (population std).

    Constant columns hit the 1e-8 std floor and map to zeros.  Returns a new
    Dataset carrying the (mean, std) stats used.
    """
    train = dataset.split_indices("train")
    if len(train) == 0:
        raise DatasetFormatError("zscore_normalize needs a non-empty train split")
    matrix = np.stack([u.numeric for u in dataset.users])
    mu = matrix[train].mean(axis=0)
    sigma = np.maximum(matrix[train].std(axis=0), _EPS_STD)
    normalized = (matrix - mu) / sigma
    users = [replace(u, numeric=normalized[i]) for i, u in enumerate(dataset.users)]
    return Dataset(users=users, graph=dataset.graph, normalization_stats=(mu, sigma))


def feature_arrays(dataset):
    """Raw per-source feature matrices: numeric, categorical, description, tweet mean.

    Users with no tweets contribute a zero vector for the tweet source.
    """
    numeric = np.stack([u.numeric for u in dataset.users])
    categorical = np.stack([u.categorical for u in dataset.users])
    description = np.stack([u.description_embedding for u in dataset.users])
    dim = dataset.embed_dim
    tweet_mean = np.zeros((dataset.n_users, dim))
    for i, u in enumerate(dataset.users):
        if u.tweet_embeddings:
            tweet_mean[i] = np.mean(u.tweet_embeddings, axis=0)
    return numeric, categorical, description, tweet_mean


def init_feature_projections(rng, embed_dim, per_source_dim):
    """Learned projections taking each feature source to per_source_dim."""
    params = {}
    for name, width in (
        ("numeric", NUMERIC_FIELDS),
        ("categorical", CATEGORICAL_FIELDS),
        ("description", embed_dim),
        ("tweet", embed_dim),
    ):
        params[f"feat.{name}.w"] = tt.glorot(rng, width, per_source_dim)
        params[f"feat.{name}.b"] = tt.zeros_param(per_source_dim)
    return params


def initial_node_features(dataset, params, per_source_dim):
    """Graph-encoder input: four projected feature sources, concatenated.

    Output width is 4 * per_source_dim per user.  Expects the dataset to be
    normalized already.
    """
    blocks = []
    for name, source in zip(
        ("numeric", "categorical", "description", "tweet"), feature_arrays(dataset)
    ):
        w = params[f"feat.{name}.w"]
        b = params[f"feat.{name}.b"]
        if w.shape != (source.shape[1], per_source_dim):
            raise ValueError(
                f"projection feat.{name}.w has shape {w.shape}, "
                f"expected {(source.shape[1], per_source_dim)}"
            )
        blocks.append(tt.add(tt.matmul(tt.Tensor(source), w), b))
    return tt.concat(blocks, axis=1)


def make_splits(dataset, train_fraction, seed):
    """Keep floor(fraction * |train|) uniformly chosen train labels for supervision.

    Dropped train users stay in the graph but become unlabeled; valid and
    test splits are untouched.
    """
    if not 0.0 <= train_fraction <= 1.0:
        raise ValueError(f"train fraction must be in [0, 1], got {train_fraction}")
    train = dataset.labeled_indices("train")
    keep_count = int(train_fraction * len(train))
    if keep_count == 0:
        raise ValueError("train fraction leaves no supervised users")
    if keep_count == len(train):
        return dataset
    rng = np.random.default_rng(seed)
    keep = set(rng.choice(train, size=keep_count, replace=False).tolist())
    train_set = set(train.tolist())
    users = [
        replace(u, label=None) if (i in train_set and i not in keep) else u
        for i, u in enumerate(dataset.users)
    ]
    return Dataset(users=users, graph=dataset.graph,
                   normalization_stats=dataset.normalization_stats)


def subsample_edges(dataset, fraction, seed):
    """Keep floor(fraction * E) uniformly chosen edges per relation."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"edge fraction must be in [0, 1], got {fraction}")
    if fraction == 1.0:
        return dataset
    rng = np.random.default_rng(seed)
    edges = {}
    for relation in RELATIONS:
        e = dataset.graph.edges[relation]
        if len(e):
            keep = np.sort(rng.choice(len(e), size=int(fraction * len(e)), replace=False))
            edges[relation] = e[keep]
        else:
            edges[relation] = e
    return Dataset(users=dataset.users, graph=dataset.graph.with_edges(edges),
                   normalization_stats=dataset.normalization_stats)
