"""Modal encoders: metadata MLP, text MLP, and a relational graph encoder.

Each encoder maps every user to a hidden-size vector; the three share one
hidden size so the fusion layer can treat them as interchangeable tokens.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tt
from .dataio import (
    CATEGORICAL_FIELDS,
    NUMERIC_FIELDS,
    RELATIONS,
    feature_arrays,
    init_feature_projections,
    initial_node_features,
)


@dataclass
class ModalEmbedding:
    modality: str               # metadata | text | graph
    vectors: tt.Tensor          # n_users x hidden


@dataclass
class GraphEncoderConfig:
    hidden: int
    n_layers: int = 2
    relations: tuple = RELATIONS

    def __post_init__(self):
        if self.hidden % 4 != 0:
            raise ValueError("hidden size must be divisible by 4 (four feature sources)")
        if self.n_layers < 1:
            raise ValueError("graph encoder needs at least one layer")


def mlp2(x, params, prefix, dropout=0.0, rng=None, training=False):
    """Two-layer MLP with leaky-ReLU and dropout between the layers."""
    h = tt.leaky_relu(tt.add(tt.matmul(x, params[f"{prefix}.l1.w"]), params[f"{prefix}.l1.b"]))
    h = tt.dropout(h, dropout, rng=rng, training=training)
    return tt.add(tt.matmul(h, params[f"{prefix}.l2.w"]), params[f"{prefix}.l2.b"])


def init_mlp2(rng, prefix, n_in, hidden, n_out):
    return {
        f"{prefix}.l1.w": tt.glorot(rng, n_in, hidden),
        f"{prefix}.l1.b": tt.zeros_param(hidden),
        f"{prefix}.l2.w": tt.glorot(rng, hidden, n_out),
        f"{prefix}.l2.b": tt.zeros_param(n_out),
    }


# ---------------------------------------------------------------------------
# metadata
# ---------------------------------------------------------------------------

def init_metadata_encoder(rng, hidden):
    return init_mlp2(rng, "meta", NUMERIC_FIELDS + CATEGORICAL_FIELDS, hidden, hidden)


def encode_metadata(dataset, params, dropout=0.0, rng=None, training=False):
    """Two-layer MLP over the 8 normalized profile features."""
    numeric, categorical, _, _ = feature_arrays(dataset)
    x = tt.Tensor(np.hstack([numeric, categorical]))
    out = mlp2(x, params, "meta", dropout=dropout, rng=rng, training=training)
    return ModalEmbedding("metadata", out)


# ---------------------------------------------------------------------------
# text
# ---------------------------------------------------------------------------

def init_text_encoder(rng, embed_dim, hidden):
    return init_mlp2(rng, "text", 2 * embed_dim, hidden, hidden)


def encode_text(dataset, params, dropout=0.0, rng=None, training=False):
    """Two-layer MLP over [description embedding, mean tweet embedding].

    Per-tweet vectors are stored already token-averaged; the mean over a
    user's tweets happens here, and users with no tweets contribute zeros.
    """
    _, _, description, tweet_mean = feature_arrays(dataset)
    x = tt.Tensor(np.hstack([description, tweet_mean]))
    out = mlp2(x, params, "text", dropout=dropout, rng=rng, training=training)
    return ModalEmbedding("text", out)


# ---------------------------------------------------------------------------
# graph
# ---------------------------------------------------------------------------

def init_graph_encoder(rng, embed_dim, cfg):
    params = init_feature_projections(rng, embed_dim, cfg.hidden // 4)
    for layer in range(cfg.n_layers):
        params[f"graph.layer{layer}.self.w"] = tt.glorot(rng, cfg.hidden, cfg.hidden)
        for relation in cfg.relations:
            params[f"graph.layer{layer}.{relation}.w"] = tt.glorot(rng, cfg.hidden, cfg.hidden)
    return params


def rgcn_layer(h, graph, params, layer, relations=RELATIONS, activation_enabled=True):
    """One relational message-passing round.

    Each node's update is its self-transform plus, per relation, the mean of
    its in-neighbors' transformed states; empty neighborhoods contribute
    nothing.  Activation is leaky-ReLU when enabled, identity otherwise.
    """
    out = tt.matmul(h, params[f"graph.layer{layer}.self.w"])
    for relation in relations:
        adjacency = tt.Tensor(graph.mean_adjacency(relation))
        messages = tt.matmul(adjacency, tt.matmul(h, params[f"graph.layer{layer}.{relation}.w"]))
        out = tt.add(out, messages)
    return tt.leaky_relu(out) if activation_enabled else out


def encode_graph(dataset, cfg, params, dropout=0.0, rng=None, training=False):
    """Project the four feature sources, then run the configured GNN layers."""
    h = initial_node_features(dataset, params, cfg.hidden // 4)
    for layer in range(cfg.n_layers):
        h = rgcn_layer(h, dataset.graph, params, layer, relations=cfg.relations)
        if layer < cfg.n_layers - 1:
            h = tt.dropout(h, dropout, rng=rng, training=training)
    return ModalEmbedding("graph", h)
