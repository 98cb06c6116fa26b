"""scikit-learn compatible front end.

``EdgePropClassifier`` takes a prepared :class:`~edgeprop.graph.Graph` as
``X``; labels are read from the graph, and ``nodes`` selects which vertices to
predict. ``TransactionCollapser`` and ``EdgeAugmenter`` wrap the edge
preprocessing steps as stateless transformers so they compose in a
``Pipeline``.
"""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .graph import DatasetSplit, EdgeTable, Graph, augment_edges, collapse_multiedges, split_labels
from .metrics import MetricsReport
from .model import ModelParams
from .numeric import log_softmax
from .trainer import TrainConfig, evaluate, predict_logits, train


def check_graph(X) -> Graph:
    if not isinstance(X, Graph):
        raise TypeError(f"expected an edgeprop Graph, got {type(X).__name__}")
    return X


def check_nodes(graph: Graph, nodes) -> np.ndarray:
    if nodes is None:
        return np.arange(graph.num_nodes)
    nodes = np.asarray(nodes)
    if nodes.ndim != 1 or not np.issubdtype(nodes.dtype, np.integer):
        raise ValueError("nodes must be a 1-d array of integer node ids")
    if nodes.size and (nodes.min() < 0 or nodes.max() >= graph.num_nodes):
        raise ValueError("node id out of range")
    return nodes.astype(np.int64)


class EdgePropClassifier(ClassifierMixin, BaseEstimator):
    """Node classifier propagating edge features into node embeddings.

    ``n_layers=0`` gives the head-only (logistic regression) baseline and
    ``use_edge_features=False`` the GraphSAGE-mean baseline.
    """

    def __init__(
        self,
        n_layers: int = 1,
        d_embed: int = 32,
        aggregator: str = "mean",
        use_node_features: bool = True,
        use_edge_features: bool = True,
        cv_enabled: bool = True,
        lr: float = 2e-4,
        batch_size: int = 32,
        sample_size: int = 10,
        patience: int = 100,
        max_epochs: int = 2000,
        eval_every: int = 1,
        random_state: int = 0,
    ):
        self.n_layers = n_layers
        self.d_embed = d_embed
        self.aggregator = aggregator
        self.use_node_features = use_node_features
        self.use_edge_features = use_edge_features
        self.cv_enabled = cv_enabled
        self.lr = lr
        self.batch_size = batch_size
        self.sample_size = sample_size
        self.patience = patience
        self.max_epochs = max_epochs
        self.eval_every = eval_every
        self.random_state = random_state

    def _train_config(self, split_seed: int) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, sample_size=self.sample_size, K=self.n_layers,
            d_embed=self.d_embed, patience=self.patience, max_epochs=self.max_epochs,
            eval_every=self.eval_every, seed=self.random_state, split_seed=split_seed,
            aggregator=self.aggregator, use_node_features=self.use_node_features,
            use_edge_features=self.use_edge_features, cv_enabled=self.cv_enabled,
        )

    def fit(self, X, y=None, split: Optional[DatasetSplit] = None):
        """Train on ``split`` (default: stratified 70/10/20 split of the
        graph's labeled nodes). ``y`` is ignored; labels live in the graph."""
        graph = check_graph(X)
        if split is None:
            split = split_labels(graph.nodes, self.random_state)
        result = train(graph, split, self._train_config(split.seed))
        self.params_: ModelParams = result.params
        self.model_config_ = result.config
        self.log_ = result.log
        self.best_epoch_ = result.state.best_epoch
        self.split_ = split
        self.classes_ = np.arange(graph.num_classes)
        self.n_features_in_ = graph.node_dim
        return self

    def decision_function(self, X, nodes=None) -> np.ndarray:
        check_is_fitted(self, "params_")
        graph = check_graph(X)
        if graph.node_dim != self.n_features_in_:
            raise ValueError(f"graph has {graph.node_dim} node features, model was fitted with {self.n_features_in_}")
        return predict_logits(graph, self.params_, self.model_config_, check_nodes(graph, nodes))

    def predict_proba(self, X, nodes=None) -> np.ndarray:
        return np.exp(log_softmax(self.decision_function(X, nodes)))

    def predict(self, X, nodes=None) -> np.ndarray:
        return self.decision_function(X, nodes).argmax(axis=1)

    def score(self, X, y=None, nodes=None) -> float:
        graph = check_graph(X)
        nodes = check_nodes(graph, nodes)
        y = graph.nodes.labels[nodes] if y is None else np.asarray(y)
        return float(np.mean(self.predict(graph, nodes) == y))

    def report(self, X, nodes) -> MetricsReport:
        check_is_fitted(self, "params_")
        return evaluate(self.params_, check_graph(X), nodes, self.model_config_)


class TransactionCollapser(TransformerMixin, BaseEstimator):
    """Transactions ``(src, dst, timestamp, value)`` to one featured edge per
    ordered pair."""

    def __init__(self, min_count: int = 1, min_total_value: float = 0.0):
        self.min_count = min_count
        self.min_total_value = min_total_value

    def fit(self, X, y=None):
        return self

    def transform(self, X) -> EdgeTable:
        return collapse_multiedges(X, self.min_count, self.min_total_value)


class EdgeAugmenter(TransformerMixin, BaseEstimator):
    def fit(self, X, y=None):
        return self

    def transform(self, X: EdgeTable) -> EdgeTable:
        return augment_edges(X)
