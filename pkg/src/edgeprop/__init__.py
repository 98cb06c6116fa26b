"""EdgeProp: node classification on attributed transaction graphs by
propagating edge features into node embeddings."""
from .estimator import EdgeAugmenter, EdgePropClassifier, TransactionCollapser
from .graph import (
    DatasetSplit,
    EdgeTable,
    Graph,
    NodeTable,
    TransactionRecord,
    augment_edges,
    build_graph,
    collapse_multiedges,
    split_labels,
)
from .model import HistoryCache, ModelConfig, ModelParams, forward_cv, forward_exact
from .sampler import SamplerConfig, build_frontiers
from .synth import SynthConfig, generate
from .trainer import TrainConfig, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "DatasetSplit",
    "EdgeAugmenter",
    "EdgePropClassifier",
    "EdgeTable",
    "Graph",
    "HistoryCache",
    "ModelConfig",
    "ModelParams",
    "NodeTable",
    "SamplerConfig",
    "SynthConfig",
    "TrainConfig",
    "TransactionCollapser",
    "TransactionRecord",
    "augment_edges",
    "build_frontiers",
    "build_graph",
    "collapse_multiedges",
    "evaluate",
    "forward_cv",
    "forward_exact",
    "generate",
    "split_labels",
    "train",
]
