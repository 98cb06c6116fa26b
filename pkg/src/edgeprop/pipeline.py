"""Raw tables to a model-ready graph: collapse, filter, augment, split,
standardize."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .graph import (
    DatasetSplit,
    EdgeTable,
    Graph,
    NodeTable,
    Standardizer,
    augment_edges,
    build_graph,
    collapse_multiedges,
    drop_isolated,
    split_labels,
)


@dataclass
class Prepared:
    graph: Graph
    split: DatasetSplit
    standardizer: Standardizer
    node_ids: np.ndarray  # original row of each kept node


def prepare(
    nodes: NodeTable,
    edges: EdgeTable,
    split_seed: int,
    augment: bool = True,
    standardize: bool = True,
    remove_isolated: bool = False,
    standardizer: Optional[Standardizer] = None,
) -> Prepared:
    """Build the graph the model sees from collapsed edges.

    Standardization statistics come from the training nodes and from all
    edges after augmentation, unless a fitted ``standardizer`` is passed in.
    """
    kept = np.arange(nodes.count)
    if remove_isolated:
        nodes, edges, kept = drop_isolated(nodes, edges)
    if augment:
        edges = augment_edges(edges)
    split = split_labels(nodes, split_seed)
    if standardizer is None:
        standardizer = (Standardizer.fit(nodes, edges, split.train) if standardize
                        else Standardizer.identity(nodes.dim, edges.dim))
    nodes, edges = standardizer.transform(nodes, edges)
    return Prepared(build_graph(nodes, edges), split, standardizer, kept)


def prepare_transactions(
    nodes: NodeTable,
    transactions,
    split_seed: int,
    min_count: int = 1,
    min_total_value: float = 0.0,
    **kwargs,
) -> Prepared:
    edges = collapse_multiedges(transactions, min_count, min_total_value, num_nodes=nodes.count)
    return prepare(nodes, edges, split_seed, **kwargs)
