"""Small random instances and the end-to-end finite-difference check."""
from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from .graph import EdgeTable, Graph, NodeTable, augment_edges, build_graph
from .model import ModelConfig, ModelParams, backward, forward, input_dims
from .numeric import grad_check
from .sampler import full_frontier
from .trainer import minibatch_loss


def random_graph(
    rng: np.random.Generator,
    n: int,
    node_dim: int = 3,
    edge_dim: int = 2,
    num_classes: int = 3,
    edge_prob: float = 0.25,
    augment: bool = False,
) -> Graph:
    """Erdos-Renyi style directed graph with Gaussian node/edge features."""
    mask = rng.random((n, n)) < edge_prob
    np.fill_diagonal(mask, False)
    src, dst = np.nonzero(mask)
    edges = EdgeTable(src, dst, rng.normal(size=(src.size, edge_dim)))
    if augment:
        edges = augment_edges(edges) if len(edges) else EdgeTable.empty(2 * edge_dim)
    labels = rng.integers(0, num_classes, size=n)
    return build_graph(NodeTable(rng.normal(size=(n, node_dim)), labels, num_classes), edges)


def random_params(rng: np.random.Generator, graph: Graph, cfg: ModelConfig) -> ModelParams:
    """Glorot weights with small random biases so relu units are not all at
    their kinks."""
    params = ModelParams.init(cfg, *input_dims(graph, cfg), seed=int(rng.integers(2**31)))
    arrays = params.arrays()
    for k, a in arrays.items():
        if k.endswith("b1") or k.endswith("b2") or k == "head.b":
            a += 0.1 * rng.normal(size=a.shape)
    return ModelParams.from_arrays(arrays)


def relu_margin(graph: Graph, params: ModelParams, cfg: ModelConfig, nodes=None) -> float:
    """Smallest ``|x|`` over every relu input of the full forward pass.

    Central differences with step ``h`` are only meaningful when this exceeds
    the change ``h`` can cause, i.e. no unit sits on a kink.
    """
    nodes = np.arange(graph.num_nodes) if nodes is None else np.asarray(nodes)
    _, cache = forward(graph, full_frontier(graph, nodes, cfg.K), params, cfg)
    inputs = []
    for lc in cache.layers:
        inputs += [lc.phi_cache.pre, lc.phi_out, lc.rho_cache.pre]
        if not lc.last:
            inputs.append(lc.rho_out)
    return min((float(np.abs(x).min()) for x in inputs if x.size), default=np.inf)


def smooth_params(
    rng: np.random.Generator,
    graph: Graph,
    cfg: ModelConfig,
    margin: float,
    tries: int = 100,
) -> tuple[ModelParams, int]:
    """Draw :func:`random_params` until every relu input is at least
    ``margin`` away from zero. Returns the parameters and the redraw count."""
    for redraws in range(tries):
        params = random_params(rng, graph, cfg)
        if relu_margin(graph, params, cfg) >= margin:
            return params, redraws
    raise RuntimeError(f"no kink-free parameters after {tries} draws")


def composed_gradcheck(
    graph: Graph,
    params: ModelParams,
    cfg: ModelConfig,
    nodes: Optional[np.ndarray] = None,
    h: float = 1e-5,
    perturb: float = 0.0,
) -> float:
    """Max relative error of the backprop gradient of the mean cross-entropy
    over ``nodes`` against central differences. ``perturb`` adds a constant to
    every analytic gradient entry (negative control)."""
    nodes = np.arange(graph.num_nodes) if nodes is None else np.asarray(nodes)
    labels = graph.nodes.labels[nodes]
    fr = full_frontier(graph, nodes, cfg.K)

    def loss(arrays: Dict[str, np.ndarray]) -> float:
        emb, _ = forward(graph, fr, ModelParams.from_arrays(arrays), cfg)
        return minibatch_loss(emb.logits, labels)[0]

    emb, cache = forward(graph, fr, params, cfg)
    _, dlogits = minibatch_loss(emb.logits, labels)
    analytic = backward(params, cache, dlogits).arrays()
    if perturb:
        analytic = {k: a + perturb for k, a in analytic.items()}
    return grad_check(loss, params.arrays(), analytic, h)
