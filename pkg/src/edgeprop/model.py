"""EdgeProp message passing.

Layer ``k`` computes, for every node ``v`` of its frontier set,

    m_uv = relu(phi_k(z_u || e_uv))                 per in-edge u -> v
    a_v  = mean_u m_uv   (or sum)                   empty -> zero vector
    z_v  = rho_k(z_v || a_v), relu on all but the last layer

and a linear head maps the last-layer embedding to class logits. Three
estimators of ``a_v`` share this code: exact (full neighbourhoods), plain
neighbour sampling, and the control-variate estimator backed by a per-edge
history of messages.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np
import scipy.sparse as sp

from .graph import Graph
from .numeric import (
    MLPCache,
    MLPParams,
    NumericError,
    glorot_uniform,
    init_mlp,
    mlp_backward,
    mlp_forward,
    relu,
    relu_grad,
)
from .sampler import Frontier

AGGREGATORS = ("mean", "sum")
SURROGATE_DIM = 3


@dataclass
class ModelConfig:
    K: int = 1
    d_embed: int = 32
    aggregator: str = "mean"
    use_node_features: bool = True
    use_edge_features: bool = True
    augmented: bool = True
    cv_enabled: bool = True
    num_classes: int = 2

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0 (0 is the head-only baseline)")
        if self.d_embed < 1:
            raise ValueError("d_embed must be >= 1")
        if self.aggregator not in AGGREGATORS:
            raise ValueError(f"aggregator must be one of {AGGREGATORS}")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")


class HistoryMismatch(RuntimeError):
    """History cache no longer matches the graph or model; reset it."""


def input_features(graph: Graph, cfg: ModelConfig, nodes: Optional[np.ndarray] = None) -> np.ndarray:
    """Layer-0 embeddings: node features, or ``[1, log1p(in), log1p(out)]``."""
    if nodes is None:
        nodes = np.arange(graph.num_nodes)
    if cfg.use_node_features:
        return graph.nodes.features[nodes]
    return np.stack([
        np.ones(nodes.size),
        np.log1p(graph.in_degree[nodes]),
        np.log1p(graph.out_degree[nodes]),
    ], axis=1)


def input_dims(graph: Graph, cfg: ModelConfig) -> tuple[int, int]:
    d0 = graph.node_dim if cfg.use_node_features else SURROGATE_DIM
    pe = graph.edge_dim if cfg.use_edge_features else 0
    return d0, pe


@dataclass
class ModelParams:
    phi: List[MLPParams]
    rho: List[MLPParams]
    head_W: np.ndarray
    head_b: np.ndarray

    @property
    def K(self) -> int:
        return len(self.phi)

    def arrays(self) -> Dict[str, np.ndarray]:
        out = {}
        for k, (phi, rho) in enumerate(zip(self.phi, self.rho), start=1):
            for name, a in phi.arrays().items():
                out[f"phi{k}.{name}"] = a
            for name, a in rho.arrays().items():
                out[f"rho{k}.{name}"] = a
        out["head.W"] = self.head_W
        out["head.b"] = self.head_b
        return out

    @classmethod
    def from_arrays(cls, arrays: Dict[str, np.ndarray]) -> "ModelParams":
        K = sum(1 for k in arrays if k.startswith("phi") and k.endswith(".W1"))

        def mlp(prefix):
            return MLPParams(*(np.asarray(arrays[f"{prefix}.{n}"], dtype=np.float64)
                               for n in ("W1", "b1", "W2", "b2")))

        return cls(
            [mlp(f"phi{k}") for k in range(1, K + 1)],
            [mlp(f"rho{k}") for k in range(1, K + 1)],
            np.asarray(arrays["head.W"], dtype=np.float64),
            np.asarray(arrays["head.b"], dtype=np.float64),
        )

    def copy(self) -> "ModelParams":
        return ModelParams.from_arrays({k: a.copy() for k, a in self.arrays().items()})

    @classmethod
    def init(cls, cfg: ModelConfig, node_dim: int, edge_dim: int, seed: int) -> "ModelParams":
        """Glorot-uniform weights, zero biases. ``node_dim``/``edge_dim`` are
        the model's input widths (see :func:`input_dims`)."""
        rng = np.random.default_rng(seed)
        d = cfg.d_embed
        phi, rho = [], []
        d_prev = node_dim
        for _ in range(cfg.K):
            phi.append(init_mlp(rng, d_prev + edge_dim, d, d))
            rho.append(init_mlp(rng, d_prev + d, d, d))
            d_prev = d
        return cls(phi, rho, glorot_uniform(rng, d_prev, cfg.num_classes), np.zeros(cfg.num_classes))

    def check(self, cfg: ModelConfig, node_dim: int, edge_dim: int) -> None:
        d_prev = node_dim
        if self.K != cfg.K:
            raise ValueError(f"parameters have {self.K} layers, config says {cfg.K}")
        for k in range(self.K):
            if self.phi[k].d_in != d_prev + edge_dim or self.rho[k].d_in != d_prev + self.phi[k].d_out:
                raise ValueError(f"layer {k + 1} input widths do not match the graph (F/P mismatch)")
            d_prev = self.rho[k].d_out
        if self.head_W.shape != (d_prev, cfg.num_classes):
            raise ValueError("head shape does not match embedding width / class count")


def zeros_like_params(p: ModelParams) -> ModelParams:
    return ModelParams.from_arrays({k: np.zeros_like(a) for k, a in p.arrays().items()})


# single-vector building blocks

def phi_message(z_u, e_uv, phi: MLPParams) -> np.ndarray:
    x = np.concatenate([np.atleast_1d(np.asarray(z_u, float)), np.atleast_1d(np.asarray(e_uv, float))])
    if x.size != phi.d_in:
        raise ValueError(f"message input has {x.size} entries, phi expects {phi.d_in}")
    y, _ = mlp_forward(phi, x[None, :])
    return relu(y[0])


def aggregate(messages, mode: str = "mean", dim: Optional[int] = None) -> np.ndarray:
    msgs = [np.asarray(m, dtype=np.float64) for m in messages]
    if mode not in AGGREGATORS:
        raise ValueError(f"unknown aggregator {mode!r}")
    if not msgs:
        if dim is None:
            raise ValueError("need dim to aggregate an empty multiset")
        return np.zeros(dim)
    if len({m.shape for m in msgs}) != 1:
        raise ValueError("messages have mixed dimensions")
    total = np.sum(msgs, axis=0)
    return total / len(msgs) if mode == "mean" else total


def node_update(z_prev, agg, rho: MLPParams, last_layer: bool) -> np.ndarray:
    x = np.concatenate([np.asarray(z_prev, float), np.asarray(agg, float)])
    if x.size != rho.d_in:
        raise ValueError(f"update input has {x.size} entries, rho expects {rho.d_in}")
    y, _ = mlp_forward(rho, x[None, :])
    return y[0] if last_layer else relu(y[0])


@dataclass
class HistoryCache:
    """Last computed message per edge and layer, plus per-node sums of them."""

    edge: List[np.ndarray]
    node_sum: List[np.ndarray]

    @classmethod
    def zeros(cls, graph: Graph, cfg: ModelConfig) -> "HistoryCache":
        return cls([np.zeros((graph.num_edges, cfg.d_embed)) for _ in range(cfg.K)],
                   [np.zeros((graph.num_nodes, cfg.d_embed)) for _ in range(cfg.K)])

    def check(self, graph: Graph, cfg: ModelConfig) -> None:
        ok = len(self.edge) == cfg.K and all(
            h.shape == (graph.num_edges, cfg.d_embed) and s.shape == (graph.num_nodes, cfg.d_embed)
            for h, s in zip(self.edge, self.node_sum))
        if not ok:
            raise HistoryMismatch("history cache shape does not match graph/config; reset the cache")

    def recomputed_sums(self, graph: Graph) -> List[np.ndarray]:
        out = []
        for h in self.edge:
            s = np.zeros((graph.num_nodes, h.shape[1]))
            np.add.at(s, graph.edges.dst, h)
            out.append(s)
        return out

    def snapshot(self) -> "HistoryCache":
        return HistoryCache([h.copy() for h in self.edge], [s.copy() for s in self.node_sum])


@dataclass
class EmbeddingBatch:
    node_sets: List[np.ndarray]
    embeddings: List[np.ndarray]
    aggregates: List[np.ndarray]
    logits: np.ndarray
    batch: np.ndarray

    def embedding(self, k: int, v: int) -> np.ndarray:
        i = int(np.searchsorted(self.node_sets[k], v))
        if i >= self.node_sets[k].size or self.node_sets[k][i] != v:
            raise KeyError(f"node {v} is not in layer {k}")
        return self.embeddings[k][i]


@dataclass
class _LayerCache:
    A: sp.csr_matrix
    src_mat: sp.csr_matrix
    phi_cache: MLPCache
    phi_out: np.ndarray
    rho_cache: MLPCache
    rho_out: np.ndarray
    last: bool
    d_prev: int


@dataclass
class ForwardCache:
    frontier: Frontier
    layers: List[_LayerCache]
    top: np.ndarray
    estimator: str


def _edge_weights(layer, aggregator: str) -> tuple[np.ndarray, np.ndarray]:
    """Per-sampled-edge weights and per-node weights applied to history sums."""
    cnt = layer.sample_count.astype(np.float64)
    deg = layer.full_degree.astype(np.float64)
    safe_cnt = np.where(cnt > 0, cnt, 1.0)
    safe_deg = np.where(deg > 0, deg, 1.0)
    if aggregator == "mean":
        node_w = np.where(cnt > 0, 1.0 / safe_cnt, 0.0)
        hist_w = np.where(deg > 0, 1.0 / safe_deg, 0.0)
    else:
        # sum: rescale sampled sums by deg/cnt so they estimate the full sum
        node_w = np.where(cnt > 0, deg / safe_cnt, 0.0)
        hist_w = np.ones_like(deg)
    return node_w[layer.edge_dst], hist_w


def forward(
    graph: Graph,
    frontier: Frontier,
    params: ModelParams,
    cfg: ModelConfig,
    history: Optional[HistoryCache] = None,
    update_history: bool = True,
) -> tuple[EmbeddingBatch, ForwardCache]:
    """Run the frontier through all layers.

    With ``history`` the control-variate estimator is used (and the history is
    refreshed in place for the sampled edges unless ``update_history`` is
    false); otherwise sampled edges are averaged directly, which is exact when
    the frontier holds full neighbourhoods.
    """
    if frontier.depth != params.K or params.K != cfg.K:
        raise ValueError(f"frontier depth {frontier.depth} / params K {params.K} / config K {cfg.K} disagree")
    if history is not None:
        history.check(graph, cfg)
    d0, pe = input_dims(graph, cfg)
    E = graph.edges.features
    Z = [input_features(graph, cfg, frontier.node_sets[0])]
    aggs: List[np.ndarray] = []
    caches: List[_LayerCache] = []
    for k in range(1, params.K + 1):
        L = frontier.layers[k - 1]
        Zp = Z[-1]
        below = frontier.node_sets[k - 1]
        ne = L.edge_row.size
        zsrc = Zp[L.edge_src]
        x_phi = np.hstack([zsrc, E[L.edge_row]]) if pe else zsrc
        phi_out, phi_cache = mlp_forward(params.phi[k - 1], x_phi)
        msg = relu(phi_out)
        w, hist_w = _edge_weights(L, cfg.aggregator)
        A = sp.csr_matrix((w, (L.edge_dst, np.arange(ne))), shape=(L.nodes.size, ne))
        agg = np.asarray(A @ msg)
        if history is not None:
            h_old = history.edge[k - 1][L.edge_row]
            corr = hist_w[:, None] * history.node_sum[k - 1][L.nodes] - np.asarray(A @ h_old)
            # fully sampled neighbourhoods: the correction cancels algebraically
            corr[L.sample_count == L.full_degree] = 0.0
            agg = agg + corr
            if update_history:
                np.add.at(history.node_sum[k - 1], L.nodes[L.edge_dst], msg - h_old)
                history.edge[k - 1][L.edge_row] = msg
        last = k == params.K
        x_rho = np.hstack([Zp[L.self_pos], agg])
        rho_out, rho_cache = mlp_forward(params.rho[k - 1], x_rho)
        Z.append(rho_out if last else relu(rho_out))
        aggs.append(agg)
        src_mat = sp.csr_matrix((np.ones(ne), (L.edge_src, np.arange(ne))), shape=(below.size, ne))
        caches.append(_LayerCache(A, src_mat, phi_cache, phi_out, rho_cache, rho_out, last, Zp.shape[1]))
    top = Z[-1][frontier.batch_pos]
    logits = top @ params.head_W + params.head_b
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    emb = EmbeddingBatch(frontier.node_sets, Z, aggs, logits, frontier.batch)
    est = "cv" if history is not None else frontier.mode
    return emb, ForwardCache(frontier, caches, top, est)


def forward_exact(graph: Graph, frontier: Frontier, params: ModelParams, cfg: ModelConfig) -> EmbeddingBatch:
    if frontier.mode != "full":
        raise ValueError("forward_exact needs a full-neighbourhood frontier")
    return forward(graph, frontier, params, cfg)[0]


def forward_cv(
    graph: Graph,
    frontier: Frontier,
    params: ModelParams,
    cfg: ModelConfig,
    history: HistoryCache,
    update_history: bool = True,
) -> tuple[EmbeddingBatch, ForwardCache]:
    return forward(graph, frontier, params, cfg, history=history, update_history=update_history)


def backward(params: ModelParams, cache: ForwardCache, dlogits: np.ndarray) -> ModelParams:
    """Gradients of ``sum(dlogits * logits)`` for the forward pass in ``cache``.

    History terms of the control-variate estimator enter as constants.
    """
    dlogits = np.asarray(dlogits, dtype=np.float64)
    fr = cache.frontier
    if dlogits.shape != (fr.batch.size, params.head_b.size):
        raise ValueError(f"dlogits has shape {dlogits.shape}, expected {(fr.batch.size, params.head_b.size)}")
    if len(cache.layers) != params.K:
        raise ValueError("cache does not belong to these parameters")
    d_head_W = cache.top.T @ dlogits
    d_head_b = dlogits.sum(axis=0)
    dtop = dlogits @ params.head_W.T
    dZ = np.zeros((fr.node_sets[-1].size, dtop.shape[1]))
    np.add.at(dZ, fr.batch_pos, dtop)
    g_phi: List[MLPParams] = [None] * params.K
    g_rho: List[MLPParams] = [None] * params.K
    for k in range(params.K, 0, -1):
        lc = cache.layers[k - 1]
        L = fr.layers[k - 1]
        d_out = dZ if lc.last else relu_grad(lc.rho_out, dZ)
        dx_rho, g_rho[k - 1] = mlp_backward(params.rho[k - 1], lc.rho_cache, d_out)
        d_prev = lc.d_prev
        dZp = np.zeros((fr.node_sets[k - 1].size, d_prev))
        dZp[L.self_pos] += dx_rho[:, :d_prev]
        d_msg = np.asarray(lc.A.T @ dx_rho[:, d_prev:])
        dx_phi, g_phi[k - 1] = mlp_backward(params.phi[k - 1], lc.phi_cache, relu_grad(lc.phi_out, d_msg))
        dZp += np.asarray(lc.src_mat @ dx_phi[:, :d_prev])
        dZ = dZp
    return ModelParams(g_phi, g_rho, d_head_W, d_head_b)
