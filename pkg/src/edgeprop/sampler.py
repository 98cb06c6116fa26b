"""Mini-batch iteration and layered receptive-field construction.

Neighbour samples are drawn with a counter-based keyed hash: every candidate
edge gets a pseudo-random priority derived from ``(seed, epoch, batch index,
layer, node, edge row)`` and the ``S`` lowest priorities win. This is uniform
sampling without replacement, and any single sampled list can be reproduced
without replaying an RNG stream.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List

import numpy as np

from .graph import Graph

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _splitmix(x: np.ndarray) -> np.ndarray:
    x = x + _GOLDEN
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def keyed_hash(*parts) -> np.ndarray:
    """Hash integers (scalars or broadcastable arrays) into uint64 values."""
    with np.errstate(over="ignore"):
        h = np.zeros(1, dtype=np.uint64)
        for p in parts:
            p = np.asarray(p).astype(np.int64).astype(np.uint64)
            h = _splitmix(h ^ p)
    return h


@dataclass
class SamplerConfig:
    batch_size: int = 32
    sample_size: int = 10
    mode: str = "uniform"
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.sample_size < 1:
            raise ValueError("sample_size must be >= 1")
        if self.mode not in ("full", "uniform"):
            raise ValueError(f"unknown sampling mode {self.mode!r}")


def batch_iterator(train_set, cfg: SamplerConfig, epoch: int) -> List[np.ndarray]:
    nodes = np.sort(np.asarray(train_set, dtype=np.int64))
    if nodes.size == 0:
        raise ValueError("empty training set")
    rng = np.random.default_rng([cfg.seed, epoch])
    nodes = nodes[rng.permutation(nodes.size)]
    return [nodes[i:i + cfg.batch_size] for i in range(0, nodes.size, cfg.batch_size)]


@dataclass
class FrontierLayer:
    """Sampled in-edges feeding layer ``k``.

    ``edge_dst`` indexes this layer's node set, ``edge_src`` and ``self_pos``
    index the node set one layer below.
    """

    nodes: np.ndarray
    self_pos: np.ndarray
    edge_dst: np.ndarray
    edge_src: np.ndarray
    edge_row: np.ndarray
    full_degree: np.ndarray
    sample_count: np.ndarray

    def sampled_in(self, v: int, below: np.ndarray) -> list[tuple[int, int]]:
        i = int(np.searchsorted(self.nodes, v))
        if i >= self.nodes.size or self.nodes[i] != v:
            raise KeyError(v)
        sel = self.edge_dst == i
        return list(zip(below[self.edge_src[sel]].tolist(), self.edge_row[sel].tolist()))


@dataclass
class Frontier:
    """``node_sets[k]`` is B^k (sorted ids); ``layers[k-1]`` feeds layer k."""

    batch: np.ndarray
    batch_pos: np.ndarray
    node_sets: List[np.ndarray]
    layers: List[FrontierLayer] = field(default_factory=list)
    mode: str = "full"

    @property
    def depth(self) -> int:
        return len(self.layers)

    def sampled_in(self, k: int, v: int) -> list[tuple[int, int]]:
        return self.layers[k - 1].sampled_in(v, self.node_sets[k - 1])


def _gather_in_edges(graph: Graph, nodes: np.ndarray):
    starts = graph.in_ptr[nodes]
    deg = graph.in_ptr[nodes + 1] - starts
    total = int(deg.sum())
    group = np.repeat(np.arange(nodes.size), deg)
    offs = np.arange(total) - np.repeat(np.cumsum(deg) - deg, deg)
    pos = np.repeat(starts, deg) + offs
    return group, pos, deg


def build_frontiers(
    graph: Graph,
    batch,
    K: int,
    cfg: SamplerConfig,
    epoch: int = 0,
    batch_index: int = 0,
) -> Frontier:
    batch = np.asarray(batch, dtype=np.int64).reshape(-1)
    if batch.size and (batch.min() < 0 or batch.max() >= graph.num_nodes):
        raise ValueError("batch contains node ids outside the graph")
    if K < 0:
        raise ValueError("K must be non-negative")
    top = np.unique(batch)
    sets: List[np.ndarray] = [top]
    raw = []
    for k in range(K, 0, -1):
        cur = sets[0]
        group, pos, deg = _gather_in_edges(graph, cur)
        if cfg.mode == "uniform" and np.any(deg > cfg.sample_size):
            big = deg[group] > cfg.sample_size
            prio = keyed_hash(cfg.seed, epoch, batch_index, k, cur[group], graph.in_edge[pos])
            prio = np.where(big, prio, np.uint64(0))
            order = np.lexsort((pos, prio, group))
            first = np.r_[0, np.cumsum(deg)[:-1]]
            rank = np.empty_like(order)
            rank[order] = np.arange(order.size) - np.repeat(first, deg)
            keep = rank < cfg.sample_size
            group, pos = group[keep], pos[keep]
        counts = np.bincount(group, minlength=cur.size)
        src = graph.in_src[pos]
        below = np.union1d(cur, src)
        raw.append((cur, group, src, graph.in_edge[pos], deg, counts))
        sets.insert(0, below)
    layers = []
    for k in range(1, K + 1):
        cur, group, src, rows, deg, counts = raw[K - k]
        below = sets[k - 1]
        layers.append(FrontierLayer(
            nodes=cur,
            self_pos=np.searchsorted(below, cur),
            edge_dst=group,
            edge_src=np.searchsorted(below, src),
            edge_row=rows,
            full_degree=deg,
            sample_count=counts,
        ))
    return Frontier(batch, np.searchsorted(top, batch), sets, layers, cfg.mode)


def full_frontier(graph: Graph, batch, K: int) -> Frontier:
    return build_frontiers(graph, batch, K, SamplerConfig(mode="full"))
