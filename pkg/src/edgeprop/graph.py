"""Directed attributed graphs: transaction collapse, edge augmentation,
in/out adjacency indices and stratified label splits."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

EDGE_FEATURE_NAMES = (
    "count",
    "total_value",
    "mean_value",
    "std_value",
    "min_value",
    "max_value",
    "mean_interarrival",
    "std_interarrival",
)
UNLABELED = -1


class GraphError(ValueError):
    """Malformed graph input (bad ids, shapes, negative amounts...)."""


class FeatureShapeError(GraphError):
    """Feature widths differ from what a fitted transform or model expects."""


@dataclass(frozen=True)
class TransactionRecord:
    src: int
    dst: int
    timestamp: int
    value: float


@dataclass
class NodeTable:
    """Node features ``(N, F)`` and labels, ``-1`` meaning unlabeled."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise GraphError("node features must be a 2-d array")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise GraphError("need exactly one label entry per node")
        if np.any(self.labels < UNLABELED) or np.any(self.labels >= self.num_classes):
            raise GraphError(f"labels must lie in 0..{self.num_classes - 1} or be unlabeled")

    @property
    def count(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def labeled(self) -> np.ndarray:
        return np.flatnonzero(self.labels >= 0)


@dataclass
class EdgeTable:
    src: np.ndarray
    dst: np.ndarray
    features: np.ndarray

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64).reshape(-1)
        self.dst = np.asarray(self.dst, dtype=np.int64).reshape(-1)
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2 or self.features.shape[0] != self.src.shape[0]:
            raise GraphError("edge features must be an (|edges|, P) array")
        if self.src.shape != self.dst.shape:
            raise GraphError("src and dst must have equal length")

    def __len__(self) -> int:
        return self.src.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @classmethod
    def empty(cls, dim: int) -> "EdgeTable":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), np.zeros((0, dim)))

    def has_duplicates(self) -> bool:
        if len(self) == 0:
            return False
        pairs = np.stack([self.src, self.dst], axis=1)
        return np.unique(pairs, axis=0).shape[0] != len(self)


def _pair_key(src: np.ndarray, dst: np.ndarray, n: int) -> np.ndarray:
    return src.astype(np.int64) * np.int64(n) + dst.astype(np.int64)


def collapse_multiedges(
    records,
    min_count: int = 1,
    min_total_value: float = 0.0,
    num_nodes: Optional[int] = None,
) -> EdgeTable:
    """Collapse transactions into one edge per ordered pair with 8 statistics.

    ``records`` is either a sequence of :class:`TransactionRecord` or a tuple of
    four parallel arrays ``(src, dst, timestamp, value)``. Pairs with fewer
    than ``min_count`` transactions or a total value below ``min_total_value``
    are dropped. Edges come out sorted by ``(src, dst)``.
    """
    if isinstance(records, tuple) and len(records) == 4:
        src, dst, ts, val = (np.asarray(a) for a in records)
    else:
        records = list(records)
        src = np.array([r.src for r in records], dtype=np.int64)
        dst = np.array([r.dst for r in records], dtype=np.int64)
        ts = np.array([r.timestamp for r in records], dtype=np.float64)
        val = np.array([r.value for r in records], dtype=np.float64)
    if src.size == 0:
        raise GraphError("no transaction records")
    if min_count < 0 or min_total_value < 0:
        raise GraphError("thresholds must be non-negative")
    src = src.astype(np.int64)
    dst = dst.astype(np.int64)
    ts = ts.astype(np.float64)
    val = val.astype(np.float64)
    for name, arr in (("value", val), ("timestamp", ts)):
        bad = np.flatnonzero(~(arr >= 0))
        if bad.size:
            raise GraphError(f"record {int(bad[0])}: negative or missing {name}")
    ids = np.concatenate([src, dst])
    bad = np.flatnonzero(ids < 0)
    if num_nodes is not None:
        bad = np.flatnonzero((ids < 0) | (ids >= num_nodes))
    if bad.size:
        i = int(bad[0]) % src.size
        raise GraphError(f"record {i}: unknown node id")

    n = int(max(src.max(), dst.max())) + 1 if num_nodes is None else num_nodes
    key = _pair_key(src, dst, n)
    order = np.lexsort((ts, key))
    key, ts, val = key[order], ts[order], val[order]
    starts = np.flatnonzero(np.r_[True, key[1:] != key[:-1]])
    counts = np.diff(np.r_[starts, key.size])

    total = np.add.reduceat(val, starts)
    mean = total / counts
    sq = np.add.reduceat((val - np.repeat(mean, counts)) ** 2, starts)
    std = np.sqrt(sq / counts)
    vmin = np.minimum.reduceat(val, starts)
    vmax = np.maximum.reduceat(val, starts)

    gaps = np.diff(ts)
    same = np.r_[key[1:] == key[:-1]]
    gaps = np.where(same, gaps, 0.0)
    ngaps = counts - 1
    # reduceat over the gap array: gap i sits between sorted records i and i+1
    gap_sum = np.add.reduceat(np.r_[gaps, 0.0], starts) if key.size > 1 else np.zeros(starts.size)
    gap_mean = np.divide(gap_sum, ngaps, out=np.zeros_like(gap_sum), where=ngaps > 0)
    gdev = np.r_[gaps, 0.0] - np.repeat(gap_mean, counts)
    gdev = np.where(np.r_[same, False], gdev, 0.0)
    gap_sq = np.add.reduceat(gdev**2, starts) if key.size > 1 else np.zeros(starts.size)
    gap_std = np.sqrt(np.divide(gap_sq, ngaps, out=np.zeros_like(gap_sq), where=ngaps > 0))

    feats = np.stack([counts.astype(np.float64), total, mean, std, vmin, vmax, gap_mean, gap_std], axis=1)
    keep = (counts >= min_count) & (total >= min_total_value)
    ukey = key[starts][keep]
    return EdgeTable(ukey // n, ukey % n, feats[keep])


def augment_edges(edges: EdgeTable) -> EdgeTable:
    """Make every connected pair bidirectional with ``(e_forward || e_reverse)``
    features, zero-padding the missing direction."""
    if edges.has_duplicates():
        raise GraphError("augment_edges needs collapsed input (duplicate ordered pairs found)")
    p = edges.dim
    if len(edges) == 0:
        return EdgeTable.empty(2 * p)
    n = int(max(edges.src.max(), edges.dst.max())) + 1
    fwd_key = _pair_key(edges.src, edges.dst, n)
    rev_key = _pair_key(edges.dst, edges.src, n)
    all_key = np.unique(np.concatenate([fwd_key, rev_key]))
    # row of each key in the original table, -1 if absent
    lookup = np.full(all_key.size, -1, dtype=np.int64)
    lookup[np.searchsorted(all_key, fwd_key)] = np.arange(len(edges))
    src, dst = all_key // n, all_key % n
    rev_pos = np.searchsorted(all_key, _pair_key(dst, src, n))
    feats = np.zeros((all_key.size, 2 * p))
    have = lookup >= 0
    feats[have, :p] = edges.features[lookup[have]]
    rev_row = lookup[rev_pos]
    have_rev = rev_row >= 0
    feats[have_rev, p:] = edges.features[rev_row[have_rev]]
    return EdgeTable(src, dst, feats)


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable directed graph with CSR-style in- and out-indices.

    ``in_ptr[v]:in_ptr[v+1]`` slices ``in_src`` / ``in_edge`` to the edges
    ``u -> v`` sorted by ``u``; the out-index is the mirror image.
    """

    nodes: NodeTable
    edges: EdgeTable
    in_ptr: np.ndarray
    in_src: np.ndarray
    in_edge: np.ndarray
    out_ptr: np.ndarray
    out_dst: np.ndarray
    out_edge: np.ndarray

    @property
    def num_nodes(self) -> int:
        return self.nodes.count

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    @property
    def node_dim(self) -> int:
        return self.nodes.dim

    @property
    def edge_dim(self) -> int:
        return self.edges.dim

    @property
    def num_classes(self) -> int:
        return self.nodes.num_classes

    @property
    def in_degree(self) -> np.ndarray:
        return np.diff(self.in_ptr)

    @property
    def out_degree(self) -> np.ndarray:
        return np.diff(self.out_ptr)

    def in_neighbors(self, v: int) -> list[tuple[int, int]]:
        s, e = self.in_ptr[v], self.in_ptr[v + 1]
        return list(zip(self.in_src[s:e].tolist(), self.in_edge[s:e].tolist()))

    def out_neighbors(self, v: int) -> list[tuple[int, int]]:
        s, e = self.out_ptr[v], self.out_ptr[v + 1]
        return list(zip(self.out_dst[s:e].tolist(), self.out_edge[s:e].tolist()))


def _csr(keys: np.ndarray, other: np.ndarray, n: int):
    order = np.lexsort((other, keys))
    ptr = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(np.bincount(keys, minlength=n), out=ptr[1:])
    return ptr, other[order], order.astype(np.int64)


def build_graph(nodes: NodeTable, edges: EdgeTable) -> Graph:
    n = nodes.count
    bad = np.flatnonzero((edges.src < 0) | (edges.src >= n) | (edges.dst < 0) | (edges.dst >= n))
    if bad.size:
        r = int(bad[0])
        raise GraphError(f"edge row {r} ({edges.src[r]} -> {edges.dst[r]}) has an endpoint outside 0..{n - 1}")
    in_ptr, in_src, in_edge = _csr(edges.dst, edges.src, n)
    out_ptr, out_dst, out_edge = _csr(edges.src, edges.dst, n)
    arrays = (in_ptr, in_src, in_edge, out_ptr, out_dst, out_edge, nodes.features, nodes.labels,
              edges.src, edges.dst, edges.features)
    for a in arrays:
        a.setflags(write=False)
    return Graph(nodes, edges, in_ptr, in_src, in_edge, out_ptr, out_dst, out_edge)


def drop_isolated(nodes: NodeTable, edges: EdgeTable) -> tuple[NodeTable, EdgeTable, np.ndarray]:
    """Remove nodes without any edge. Returns the kept original ids too."""
    used = np.zeros(nodes.count, dtype=bool)
    used[edges.src] = True
    used[edges.dst] = True
    kept = np.flatnonzero(used)
    remap = np.full(nodes.count, -1, dtype=np.int64)
    remap[kept] = np.arange(kept.size)
    new_nodes = NodeTable(nodes.features[kept], nodes.labels[kept], nodes.num_classes)
    return new_nodes, EdgeTable(remap[edges.src], remap[edges.dst], edges.features), kept


@dataclass
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int

    def subset(self, name: str) -> np.ndarray:
        if name in ("val", "valid"):
            name = "validation"
        if name == "all":
            return np.sort(np.concatenate([self.train, self.validation, self.test]))
        if name not in ("train", "validation", "test"):
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)


SPLIT_RATIOS = (0.7, 0.1, 0.2)


def split_labels(nodes: NodeTable, seed: int, ratios: Sequence[float] = SPLIT_RATIOS) -> DatasetSplit:
    """Stratified shuffle-then-slice split of the labeled nodes.

    Per class, validation and test get ``max(1, floor(ratio * n_c))`` nodes
    and train takes the remainder.
    """
    labeled = nodes.labeled
    if labeled.size < 10:
        raise GraphError(f"need at least 10 labeled nodes, got {labeled.size}")
    rng = np.random.default_rng(seed)
    parts = ([], [], [])
    deficient = []
    for c in range(nodes.num_classes):
        members = labeled[nodes.labels[labeled] == c]
        if members.size == 0:
            continue
        members = members[rng.permutation(members.size)]
        # at least one node per held-out split so tiny classes stay usable
        n_val = max(1, int(np.floor(ratios[1] * members.size + 1e-9)))
        n_test = max(1, int(np.floor(ratios[2] * members.size + 1e-9)))
        n_train = members.size - n_val - n_test
        if min(n_train, n_val, n_test) < 1:
            deficient.append(c)
            continue
        parts[0].append(members[:n_train])
        parts[1].append(members[n_train:n_train + n_val])
        parts[2].append(members[n_train + n_val:])
    if deficient:
        raise GraphError(f"classes {deficient} have too few labeled nodes for a 70/10/20 split")
    train, val, test = (np.sort(np.concatenate(p)) for p in parts)
    return DatasetSplit(train, val, test, seed)


@dataclass
class Standardizer:
    """Per-column z-score for node and edge features (zero-variance columns
    are only centred)."""

    node_mean: np.ndarray
    node_scale: np.ndarray
    edge_mean: np.ndarray
    edge_scale: np.ndarray

    @classmethod
    def fit(cls, nodes: NodeTable, edges: EdgeTable, node_rows: Optional[np.ndarray] = None) -> "Standardizer":
        nf = nodes.features if node_rows is None else nodes.features[node_rows]
        ef = edges.features
        return cls(*_moments(nf, nodes.dim), *_moments(ef, edges.dim))

    @classmethod
    def identity(cls, node_dim: int, edge_dim: int) -> "Standardizer":
        return cls(np.zeros(node_dim), np.ones(node_dim), np.zeros(edge_dim), np.ones(edge_dim))

    def transform(self, nodes: NodeTable, edges: EdgeTable) -> tuple[NodeTable, EdgeTable]:
        if nodes.dim != self.node_mean.size or edges.dim != self.edge_mean.size:
            raise FeatureShapeError(
                f"standardizer fitted for F={self.node_mean.size}, P={self.edge_mean.size}; "
                f"got F={nodes.dim}, P={edges.dim}"
            )
        nf = (nodes.features - self.node_mean) / self.node_scale
        ef = (edges.features - self.edge_mean) / self.edge_scale
        return NodeTable(nf, nodes.labels, nodes.num_classes), EdgeTable(edges.src, edges.dst, ef)


def _moments(x: np.ndarray, dim: int):
    if x.shape[0] == 0:
        return np.zeros(dim), np.ones(dim)
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)
