"""CSV readers/writers for node, transaction and edge tables, and the binary
graph cache.

Binary cache layout: ``b"EPGRAPH1"``, five little-endian u64 counts
``(N, E, F, P, C)``, node features ``N*F`` f64, edge features ``E*P`` f64,
then int64 index arrays: labels (N), src (E), dst (E), in_ptr (N+1),
in_src (E), in_edge (E), out_ptr (N+1), out_dst (E), out_edge (E).
"""
from __future__ import annotations

import csv
import struct
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .graph import UNLABELED, EdgeTable, Graph, GraphError, NodeTable, build_graph
from .synth import Transactions

GRAPH_MAGIC = b"EPGRAPH1"


class DataError(ValueError):
    """Malformed input file; the message names file and line."""


def _float(s: str, where: str) -> float:
    try:
        v = float(s)
    except ValueError:
        raise DataError(f"{where}: not a number: {s!r}") from None
    if not np.isfinite(v):
        raise DataError(f"{where}: non-finite value {s!r}")
    return v


def _open_rows(path: Path, expect: Sequence[str], prefix_rest: Optional[str] = None):
    fh = open(path, newline="")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise DataError(f"{path}: empty file") from None
    n_fixed = len(expect)
    if [h.strip() for h in header[:n_fixed]] != list(expect):
        fh.close()
        raise DataError(f"{path}:1: expected header starting with {','.join(expect)}")
    if prefix_rest is not None:
        for j, h in enumerate(header[n_fixed:], start=1):
            if h.strip() != f"{prefix_rest}{j}":
                fh.close()
                raise DataError(f"{path}:1: expected column {prefix_rest}{j}, found {h!r}")
    elif len(header) != n_fixed:
        fh.close()
        raise DataError(f"{path}:1: unexpected extra columns")
    return fh, reader, len(header)


def read_nodes_csv(path, num_classes: Optional[int] = None) -> tuple[NodeTable, List[str]]:
    path = Path(path)
    fh, reader, width = _open_rows(path, ["id", "label"], "f")
    ids: List[str] = []
    labels: List[int] = []
    feats: List[List[float]] = []
    with fh:
        for row in reader:
            line = reader.line_num
            where = f"{path}:{line}"
            if len(row) != width:
                raise DataError(f"{where}: expected {width} fields, got {len(row)}")
            ids.append(row[0])
            lab = row[1].strip()
            if lab == "":
                labels.append(UNLABELED)
            else:
                try:
                    labels.append(int(lab))
                except ValueError:
                    raise DataError(f"{where}: bad label {lab!r}") from None
                if labels[-1] < 0:
                    raise DataError(f"{where}: negative label")
            feats.append([_float(v, where) for v in row[2:]])
    if len(set(ids)) != len(ids):
        raise DataError(f"{path}: duplicate node ids")
    lab = np.array(labels, dtype=np.int64)
    c = int(lab.max()) + 1 if lab.size and lab.max() >= 0 else 2
    c = max(c, 2, num_classes or 0)
    x = np.array(feats, dtype=np.float64).reshape(len(ids), width - 2)
    return NodeTable(x, lab, c), ids


def _index(ids: Sequence[str]) -> dict:
    return {s: i for i, s in enumerate(ids)}


def read_transactions_csv(path, ids: Sequence[str]) -> Transactions:
    path = Path(path)
    idx = _index(ids)
    fh, reader, _ = _open_rows(path, ["src", "dst", "timestamp", "value"])
    src, dst, ts, val = [], [], [], []
    with fh:
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if len(row) != 4:
                raise DataError(f"{where}: expected 4 fields, got {len(row)}")
            try:
                src.append(idx[row[0]])
                dst.append(idx[row[1]])
            except KeyError as e:
                raise DataError(f"{where}: unknown node id {e.args[0]!r}") from None
            t = _float(row[2], where)
            v = _float(row[3], where)
            if t < 0 or v < 0 or t != int(t):
                raise DataError(f"{where}: timestamp must be a non-negative integer and value non-negative")
            ts.append(int(t))
            val.append(v)
    if not src:
        raise DataError(f"{path}: no transactions")
    return Transactions(np.array(src, np.int64), np.array(dst, np.int64),
                        np.array(ts, np.int64), np.array(val, np.float64))


def read_edges_csv(path, ids: Sequence[str]) -> EdgeTable:
    path = Path(path)
    idx = _index(ids)
    fh, reader, width = _open_rows(path, ["src", "dst"], "e")
    src, dst, feats = [], [], []
    with fh:
        for row in reader:
            where = f"{path}:{reader.line_num}"
            if len(row) != width:
                raise DataError(f"{where}: expected {width} fields, got {len(row)}")
            try:
                src.append(idx[row[0]])
                dst.append(idx[row[1]])
            except KeyError as e:
                raise DataError(f"{where}: unknown node id {e.args[0]!r}") from None
            feats.append([_float(v, where) for v in row[2:]])
    edges = EdgeTable(np.array(src, np.int64), np.array(dst, np.int64),
                      np.array(feats, np.float64).reshape(len(src), width - 2))
    if edges.has_duplicates():
        raise DataError(f"{path}: duplicate (src, dst) pairs in pre-collapsed edges")
    return edges


def _fmt(v: float) -> str:
    return repr(float(v))


def write_nodes_csv(path, nodes: NodeTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"] + [f"f{j}" for j in range(1, nodes.dim + 1)])
        for i in range(nodes.count):
            lab = "" if nodes.labels[i] < 0 else str(int(nodes.labels[i]))
            w.writerow([str(i), lab] + [_fmt(v) for v in nodes.features[i]])


def write_transactions_csv(path, tx: Transactions) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst", "timestamp", "value"])
        for s, d, t, v in zip(tx.src.tolist(), tx.dst.tolist(), tx.timestamp.tolist(), tx.value.tolist()):
            w.writerow([s, d, int(t), _fmt(v)])


def write_edges_csv(path, edges: EdgeTable) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["src", "dst"] + [f"e{j}" for j in range(1, edges.dim + 1)])
        for i in range(len(edges)):
            w.writerow([int(edges.src[i]), int(edges.dst[i])] + [_fmt(v) for v in edges.features[i]])


def write_labels_csv(path, labels) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "label"])
        for i, lab in enumerate(np.asarray(labels).tolist()):
            w.writerow([i, lab])


def save_graph_cache(graph: Graph, path) -> None:
    n, e, f, p, c = graph.num_nodes, graph.num_edges, graph.node_dim, graph.edge_dim, graph.num_classes
    parts = [GRAPH_MAGIC, struct.pack("<5Q", n, e, f, p, c)]
    parts.append(np.ascontiguousarray(graph.nodes.features, "<f8").tobytes())
    parts.append(np.ascontiguousarray(graph.edges.features, "<f8").tobytes())
    for a in (graph.nodes.labels, graph.edges.src, graph.edges.dst, graph.in_ptr, graph.in_src,
              graph.in_edge, graph.out_ptr, graph.out_dst, graph.out_edge):
        parts.append(np.ascontiguousarray(a, "<i8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_graph_cache(path) -> Graph:
    buf = Path(path).read_bytes()
    if buf[:8] != GRAPH_MAGIC:
        raise DataError(f"{path}: not a graph cache (bad magic)")
    if len(buf) < 48:
        raise DataError(f"{path}: truncated graph cache")
    n, e, f, p, c = struct.unpack("<5Q", buf[8:48])
    sizes = [("f8", n * f), ("f8", e * p), ("i8", n), ("i8", e), ("i8", e),
             ("i8", n + 1), ("i8", e), ("i8", e), ("i8", n + 1), ("i8", e), ("i8", e)]
    need = 48 + 8 * sum(s for _, s in sizes)
    if len(buf) != need:
        raise DataError(f"{path}: graph cache has {len(buf)} bytes, expected {need}")
    arrays, pos = [], 48
    for kind, count in sizes:
        arrays.append(np.frombuffer(buf, dtype="<" + kind, count=count, offset=pos).copy())
        pos += 8 * count
    xf, ef, labels, src, dst = arrays[:5]
    try:
        graph = build_graph(NodeTable(xf.reshape(n, f), labels, int(c)),
                            EdgeTable(src, dst, ef.reshape(e, p)))
    except GraphError as err:
        raise DataError(f"{path}: {err}") from None
    stored = arrays[5:]
    rebuilt = (graph.in_ptr, graph.in_src, graph.in_edge, graph.out_ptr, graph.out_dst, graph.out_edge)
    if not all(np.array_equal(a, b) for a, b in zip(stored, rebuilt)):
        raise DataError(f"{path}: stored adjacency index is inconsistent with the edge list")
    return graph
