"""Synthetic transaction graphs whose class signal lives mostly in the edges.

Senders of the "fraud" class (class 1 by default) move larger amounts and
transact in bursts, so collapsed edge statistics separate the classes while
node features only carry a weak shift in their first coordinate.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .graph import UNLABELED, NodeTable


class Transactions(NamedTuple):
    src: np.ndarray
    dst: np.ndarray
    timestamp: np.ndarray
    value: np.ndarray


@dataclass
class SynthConfig:
    N: int = 1000
    C: int = 2
    class_prior: Optional[Sequence[float]] = None
    out_degree_mean: float = 5.0
    tx_per_edge_mean: float = 3.0
    node_signal: float = 0.2
    signal_log_mean: float = 2.0
    base_log_mean: float = 0.0
    value_log_mean: Optional[Sequence[Sequence[float]]] = None
    value_log_std: float = 0.5
    burst_scale: float = 0.1
    time_window: float = 30 * 24 * 3600.0
    F: int = 8
    labeled_fraction: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.N < 20:
            raise ValueError("need N >= 20")
        if self.C < 2:
            raise ValueError("need at least 2 classes")
        for name in ("out_degree_mean", "tx_per_edge_mean", "value_log_std", "burst_scale", "time_window"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.F < 1:
            raise ValueError("F must be >= 1")
        if not 0 < self.labeled_fraction <= 1:
            raise ValueError("labeled_fraction must be in (0, 1]")
        prior = self.prior()
        if prior.shape != (self.C,) or np.any(prior < 0) or abs(prior.sum() - 1.0) > 1e-9:
            raise ValueError("class_prior must be C non-negative probabilities summing to 1")
        if self.log_means().shape != (self.C, self.C):
            raise ValueError("value_log_mean must be a C x C matrix")

    def prior(self) -> np.ndarray:
        if self.class_prior is None:
            return np.full(self.C, 1.0 / self.C)
        return np.asarray(self.class_prior, dtype=np.float64)

    def log_means(self) -> np.ndarray:
        """``[sender_class, receiver_class]`` log-mean of transaction values."""
        if self.value_log_mean is not None:
            return np.asarray(self.value_log_mean, dtype=np.float64)
        m = np.full((self.C, self.C), self.base_log_mean)
        m[1, :] = self.signal_log_mean
        return m

    def interarrival_scales(self) -> np.ndarray:
        s = np.ones(self.C)
        s[1] = self.burst_scale
        return s


@dataclass
class SynthData:
    nodes: NodeTable
    transactions: Transactions
    labels_full: np.ndarray


def _distinct_targets(rng: np.random.Generator, n: int, src: int, k: int) -> np.ndarray:
    out = np.empty(0, dtype=np.int64)
    while out.size < k:
        cand = rng.integers(0, n - 1, size=2 * k)
        cand = cand + (cand >= src)  # skip self
        _, first = np.unique(np.r_[out, cand], return_index=True)
        out = np.r_[out, cand][np.sort(first)]
    return out[:k]


def generate(cfg: SynthConfig) -> SynthData:
    rng = np.random.default_rng(cfg.seed)
    n = cfg.N
    labels = rng.choice(cfg.C, size=n, p=cfg.prior())
    x = rng.standard_normal((n, cfg.F))
    x[:, 0] += cfg.node_signal * labels

    out_deg = np.clip(rng.poisson(cfg.out_degree_mean, size=n), 1, n - 1)
    src = np.repeat(np.arange(n), out_deg)
    dst = np.concatenate([_distinct_targets(rng, n, i, int(k)) for i, k in enumerate(out_deg)])

    counts = 1 + rng.poisson(cfg.tx_per_edge_mean, size=src.size)
    tx_src = np.repeat(src, counts)
    tx_dst = np.repeat(dst, counts)
    mu = cfg.log_means()[labels[tx_src], labels[tx_dst]]
    value = rng.lognormal(mu, cfg.value_log_std)

    scale = cfg.interarrival_scales()[labels[src]] * cfg.time_window / counts
    start = rng.uniform(0.0, cfg.time_window, size=src.size)
    gaps = rng.exponential(np.repeat(scale, counts))
    first = np.cumsum(counts) - counts
    gaps[first] = 0.0
    cum = np.cumsum(gaps)
    cum -= np.repeat(cum[first], counts)
    timestamp = np.floor(np.repeat(start, counts) + cum).astype(np.int64)

    observed = labels.copy()
    if cfg.labeled_fraction < 1.0:
        hidden = rng.random(n) >= cfg.labeled_fraction
        observed[hidden] = UNLABELED
    nodes = NodeTable(x, observed, cfg.C)
    return SynthData(nodes, Transactions(tx_src, tx_dst, timestamp, value), labels)
