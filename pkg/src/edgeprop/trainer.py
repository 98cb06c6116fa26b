"""Mini-batch training with Adam and early stopping, evaluation, and the
sampling-variance diagnostic."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, fields
from typing import Callable, Dict, List, Optional

import numpy as np

from .checkpoint import CheckpointRecord
from .graph import DatasetSplit, Graph
from .metrics import MetricsReport, classification_report
from .model import (
    HistoryCache,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    forward_exact,
    input_dims,
)
from .numeric import AdamState, NumericError, adam_step, log_softmax
from .sampler import SamplerConfig, batch_iterator, build_frontiers, full_frontier

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 2e-4
    batch_size: int = 32
    sample_size: int = 10
    K: int = 1
    d_embed: int = 32
    patience: int = 100
    max_epochs: int = 2000
    eval_every: int = 1
    seed: int = 0
    split_seed: int = 0
    aggregator: str = "mean"
    use_node_features: bool = True
    use_edge_features: bool = True
    augmented: bool = True
    cv_enabled: bool = True

    def __post_init__(self):
        for name in ("lr", "batch_size", "sample_size", "d_embed", "patience", "max_epochs", "eval_every"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def model_config(self, num_classes: int) -> ModelConfig:
        return ModelConfig(
            K=self.K,
            d_embed=self.d_embed,
            aggregator=self.aggregator,
            use_node_features=self.use_node_features,
            use_edge_features=self.use_edge_features,
            augmented=self.augmented,
            cv_enabled=self.cv_enabled,
            num_classes=num_classes,
        )

    def sampler_config(self) -> SamplerConfig:
        return SamplerConfig(self.batch_size, self.sample_size, "uniform", self.seed)


def minibatch_loss(logits, labels) -> tuple[float, np.ndarray]:
    """Mean cross-entropy over the batch and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError("need one logit row per label")
    if labels.size == 0:
        raise ValueError("empty batch")
    if np.any(labels < 0) or np.any(labels >= logits.shape[1]):
        raise ValueError("label out of range")
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    n = labels.size
    logp = log_softmax(logits)
    loss = -float(logp[np.arange(n), labels].mean())
    d = np.exp(logp)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def predict_logits(graph: Graph, params: ModelParams, cfg: ModelConfig, nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=np.int64)
    return forward_exact(graph, full_frontier(graph, nodes, cfg.K), params, cfg).logits


def evaluate(params: ModelParams, graph: Graph, node_set, cfg: ModelConfig) -> MetricsReport:
    nodes = np.asarray(node_set, dtype=np.int64)
    if nodes.size == 0:
        raise ValueError("empty evaluation set")
    y = graph.nodes.labels[nodes]
    if np.any(y < 0):
        raise ValueError("evaluation set contains unlabeled nodes")
    # argmax breaks ties toward the lowest class index
    pred = predict_logits(graph, params, cfg, nodes).argmax(axis=1)
    return classification_report(y, pred, cfg.num_classes)


@dataclass
class LogRow:
    epoch: int
    train_loss: float
    val_accuracy: float
    elapsed_ms: float


@dataclass
class TrainState:
    params: ModelParams
    adam: AdamState
    history: HistoryCache
    best_params: ModelParams
    epoch: int = 0
    best_val: float = -1.0
    best_epoch: int = 0
    since_best: int = 0
    done: bool = False
    log: List[LogRow] = field(default_factory=list)

    @classmethod
    def fresh(cls, graph: Graph, cfg: TrainConfig) -> "TrainState":
        mcfg = cfg.model_config(graph.num_classes)
        params = ModelParams.init(mcfg, *input_dims(graph, mcfg), seed=cfg.seed)
        return cls(params, AdamState.for_params(params.arrays()), HistoryCache.zeros(graph, mcfg), params.copy())


@dataclass
class TrainResult:
    params: ModelParams
    log: List[LogRow]
    state: TrainState
    config: ModelConfig


def train(
    graph: Graph,
    split: DatasetSplit,
    cfg: TrainConfig,
    state: Optional[TrainState] = None,
    on_epoch: Optional[Callable[[LogRow], None]] = None,
    stop_after: Optional[int] = None,
) -> TrainResult:
    """Train until early stopping or ``max_epochs``; return the best-validation
    parameters.

    ``state`` resumes an interrupted run. ``stop_after`` pauses after that many
    epochs of this call (the state can be checkpointed and resumed).
    """
    train_nodes = np.asarray(split.train, dtype=np.int64)
    if train_nodes.size == 0:
        raise ValueError("empty training split")
    val_nodes = np.asarray(split.validation, dtype=np.int64)
    mcfg = cfg.model_config(graph.num_classes)
    state = state or TrainState.fresh(graph, cfg)
    state.params.check(mcfg, *input_dims(graph, mcfg))
    labels = graph.nodes.labels
    scfg = cfg.sampler_config()
    val_frontier = full_frontier(graph, val_nodes, mcfg.K) if val_nodes.size else None
    use_cv = cfg.cv_enabled and mcfg.K > 0
    t0 = time.perf_counter()
    run = 0
    while not state.done and state.epoch < cfg.max_epochs:
        if stop_after is not None and run >= stop_after:
            break
        epoch = state.epoch + 1
        total, count = 0.0, 0
        params, adam = state.params, state.adam
        for bi, batch in enumerate(batch_iterator(train_nodes, scfg, epoch)):
            fr = build_frontiers(graph, batch, mcfg.K, scfg, epoch, bi)
            emb, cache = forward(graph, fr, params, mcfg, state.history if use_cv else None)
            loss, dlogits = minibatch_loss(emb.logits, labels[batch])
            if not np.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, batch {bi}")
            grads = backward(params, cache, dlogits)
            new, adam = adam_step(params.arrays(), grads.arrays(), adam, cfg.lr)
            params = ModelParams.from_arrays(new)
            total += loss * batch.size
            count += batch.size
        state.params, state.adam, state.epoch = params, adam, epoch
        train_loss = total / count
        val_acc = float("nan")
        if epoch % cfg.eval_every == 0 and val_frontier is not None:
            logits = forward_exact(graph, val_frontier, params, mcfg).logits
            val_acc = float(np.mean(logits.argmax(axis=1) == labels[val_nodes]))
            if val_acc > state.best_val:
                state.best_val, state.best_epoch, state.since_best = val_acc, epoch, 0
                state.best_params = params.copy()
            else:
                state.since_best += 1
                if state.since_best >= cfg.patience:
                    state.done = True
        elif val_frontier is None:
            state.best_params, state.best_epoch = params.copy(), epoch
        row = LogRow(epoch, train_loss, val_acc, (time.perf_counter() - t0) * 1000.0)
        state.log.append(row)
        log.debug("epoch %d loss %.5f val_acc %.4f", epoch, train_loss, val_acc)
        if on_epoch:
            on_epoch(row)
        run += 1
    if state.epoch >= cfg.max_epochs:
        state.done = True
    return TrainResult(state.best_params, state.log, state, mcfg)


# checkpoint <-> training state

def _put_params(tensors: Dict[str, np.ndarray], prefix: str, arrays: Dict[str, np.ndarray]) -> None:
    for k, a in arrays.items():
        tensors[f"{prefix}/{k}"] = a


def _get_arrays(tensors: Dict[str, np.ndarray], prefix: str) -> Dict[str, np.ndarray]:
    p = prefix + "/"
    return {k[len(p):]: a for k, a in tensors.items() if k.startswith(p)}


def config_to_text(cfg) -> Dict[str, str]:
    return {f.name: repr(getattr(cfg, f.name)) if isinstance(getattr(cfg, f.name), float)
            else str(getattr(cfg, f.name)) for f in fields(cfg)}


def state_to_record(state: TrainState, extra_config: Dict[str, str], extra_tensors=None) -> CheckpointRecord:
    t: Dict[str, np.ndarray] = {}
    _put_params(t, "params", state.params.arrays())
    _put_params(t, "best", state.best_params.arrays())
    _put_params(t, "adam.m", state.adam.m)
    _put_params(t, "adam.v", state.adam.v)
    for k, (h, s) in enumerate(zip(state.history.edge, state.history.node_sum), start=1):
        t[f"history.edge/{k}"] = h
        t[f"history.sum/{k}"] = s
    t["best_val_accuracy"] = np.array(state.best_val)
    t["log/train_loss"] = np.array([r.train_loss for r in state.log])
    t["log/val_accuracy"] = np.array([r.val_accuracy for r in state.log])
    t.update(extra_tensors or {})
    ints = {
        "counters": np.array([state.epoch, state.adam.step, state.best_epoch, state.since_best, int(state.done)]),
        "log/epoch": np.array([r.epoch for r in state.log], dtype=np.int64),
    }
    return CheckpointRecord(dict(extra_config), t, ints)


def record_to_state(rec: CheckpointRecord) -> TrainState:
    t = rec.tensors
    epoch, step, best_epoch, since_best, done = (int(x) for x in rec.ints["counters"])
    K = sum(1 for k in t if k.startswith("history.edge/"))
    history = HistoryCache([t[f"history.edge/{k}"].copy() for k in range(1, K + 1)],
                           [t[f"history.sum/{k}"].copy() for k in range(1, K + 1)])
    rows = [LogRow(int(e), float(l), float(v), float("nan")) for e, l, v in
            zip(rec.ints["log/epoch"], t["log/train_loss"], t["log/val_accuracy"])]
    return TrainState(
        params=ModelParams.from_arrays(_get_arrays(t, "params")),
        adam=AdamState(step, _get_arrays(t, "adam.m"), _get_arrays(t, "adam.v")),
        history=history,
        best_params=ModelParams.from_arrays(_get_arrays(t, "best")),
        epoch=epoch,
        best_val=float(t["best_val_accuracy"]),
        best_epoch=best_epoch,
        since_best=since_best,
        done=bool(done),
        log=rows,
    )


# variance diagnostic

@dataclass
class VarianceRow:
    node: int
    deg: int
    plain_mse: float
    cv_mse: float


def warm_history(graph: Graph, params: ModelParams, cfg: ModelConfig) -> HistoryCache:
    """History filled by one full-neighbourhood pass over every node."""
    history = HistoryCache.zeros(graph, cfg)
    if cfg.K:
        fr = full_frontier(graph, np.arange(graph.num_nodes), cfg.K)
        forward(graph, fr, params, cfg, history)
    return history


def estimator_variance_report(
    graph: Graph,
    params: ModelParams,
    cfg: ModelConfig,
    trials: int,
    sample_size: int = 10,
    seed: int = 0,
    nodes=None,
    history: Optional[HistoryCache] = None,
    eval_params: Optional[ModelParams] = None,
) -> List[VarianceRow]:
    """Per-node MSE of plain-sampled and control-variate top-layer aggregates
    against the exact aggregate, over ``trials`` independent resamples.

    ``history`` defaults to a warm history built at ``params``; passing
    ``eval_params`` evaluates the estimators at different (e.g. drifted)
    parameters than the ones the history was built with.
    """
    if cfg.K < 1:
        raise ValueError("variance report needs at least one message-passing layer")
    probe = np.arange(graph.num_nodes) if nodes is None else np.unique(np.asarray(nodes, dtype=np.int64))
    history = history if history is not None else warm_history(graph, params, cfg)
    p = eval_params if eval_params is not None else params
    exact = forward(graph, full_frontier(graph, probe, cfg.K), p, cfg)[0].aggregates[-1]
    scfg = SamplerConfig(batch_size=max(1, probe.size), sample_size=sample_size, mode="uniform", seed=seed)
    se_plain = np.zeros(probe.size)
    se_cv = np.zeros(probe.size)
    for t in range(trials):
        fr = build_frontiers(graph, probe, cfg.K, scfg, epoch=t)
        plain = forward(graph, fr, p, cfg)[0].aggregates[-1]
        cv = forward(graph, fr, p, cfg, history, update_history=False)[0].aggregates[-1]
        se_plain += np.mean((plain - exact) ** 2, axis=1)
        se_cv += np.mean((cv - exact) ** 2, axis=1)
    deg = graph.in_degree[probe]
    return [VarianceRow(int(v), int(d), float(a / trials), float(b / trials))
            for v, d, a, b in zip(probe, deg, se_plain, se_cv)]
