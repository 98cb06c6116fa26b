"""Flat ``key = value`` run configuration shared by all CLI commands."""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Dict, Optional

from .synth import SynthConfig
from .trainer import TrainConfig

PATH_KEYS = ("data_dir", "out_dir", "checkpoint")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    # paths
    data_dir: str = "data"
    out_dir: str = "out"
    checkpoint: str = ""
    # the two seeds everything derives from
    data_seed: int = 0
    train_seed: int = 0
    # synthetic data
    n_nodes: int = 1000
    n_classes: int = 2
    class_prior: str = ""
    out_degree_mean: float = 5.0
    tx_per_edge_mean: float = 3.0
    node_signal: float = 0.2
    signal_log_mean: float = 2.0
    base_log_mean: float = 0.0
    value_log_std: float = 0.5
    burst_scale: float = 0.1
    time_window: float = 2592000.0
    node_dim: int = 8
    labeled_fraction: float = 1.0
    # ingestion
    edge_source: str = "transactions"
    min_count: int = 1
    min_total_value: float = 0.0
    drop_isolated: bool = False
    augment: bool = True
    standardize: bool = True
    # model / training
    layers: int = 1
    d_embed: int = 32
    aggregator: str = "mean"
    use_node_features: bool = True
    use_edge_features: bool = True
    cv_enabled: bool = True
    lr: float = 2e-4
    batch_size: int = 32
    sample_size: int = 10
    patience: int = 100
    max_epochs: int = 2000
    eval_every: int = 1
    eval_split: str = "test"
    # diagnostics
    gradcheck_nodes: int = 10
    gradcheck_h: float = 1e-5
    variance_trials: int = 1000
    variance_drift: float = 0.0

    def __post_init__(self):
        if self.edge_source not in ("transactions", "edges"):
            raise ConfigError("edge_source must be 'transactions' or 'edges'")
        if self.eval_split not in ("train", "validation", "test", "all"):
            raise ConfigError("eval_split must be train, validation, test or all")
        if not 2 <= self.gradcheck_nodes <= 20:
            raise ConfigError("gradcheck_nodes must be between 2 and 20")
        try:
            self.train_config()
            self.synth_config()
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr, batch_size=self.batch_size, sample_size=self.sample_size, K=self.layers,
            d_embed=self.d_embed, patience=self.patience, max_epochs=self.max_epochs,
            eval_every=self.eval_every, seed=self.train_seed, split_seed=self.data_seed,
            aggregator=self.aggregator, use_node_features=self.use_node_features,
            use_edge_features=self.use_edge_features, augmented=self.augment,
            cv_enabled=self.cv_enabled,
        )

    def synth_config(self) -> SynthConfig:
        prior = [float(p) for p in self.class_prior.split(",")] if self.class_prior.strip() else None
        return SynthConfig(
            N=self.n_nodes, C=self.n_classes, class_prior=prior, out_degree_mean=self.out_degree_mean,
            tx_per_edge_mean=self.tx_per_edge_mean, node_signal=self.node_signal,
            signal_log_mean=self.signal_log_mean, base_log_mean=self.base_log_mean,
            value_log_std=self.value_log_std, burst_scale=self.burst_scale, time_window=self.time_window,
            F=self.node_dim, labeled_fraction=self.labeled_fraction, seed=self.data_seed,
        )

    def as_text_dict(self, include_paths: bool = True) -> Dict[str, str]:
        out = {}
        for f in fields(self):
            if not include_paths and f.name in PATH_KEYS:
                continue
            v = getattr(self, f.name)
            out[f.name] = repr(v) if isinstance(v, float) else str(v)
        return out

    def canonical(self, include_paths: bool = False) -> str:
        d = self.as_text_dict(include_paths)
        return "".join(f"{k}={d[k]}\n" for k in sorted(d))

    def digest(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    t = _TYPES[key]
    raw = raw.strip()
    try:
        if t is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if t is int:
            return int(raw)
        if t is float:
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {t.__name__}") from None


def from_mapping(values: Dict[str, str], base: Optional[RunConfig] = None) -> RunConfig:
    """Apply string overrides; unknown keys and bad values raise ConfigError
    before anything is applied."""
    unknown = sorted(set(values) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    converted = {k: _convert(k, v) for k, v in values.items()}
    return replace(base or RunConfig(), **converted)


def parse_text(text: str, source: str = "<config>") -> Dict[str, str]:
    cp = configparser.ConfigParser(interpolation=None, comment_prefixes=("#", ";"), delimiters=("=",))
    cp.optionxform = str
    try:
        cp.read_string("[run]\n" + text, source=source)
    except configparser.Error as e:
        raise ConfigError(f"{source}: {e}") from None
    return dict(cp["run"])


def load(path: Optional[str], overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    values: Dict[str, str] = {}
    if path:
        try:
            values = parse_text(Path(path).read_text(), str(path))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
    values.update(overrides or {})
    return from_mapping(values)


def from_checkpoint_text(d: Dict[str, str]) -> RunConfig:
    return from_mapping({k: v for k, v in d.items() if k in _TYPES})
