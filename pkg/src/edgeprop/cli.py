"""Command-line entry point: ``edgeprop {gen-data,train,eval,gradcheck,variance}``.

Exit codes: 0 success, 1 gradient check failed, 2 config error, 3 data error,
4 numeric error, 5 checkpoint/data shape or version mismatch.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import config as config_mod
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .diagnostics import composed_gradcheck, random_graph, smooth_params
from .graph import FeatureShapeError, GraphError, Standardizer, collapse_multiedges
from .io import (
    DataError,
    read_edges_csv,
    read_nodes_csv,
    read_transactions_csv,
    write_labels_csv,
    write_nodes_csv,
    write_transactions_csv,
)
from .metrics import MetricsReport
from .model import ModelParams, input_dims
from .numeric import NumericError
from .pipeline import Prepared, prepare
from .synth import generate
from .trainer import (
    TrainState,
    estimator_variance_report,
    evaluate,
    record_to_state,
    state_to_record,
    train,
    warm_history,
)

EXIT_OK, EXIT_GRADCHECK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC, EXIT_MISMATCH = 0, 1, 2, 3, 4, 5
GRADCHECK_THRESHOLD = 1e-4
LOG_HEADER = ["epoch", "train_loss", "val_accuracy", "elapsed_ms"]

log = logging.getLogger("edgeprop")


class ShapeMismatch(Exception):
    pass


def _overrides(args) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = value
    if args.out is not None:
        out["out_dir"] = args.out
    return out


def _load_config(args, seed_key: str) -> RunConfig:
    ov = _overrides(args)
    if args.seed is not None:
        ov[seed_key] = str(args.seed)
    if getattr(args, "data", None):
        ov["data_dir"] = args.data
    return config_mod.load(args.config, ov)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def load_dataset(cfg: RunConfig, data_dir: Optional[str] = None,
                 standardizer: Optional[Standardizer] = None) -> Prepared:
    d = Path(data_dir or cfg.data_dir)
    try:
        nodes, ids = read_nodes_csv(d / "nodes.csv", num_classes=cfg.n_classes)
        if cfg.edge_source == "edges":
            edges = read_edges_csv(d / "edges.csv", ids)
        else:
            tx = read_transactions_csv(d / "transactions.csv", ids)
            edges = collapse_multiedges(tx, cfg.min_count, cfg.min_total_value, num_nodes=nodes.count)
        return prepare(nodes, edges, cfg.data_seed, augment=cfg.augment, standardize=cfg.standardize,
                       remove_isolated=cfg.drop_isolated, standardizer=standardizer)
    except OSError as e:
        raise DataError(f"cannot read data: {e}") from None
    except FeatureShapeError:
        raise
    except GraphError as e:
        raise DataError(str(e)) from None


def _report_text(rep: MetricsReport, split: str) -> str:
    lines = [f"split {split}"] + [f"{k} {v:.6f}" for k, v in rep.summary_rows()]
    for c in range(rep.precision.size):
        lines.append(f"class {c} precision {rep.precision[c]:.6f} recall {rep.recall[c]:.6f} "
                     f"f1 {rep.f1[c]:.6f} support {int(rep.support[c])}")
    return "\n".join(lines)


def _write_report_csv(path: Path, rep: MetricsReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in rep.summary_rows():
            w.writerow([k, repr(float(v))])
        for c in range(rep.precision.size):
            w.writerow([f"precision_{c}", repr(float(rep.precision[c]))])
            w.writerow([f"recall_{c}", repr(float(rep.recall[c]))])
            w.writerow([f"f1_{c}", repr(float(rep.f1[c]))])
            w.writerow([f"support_{c}", int(rep.support[c])])


def _emit(rep: MetricsReport, split: str, as_json: bool) -> None:
    if as_json:
        print(json.dumps({"split": split, **rep.as_dict()}, sort_keys=True))
    else:
        print(_report_text(rep, split))


def cmd_gen_data(args) -> int:
    cfg = _load_config(args, "data_seed")
    out = Path(args.out or cfg.data_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = generate(cfg.synth_config())
    write_nodes_csv(out / "nodes.csv", data.nodes)
    write_transactions_csv(out / "transactions.csv", data.transactions)
    write_labels_csv(out / "labels_full.csv", data.labels_full)
    names = ["nodes.csv", "transactions.csv", "labels_full.csv"]
    manifest = {
        "config_sha256": cfg.digest(),
        "config": cfg.as_text_dict(include_paths=False),
        "files": {n: _sha256(out / n) for n in names},
        "counts": {"nodes": int(data.nodes.count), "transactions": int(data.transactions.src.size)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    if args.json:
        print(json.dumps(manifest["counts"]))
    else:
        print(f"wrote {data.nodes.count} nodes and {data.transactions.src.size} transactions to {out}")
    return EXIT_OK


def _standardizer_tensors(st: Standardizer) -> Dict[str, np.ndarray]:
    return {"norm/node_mean": st.node_mean, "norm/node_scale": st.node_scale,
            "norm/edge_mean": st.edge_mean, "norm/edge_scale": st.edge_scale}


def _standardizer_from(tensors: Dict[str, np.ndarray]) -> Standardizer:
    try:
        return Standardizer(tensors["norm/node_mean"], tensors["norm/node_scale"],
                            tensors["norm/edge_mean"], tensors["norm/edge_scale"])
    except KeyError:
        raise CheckpointError("checkpoint has no standardization section") from None


def _append_log(path: Path, rows, fresh: bool) -> None:
    mode = "w" if fresh else "a"
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if fresh:
            w.writerow(LOG_HEADER)
        for r in rows:
            va = "" if np.isnan(r.val_accuracy) else repr(r.val_accuracy)
            w.writerow([r.epoch, repr(r.train_loss), va, f"{r.elapsed_ms:.1f}"])


def cmd_train(args) -> int:
    cfg = _load_config(args, "train_seed")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt_path = Path(cfg.checkpoint) if cfg.checkpoint else out / "model.ckpt"
    log_path = out / "train_log.csv"
    tcfg = cfg.train_config()

    state: Optional[TrainState] = None
    standardizer = None
    if args.resume and ckpt_path.exists():
        rec = load_checkpoint(ckpt_path)
        state = record_to_state(rec)
        standardizer = _standardizer_from(rec.tensors)
    prep = load_dataset(cfg, standardizer=standardizer)
    fresh = state is None
    if fresh:
        _append_log(log_path, [], fresh=True)
    result = train(prep.graph, prep.split, tcfg, state=state,
                   on_epoch=lambda row: _append_log(log_path, [row], fresh=False),
                   stop_after=args.stop_after)
    rec = state_to_record(result.state, cfg.as_text_dict(include_paths=False),
                          _standardizer_tensors(prep.standardizer))
    save_checkpoint(rec, ckpt_path)
    rep = evaluate(result.params, prep.graph, prep.split.validation, result.config)
    _write_report_csv(out / "metrics_validation.csv", rep)
    if not args.json:
        print(f"trained {result.state.epoch} epochs; best validation accuracy "
              f"{result.state.best_val:.6f} at epoch {result.state.best_epoch}")
    _emit(rep, "validation", args.json)
    return EXIT_OK


def cmd_eval(args) -> int:
    base = _load_config(args, "train_seed")
    ckpt_path = Path(args.checkpoint or base.checkpoint or Path(base.out_dir) / "model.ckpt")
    try:
        rec = load_checkpoint(ckpt_path)
    except OSError as e:
        raise DataError(f"cannot read checkpoint: {e}") from None
    cfg = config_mod.from_mapping({**rec.config, "data_dir": args.data or base.data_dir,
                                   "out_dir": base.out_dir})
    split = args.split or cfg.eval_split
    st = _standardizer_from(rec.tensors)
    try:
        prep = load_dataset(cfg, standardizer=st)
    except FeatureShapeError as e:
        raise ShapeMismatch(str(e)) from None
    tcfg = cfg.train_config()
    mcfg = tcfg.model_config(prep.graph.num_classes)
    state = record_to_state(rec)
    try:
        state.best_params.check(mcfg, *input_dims(prep.graph, mcfg))
    except ValueError as e:
        raise ShapeMismatch(str(e)) from None
    rep = evaluate(state.best_params, prep.graph, prep.split.subset(split), mcfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_report_csv(out / f"metrics_{split}.csv", rep)
    _emit(rep, split, args.json)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args, "train_seed")
    rng = np.random.default_rng(cfg.train_seed)
    mcfg = cfg.train_config().model_config(3)
    mcfg.d_embed = min(mcfg.d_embed, 8)
    graph = random_graph(rng, cfg.gradcheck_nodes, num_classes=3, augment=cfg.augment)
    # keep relu inputs well clear of the kink so central differences are valid
    params, _ = smooth_params(rng, graph, mcfg, margin=10 * cfg.gradcheck_h)
    err = composed_gradcheck(graph, params, mcfg, h=cfg.gradcheck_h,
                             perturb=1e-3 if args.perturb_gradient else 0.0)
    ok = err < GRADCHECK_THRESHOLD
    if args.json:
        print(json.dumps({"max_relative_error": err, "threshold": GRADCHECK_THRESHOLD, "pass": ok}))
    else:
        print(f"max relative error {err:.3e} (threshold {GRADCHECK_THRESHOLD:.0e}): {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_GRADCHECK


def cmd_variance(args) -> int:
    cfg = _load_config(args, "train_seed")
    trials = args.trials if args.trials is not None else cfg.variance_trials
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if args.data:
        prep = load_dataset(cfg)
    else:
        data = generate(cfg.synth_config())
        edges = collapse_multiedges(data.transactions, cfg.min_count, cfg.min_total_value,
                                    num_nodes=data.nodes.count)
        prep = prepare(data.nodes, edges, cfg.data_seed, augment=cfg.augment,
                       standardize=cfg.standardize, remove_isolated=cfg.drop_isolated)
    graph = prep.graph
    mcfg = cfg.train_config().model_config(graph.num_classes)
    if mcfg.K < 1:
        raise ConfigError("variance needs layers >= 1")
    params = ModelParams.init(mcfg, *input_dims(graph, mcfg), seed=cfg.train_seed)
    history = warm_history(graph, params, mcfg)
    eval_params = None
    if cfg.variance_drift > 0:
        rng = np.random.default_rng([cfg.train_seed, 1])
        eval_params = ModelParams.from_arrays({k: a + cfg.variance_drift * rng.standard_normal(a.shape)
                                               for k, a in params.arrays().items()})
    rows = estimator_variance_report(graph, params, mcfg, trials, sample_size=cfg.sample_size,
                                     seed=cfg.train_seed, history=history, eval_params=eval_params)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["node,deg,plain_mse,cv_mse"] + [f"{r.node},{r.deg},{r.plain_mse!r},{r.cv_mse!r}" for r in rows]
    (out / "variance.csv").write_text("\n".join(lines) + "\n")
    if args.json:
        print(json.dumps([r.__dict__ for r in rows]))
    else:
        print("\n".join(lines))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key = value config file")
    common.add_argument("--seed", type=int, metavar="U64", help="override the command's seed")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="edgeprop", description="EdgeProp node classification toolkit")
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic transaction corpus")
    g.set_defaults(func=cmd_gen_data)
    t = sub.add_parser("train", parents=[common], help="train a model on a data directory")
    t.add_argument("--data", metavar="DIR")
    t.add_argument("--resume", action="store_true", help="continue from the checkpoint in the output dir")
    t.add_argument("--stop-after", type=int, metavar="EPOCHS", help="pause after this many epochs")
    t.set_defaults(func=cmd_train)
    e = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    e.add_argument("--checkpoint", metavar="PATH")
    e.add_argument("--data", metavar="DIR")
    e.add_argument("--split", choices=["train", "validation", "test", "all"])
    e.set_defaults(func=cmd_eval)
    gc = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full model")
    gc.add_argument("--perturb-gradient", action="store_true", help="corrupt the analytic gradient (negative control)")
    gc.set_defaults(func=cmd_gradcheck)
    v = sub.add_parser("variance", parents=[common], help="plain vs control-variate sampling error per node")
    v.add_argument("--trials", type=int)
    v.add_argument("--data", metavar="DIR", help="use this data directory instead of synthetic data")
    v.set_defaults(func=cmd_variance)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, GraphError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericError as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, ShapeMismatch) as e:
        print(f"checkpoint mismatch: {e}", file=sys.stderr)
        return EXIT_MISMATCH


if __name__ == "__main__":
    sys.exit(main())
