import math

import numpy as np
import pytest

from edgeprop.diagnostics import random_graph, random_params
from edgeprop.graph import DatasetSplit
from edgeprop.metrics import classification_report, confusion_matrix, metrics_from_confusion
from edgeprop.model import ModelConfig
from edgeprop.numeric import softmax_cross_entropy
from edgeprop.pipeline import prepare_transactions
from edgeprop.synth import SynthConfig, generate
from edgeprop.trainer import (
    TrainConfig,
    TrainState,
    estimator_variance_report,
    evaluate,
    minibatch_loss,
    record_to_state,
    state_to_record,
    train,
    warm_history,
)
from edgeprop.checkpoint import decode, encode
from oracles import metrics_oracle
from toy import toy_problem


class TestMinibatchLoss:
    def test_uniform(self):
        loss, _ = minibatch_loss([[0.0, 0.0]], [1])
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_confident(self):
        loss, d = minibatch_loss([[500.0, 0.0], [0.0, 500.0]], [0, 1])
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.abs(d).max() < 1e-12

    def test_mean_of_rows(self, rng):
        logits = rng.normal(size=(3, 4))
        labels = [0, 3, 1]
        loss, d = minibatch_loss(logits, labels)
        rows = [softmax_cross_entropy(z, y) for z, y in zip(logits, labels)]
        assert loss == pytest.approx(np.mean([r[0] for r in rows]), abs=1e-12)
        np.testing.assert_allclose(d, np.array([r[1] for r in rows]) / 3, atol=1e-15)

    def test_bad_label(self):
        with pytest.raises(ValueError):
            minibatch_loss([[0.0, 0.0]], [2])


class TestMetrics:
    def test_worked_example(self):
        r = metrics_from_confusion([[2, 1], [1, 1]])
        assert r.accuracy == pytest.approx(0.6)
        assert r.macro_precision == pytest.approx(7 / 12)
        assert r.macro_recall == pytest.approx(7 / 12)
        assert r.macro_f1 == pytest.approx(7 / 12)

    def test_perfect(self):
        r = classification_report([0, 1, 2, 1], [0, 1, 2, 1], 3)
        assert (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1) == (1, 1, 1, 1)

    def test_never_predicted_class(self):
        r = classification_report([0, 1, 1, 0], [0, 0, 0, 0], 2)
        assert r.precision[1] == 0.0
        assert r.macro_precision == pytest.approx(r.precision[0] / 2)

    def test_confusion_orientation(self):
        cm = confusion_matrix([0, 0, 1], [1, 1, 1], 2)
        assert cm.tolist() == [[0, 2], [0, 1]]

    def test_random_vs_oracle(self, rng):
        for _ in range(100):
            c = int(rng.integers(2, 6))
            cm = rng.integers(0, 5, size=(c, c)) * (rng.random((c, c)) < 0.6)
            cm[0, 0] += 1
            r = metrics_from_confusion(cm)
            assert (r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1) == metrics_oracle(cm.tolist())


class TestTrain:
    def test_patience(self):
        graph, split = toy_problem()
        cfg = TrainConfig(lr=1e-12, patience=100, max_epochs=500, d_embed=4, augmented=False, batch_size=64)
        res = train(graph, split, cfg)
        assert res.state.epoch == 101 and len(res.log) == 101
        assert res.state.best_epoch == 1

    def test_deterministic(self):
        graph, split = toy_problem()
        cfg = TrainConfig(lr=1e-2, max_epochs=8, d_embed=8, augmented=False, batch_size=16, sample_size=1)
        a, b = train(graph, split, cfg), train(graph, split, cfg)
        assert [(r.train_loss, r.val_accuracy) for r in a.log] == [(r.train_loss, r.val_accuracy) for r in b.log]
        assert all(x.tobytes() == y.tobytes() for x, y in zip(a.params.arrays().values(), b.params.arrays().values()))

    def test_learns_edge_signal(self):
        graph, split = toy_problem()
        cfg = TrainConfig(lr=1e-2, max_epochs=150, patience=150, d_embed=8, augmented=False, batch_size=16)
        res = train(graph, split, cfg)
        assert evaluate(res.params, graph, split.train, res.config).accuracy >= 0.99

    def test_returns_best(self):
        graph, split = toy_problem(1)
        cfg = TrainConfig(lr=3e-2, max_epochs=40, patience=40, d_embed=8, augmented=False, batch_size=8)
        res = train(graph, split, cfg)
        best_row = max(res.log, key=lambda r: (r.val_accuracy, -r.epoch))
        assert res.state.best_epoch == best_row.epoch
        assert evaluate(res.params, graph, split.validation, res.config).accuracy == res.state.best_val

    def test_resume_matches_straight_run(self):
        graph, split = toy_problem(2)
        cfg = TrainConfig(lr=1e-2, max_epochs=10, patience=50, d_embed=6, augmented=False, batch_size=16, sample_size=1)
        straight = train(graph, split, cfg)
        first = train(graph, split, cfg, stop_after=4)
        assert first.state.epoch == 4
        rec = decode(encode(state_to_record(first.state, {"note": "x"})))
        resumed = train(graph, split, cfg, state=record_to_state(rec))
        key = [(r.epoch, r.train_loss, r.val_accuracy) for r in straight.log]
        assert [(r.epoch, r.train_loss, r.val_accuracy) for r in resumed.log] == key
        for k, a in straight.params.arrays().items():
            assert a.tobytes() == resumed.params.arrays()[k].tobytes()

    def test_cv_disabled_runs(self):
        graph, split = toy_problem()
        res = train(graph, split, TrainConfig(max_epochs=2, d_embed=4, cv_enabled=False, augmented=False))
        assert len(res.log) == 2

    def test_head_only_baseline(self):
        graph, split = toy_problem()
        res = train(graph, split, TrainConfig(K=0, max_epochs=3, d_embed=4, augmented=False))
        assert res.params.K == 0 and len(res.log) == 3

    def test_empty_train(self):
        graph, split = toy_problem()
        with pytest.raises(ValueError):
            train(graph, DatasetSplit(np.array([], int), split.validation, split.test, 0), TrainConfig())

    def test_smoothed_loss_decreases(self):
        data = generate(SynthConfig(N=400, seed=3))
        prep = prepare_transactions(data.nodes, data.transactions, split_seed=3)
        cfg = TrainConfig(lr=2e-3, max_epochs=20, patience=20, d_embed=16)
        losses = np.array([r.train_loss for r in train(prep.graph, prep.split, cfg).log])
        smooth = np.convolve(losses, np.ones(5) / 5, mode="valid")
        assert np.all(np.diff(smooth) <= 1e-12)

    def test_evaluate_is_pure(self):
        graph, split = toy_problem()
        cfg = ModelConfig(d_embed=4, augmented=False)
        params = random_params(np.random.default_rng(0), graph, cfg)
        before = {k: a.copy() for k, a in params.arrays().items()}
        a = evaluate(params, graph, split.test, cfg)
        b = evaluate(params, graph, split.test, cfg)
        assert a.as_dict() == b.as_dict()
        assert all(np.array_equal(before[k], v) for k, v in params.arrays().items())


class TestVarianceReport:
    def setup_graph(self, rng):
        g = random_graph(rng, 30, edge_prob=0.5)
        cfg = ModelConfig(K=1, d_embed=4, augmented=False, num_classes=3)
        return g, cfg, random_params(rng, g, cfg)

    def test_large_sample_is_exact(self, rng):
        g, cfg, params = self.setup_graph(rng)
        rows = estimator_variance_report(g, params, cfg, trials=5, sample_size=int(g.in_degree.max()))
        assert all(r.plain_mse == pytest.approx(0, abs=1e-24) and r.cv_mse == pytest.approx(0, abs=1e-24) for r in rows)

    def test_current_history(self, rng):
        g, cfg, params = self.setup_graph(rng)
        rows = estimator_variance_report(g, params, cfg, trials=20, sample_size=3)
        for r in rows:
            assert r.cv_mse < 1e-20
            if r.deg > 3:
                assert r.plain_mse > 0

    def test_zero_history(self, rng):
        g, cfg, params = self.setup_graph(rng)
        zero = warm_history(g, params, cfg)
        for h, s in zip(zero.edge, zero.node_sum):
            h[:] = 0
            s[:] = 0
        rows = estimator_variance_report(g, params, cfg, trials=20, sample_size=3, history=zero)
        for r in rows:
            assert r.cv_mse == pytest.approx(r.plain_mse, abs=1e-9)

    def test_fresh_state_shapes(self):
        graph, _ = toy_problem()
        st = TrainState.fresh(graph, TrainConfig(d_embed=5, augmented=False))
        assert st.history.edge[0].shape == (graph.num_edges, 5)
