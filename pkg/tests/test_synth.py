import numpy as np
import pytest
from sklearn.linear_model import LogisticRegression

from edgeprop.graph import collapse_multiedges
from edgeprop.pipeline import prepare_transactions
from edgeprop.synth import SynthConfig, generate


def test_deterministic():
    a, b = generate(SynthConfig(N=200, seed=5)), generate(SynthConfig(N=200, seed=5))
    for x, y in zip(a.transactions, b.transactions):
        assert x.tobytes() == y.tobytes()
    assert a.nodes.features.tobytes() == b.nodes.features.tobytes()


def test_seed_matters():
    a, b = generate(SynthConfig(N=200, seed=5)), generate(SynthConfig(N=200, seed=6))
    assert not np.array_equal(a.labels_full, b.labels_full)


def test_structure():
    cfg = SynthConfig(N=300, seed=1)
    d = generate(cfg)
    tx = d.transactions
    assert np.all(tx.src != tx.dst)
    assert np.all(tx.value > 0) and np.all(tx.timestamp >= 0)
    out_deg = np.bincount(collapse_multiedges(tuple(tx)).src, minlength=cfg.N)
    assert out_deg.min() >= 1
    assert d.nodes.dim == cfg.F


@pytest.mark.parametrize("seed", range(3))
def test_label_balance(seed):
    cfg = SynthConfig(N=2000, seed=seed, class_prior=[0.7, 0.3])
    labels = generate(cfg).labels_full
    n = cfg.N
    for c, p in enumerate(cfg.prior()):
        assert abs(np.sum(labels == c) - n * p) <= 3 * np.sqrt(n * p * (1 - p))


def test_mean_value_separation():
    d = generate(SynthConfig(N=1000, seed=0))
    e = collapse_multiedges(tuple(d.transactions))
    sender = d.labels_full[e.src]
    m1, m0 = e.features[sender == 1, 2], e.features[sender == 0, 2]
    se = np.sqrt(m1.var() / m1.size + m0.var() / m0.size)
    assert m1.mean() - m0.mean() >= 2 * se


def test_labeled_fraction():
    d = generate(SynthConfig(N=500, seed=2, labeled_fraction=0.5))
    frac = np.mean(d.nodes.labels >= 0)
    assert 0.4 < frac < 0.6
    assert np.all(d.labels_full >= 0)


def test_passes_ingestion():
    d = generate(SynthConfig(N=20, seed=0))
    prep = prepare_transactions(d.nodes, d.transactions, split_seed=0)
    g = prep.graph
    np.testing.assert_array_equal(g.in_degree, g.out_degree)
    assert g.in_degree.sum() == g.num_edges


def probe_accuracy(gap, seed):
    d = generate(SynthConfig(N=400, seed=seed, signal_log_mean=gap, burst_scale=1.0))
    e = collapse_multiedges(tuple(d.transactions))
    X = np.log1p(e.features)
    y = d.labels_full[e.src]
    half = X.shape[0] // 2
    clf = LogisticRegression(max_iter=1000).fit(X[:half], y[:half])
    return clf.score(X[half:], y[half:])


def test_signal_monotone():
    inversions = 0
    for seed in range(5):
        accs = [probe_accuracy(g, seed) for g in (0.1, 0.5, 1.5)]
        inversions += sum(b < a for a, b in zip(accs, accs[1:]))
    assert inversions <= 1


def test_symmetric_config_has_no_signal():
    cfg = SynthConfig(N=2000, seed=0, node_signal=0.0, signal_log_mean=0.0, burst_scale=1.0)
    d = generate(cfg)
    e = collapse_multiedges(tuple(d.transactions))
    y = d.labels_full[e.src]
    X = np.log1p(e.features)
    half = X.shape[0] // 2
    acc = LogisticRegression(max_iter=1000).fit(X[:half], y[:half]).score(X[half:], y[half:])
    majority = max(np.mean(y[half:]), 1 - np.mean(y[half:]))
    assert acc <= majority + 0.03


@pytest.mark.parametrize("kwargs", [
    {"N": 10}, {"C": 1}, {"class_prior": [0.5, 0.6]}, {"out_degree_mean": 0}, {"labeled_fraction": 0},
    {"value_log_mean": [[0.0]]},
])
def test_invalid_config(kwargs):
    with pytest.raises(ValueError):
        SynthConfig(**kwargs)
