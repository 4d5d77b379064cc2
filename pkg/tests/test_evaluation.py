import hashlib
from collections import Counter

import numpy as np
import pytest

from roma.data import Dataset, gen_synthetic, sample_like
from roma.encoder import init_params
from roma.errors import ConfigError
from roma.evaluation import (EvalReport, ProbeConfig, collapse_diagnostics, embeddings_csv, evaluate,
                             export_embeddings, knn_eval, knn_predict, linear_probe, probe_accuracy)
from roma import checkpoint

FAST = ProbeConfig(epochs=20)


def test_probe_on_one_hot_features_is_perfect(rng):
    y = rng.integers(0, 5, 200)
    y[:5] = np.arange(5)
    x = np.eye(5)[y]
    assert probe_accuracy(x, y, x, y, FAST) == 1.0


def test_probe_on_constant_features_is_chance(rng):
    y = np.repeat(np.arange(4), 50)
    x = np.ones((200, 3))
    assert probe_accuracy(x, y, x, y, FAST) == pytest.approx(0.25)


def test_probe_shuffled_labels_is_near_chance():
    train = gen_synthetic(10, 100, 32, 0.15, seed=0)
    test = sample_like(train.means, 100, 0.15, seed=0, stream=2)
    # predictions within a cluster are strongly correlated, so the standard
    # error comes from repeated shuffles rather than a binomial formula
    accs = [probe_accuracy(train.samples, np.random.default_rng(s).permutation(train.labels),
                           test.samples, test.labels, ProbeConfig(epochs=10)) for s in range(30)]
    se = np.std(accs, ddof=1) / np.sqrt(len(accs))
    assert abs(np.mean(accs) - 0.1) <= 3 * se


def test_random_encoder_probe_between_extremes():
    train = gen_synthetic(10, 50, 32, 0.6, seed=0)
    test = sample_like(train.means, 50, 0.6, seed=0, stream=2)
    acc = linear_probe(init_params(32, (64,), 16, seed=0), train, test, FAST)
    assert 0.1 < acc < 1.0


def test_probe_rejects_missing_class():
    x = np.eye(3)
    with pytest.raises(ConfigError):
        probe_accuracy(x, [0, 0, 1], x, [0, 1, 2], FAST)


def brute_knn(train_x, train_y, test_x, k):
    a = train_x / np.linalg.norm(train_x, axis=1, keepdims=True)
    out = []
    for q in test_x:
        q = q / np.linalg.norm(q)
        ranked = sorted(range(len(a)), key=lambda j: (-float(q @ a[j]), j))[:k]
        counts = Counter(int(train_y[j]) for j in ranked)
        best = max(counts.values())
        out.append(min(c for c, v in counts.items() if v == best))
    return np.array(out)


def test_knn_matches_brute_force(rng):
    train_x = rng.standard_normal((200, 6))
    train_y = rng.integers(0, 5, 200)
    test_x = rng.standard_normal((60, 6))
    assert np.array_equal(knn_predict(train_x, train_y, test_x, 20), brute_knn(train_x, train_y, test_x, 20))


def test_knn_exact_match_and_clusters(rng):
    x = rng.standard_normal((10, 4))
    y = np.arange(10) % 3
    assert np.array_equal(knn_predict(x, y, x, 1), y)
    ds = gen_synthetic(2, 10, 6, 0.0, seed=0)
    pred = knn_predict(ds.samples[::2], ds.labels[::2], ds.samples[1::2], 3)
    assert np.mean(pred == ds.labels[1::2]) == 1.0


def test_knn_tie_goes_to_smaller_class():
    x = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert knn_predict(x, [1, 0], np.array([[1.0, 1.0]]), 2)[0] == 0


def test_knn_k_too_large():
    with pytest.raises(ConfigError):
        knn_predict(np.eye(3), [0, 1, 2], np.eye(3), 4)


def test_collapse_examples(rng):
    std, cos = collapse_diagnostics(np.tile([[0.6, 0.8]], (5, 1)))
    assert std == 0.0 and cos == pytest.approx(1.0)
    std, cos = collapse_diagnostics(np.eye(4))
    assert cos == 0.0


def test_collapse_uniform_sphere(rng):
    d = 16
    z = rng.standard_normal((20000, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    std, cos = collapse_diagnostics(z)
    assert abs(cos) < 1e-3
    assert std == pytest.approx(1 / np.sqrt(d), rel=0.02)


def test_collapse_matches_pairwise_oracle(rng):
    z = rng.standard_normal((30, 5))
    zn = z / np.linalg.norm(z, axis=1, keepdims=True)
    pairs = [zn[i] @ zn[j] for i in range(30) for j in range(30) if i != j]
    assert collapse_diagnostics(zn)[1] == pytest.approx(np.mean(pairs), abs=1e-12)


def test_export_layout_and_determinism(tmp_path):
    p = init_params(8, (12,), 6, seed=0)
    ds = gen_synthetic(3, 5, 8, 0.1, seed=0)
    export_embeddings(p, ds, tmp_path / "a.csv")
    export_embeddings(p, ds, tmp_path / "b.csv")
    lines = (tmp_path / "a.csv").read_text().splitlines()
    assert lines[0].split(",")[:3] == ["id", "label", "f0"]
    assert len(lines[0].split(",")) == 12 + 2 and len(lines) == len(ds) + 1
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_evaluation_leaves_params_untouched():
    p = init_params(8, (12,), 6, seed=0)
    train = gen_synthetic(3, 20, 8, 0.1, seed=0)
    test = sample_like(train.means, 5, 0.1, seed=0, stream=2)
    digest = lambda: hashlib.sha256(checkpoint.dumps(p.state_dict())).hexdigest()
    before = digest()
    rep = evaluate(p, train, test, FAST, knn_k=5)
    assert digest() == before
    assert 0 <= rep.probe_top1 <= 1 and 0 <= rep.knn_top1 <= 1 and rep.emb_std >= 0
    assert -1 <= rep.mean_offdiag_cos <= 1


def test_report_serialisation():
    rep = EvalReport(0.5, 0.25, 0.1, 0.2, {"train": {"seed": 3}})
    text = rep.to_text()
    assert "probe_top1=0.5\n" in text and "config.train.seed=3\n" in text
    assert rep.csv_header().count(",") == rep.csv_row().count(",") == 3
