"""Frozen-feature evaluation: linear probe, cosine kNN, collapse diagnostics,
embedding export.

All evaluation runs on backbone features in eval mode; the projector and any
random map play no part.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .data import Dataset
from .encoder import EncoderParams
from .errors import ConfigError


@dataclass
class EvalReport:
    probe_top1: float = float("nan")
    knn_top1: float = float("nan")
    emb_std: float = float("nan")
    mean_offdiag_cos: float = float("nan")
    config: dict = field(default_factory=dict)

    def to_text(self) -> str:
        lines = [f"{k}={_fmt(v)}" for k, v in asdict(self).items() if k != "config"]
        lines += [f"config.{k}={v}" for k, v in sorted(_flatten(self.config).items())]
        return "\n".join(lines) + "\n"

    def csv_header(self) -> str:
        return "probe_top1,knn_top1,emb_std,mean_offdiag_cos"

    def csv_row(self) -> str:
        return ",".join(_fmt(v) for v in (self.probe_top1, self.knn_top1, self.emb_std, self.mean_offdiag_cos))


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def _flatten(d: dict, prefix: str = "") -> dict:
    out = {}
    for k, v in d.items():
        if isinstance(v, dict):
            out.update(_flatten(v, f"{prefix}{k}."))
        else:
            out[f"{prefix}{k}"] = v
    return out


def collapse_diagnostics(embeddings: np.ndarray) -> tuple[float, float]:
    """(mean per-dimension std, mean pairwise cosine over distinct rows)."""
    z = np.asarray(embeddings, dtype=np.float64)
    n = len(z)
    if n < 2:
        raise ValueError("collapse diagnostics need at least 2 rows")
    emb_std = float(z.std(axis=0).mean())
    zn = z / np.maximum(np.linalg.norm(z, axis=1, keepdims=True), 1e-12)
    col = zn.sum(axis=0)
    total = float(col @ col) - float((zn * zn).sum())
    return emb_std, total / (n * (n - 1))


# -- linear probe --------------------------------------------------------------

@dataclass(frozen=True)
class ProbeConfig:
    epochs: int = 100
    base_lr: float = 30.0
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 0.0
    standardize: bool = True

    @property
    def lr(self) -> float:
        return self.base_lr * self.batch_size / 256


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    m = logits.max(axis=1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def fit_linear_probe(x: np.ndarray, y: np.ndarray, num_classes: int, cfg: ProbeConfig,
                     rng: np.random.Generator):
    """Multinomial logistic regression by minibatch SGD, momentum and cosine decay.

    Returns (W, b, mu, sd) where mu, sd are the standardization statistics.
    """
    x = np.asarray(x, dtype=np.float64)
    n, d = x.shape
    mu = x.mean(axis=0) if cfg.standardize else np.zeros(d)
    sd = x.std(axis=0) + 1e-6 if cfg.standardize else np.ones(d)
    xs = (x - mu) / sd
    W = np.zeros((d, num_classes))
    b = np.zeros(num_classes)
    vW, vb = np.zeros_like(W), np.zeros_like(b)
    steps_per_epoch = math.ceil(n / cfg.batch_size)
    total = max(1, cfg.epochs * steps_per_epoch)
    onehot = np.eye(num_classes)[y]
    step = 0
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for s in range(steps_per_epoch):
            idx = order[s * cfg.batch_size:(s + 1) * cfg.batch_size]
            xb = xs[idx]
            p = np.exp(_log_softmax(xb @ W + b))
            g = (p - onehot[idx]) / len(idx)
            gW = xb.T @ g + cfg.weight_decay * W
            gb = g.sum(axis=0)
            lr = cfg.lr * 0.5 * (1 + math.cos(math.pi * step / total))
            vW = cfg.momentum * vW + gW
            vb = cfg.momentum * vb + gb
            W -= lr * vW
            b -= lr * vb
            step += 1
    return W, b, mu, sd


def probe_accuracy(train_x, train_y, test_x, test_y, cfg: ProbeConfig = ProbeConfig(), seed: int = 0) -> float:
    train_y = np.asarray(train_y, dtype=np.intp)
    test_y = np.asarray(test_y, dtype=np.intp)
    num_classes = int(max(train_y.max(), test_y.max())) + 1
    missing = sorted(set(range(num_classes)) - set(train_y.tolist()))
    if missing:
        raise ConfigError(f"classes {missing} are absent from the probe training set")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 3]))
    W, b, mu, sd = fit_linear_probe(train_x, train_y, num_classes, cfg, rng)
    pred = np.argmax(((np.asarray(test_x, dtype=np.float64) - mu) / sd) @ W + b, axis=1)
    return float(np.mean(pred == test_y))


def linear_probe(params: EncoderParams, train_set: Dataset, test_set: Dataset,
                 cfg: ProbeConfig = ProbeConfig(), seed: int = 0) -> float:
    """Top-1 accuracy of a linear classifier on frozen backbone features."""
    return probe_accuracy(params.features(train_set.flat()), train_set.labels,
                          params.features(test_set.flat()), test_set.labels, cfg, seed)


# -- kNN ------------------------------------------------------------------------

def knn_predict(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray, k: int) -> np.ndarray:
    """Majority vote among the k most cosine-similar training rows.

    Neighbours with equal similarity are ranked by training index; equal vote
    counts go to the smaller class id.
    """
    train_y = np.asarray(train_y, dtype=np.intp)
    if k < 1:
        raise ConfigError("knn k must be >= 1", key="eval.knn_k")
    if k > len(train_x):
        raise ConfigError(f"knn k={k} exceeds training set size {len(train_x)}", key="eval.knn_k")
    a = train_x / np.maximum(np.linalg.norm(train_x, axis=1, keepdims=True), 1e-12)
    q = test_x / np.maximum(np.linalg.norm(test_x, axis=1, keepdims=True), 1e-12)
    sims = q @ a.T
    nn = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    num_classes = int(train_y.max()) + 1
    votes = np.zeros((len(q), num_classes), dtype=np.int64)
    np.add.at(votes, (np.repeat(np.arange(len(q)), k), train_y[nn].ravel()), 1)
    return np.argmax(votes, axis=1)


def knn_eval(params: EncoderParams, train_set: Dataset, test_set: Dataset, k: int = 20) -> float:
    pred = knn_predict(params.features(train_set.flat()), train_set.labels, params.features(test_set.flat()), k)
    return float(np.mean(pred == test_set.labels))


# -- export ---------------------------------------------------------------------

def embeddings_csv(features: np.ndarray, labels: np.ndarray) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "label", *(f"f{j}" for j in range(features.shape[1]))])
    for i, (row, lab) in enumerate(zip(features, labels)):
        w.writerow([i, int(lab), *(repr(float(v)) for v in row)])
    return buf.getvalue()


def export_embeddings(params: EncoderParams, dataset: Dataset, path) -> None:
    """Write ``id,label,f0..`` rows of backbone features."""
    Path(path).write_text(embeddings_csv(params.features(dataset.flat()), dataset.labels))


def evaluate(params: EncoderParams, train_set: Dataset, test_set: Dataset,
             cfg: ProbeConfig = ProbeConfig(), knn_k: int = 20, seed: int = 0,
             config_echo: dict | None = None) -> EvalReport:
    feats = params.features(test_set.flat())
    emb_std, cos = collapse_diagnostics(feats / np.maximum(np.linalg.norm(feats, axis=1, keepdims=True), 1e-12))
    return EvalReport(
        probe_top1=linear_probe(params, train_set, test_set, cfg, seed),
        knn_top1=knn_eval(params, train_set, test_set, min(knn_k, len(train_set))),
        emb_std=emb_std, mean_offdiag_cos=cos, config=config_echo or {})
