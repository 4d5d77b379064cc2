"""Glue between a resolved config, datasets, training and evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .config import ExperimentConfig
from .data import Dataset, gen_synthetic, load_cifar_binary, load_rmds, sample_like
from .encoder import EncoderParams
from .errors import ConfigError
from .evaluation import EvalReport, ProbeConfig, evaluate
from .trainer import train


def _load_file(source: str, path) -> Dataset:
    if not Path(path).exists():
        raise ConfigError(f"data file {path} does not exist", key="data.path")
    return load_cifar_binary(path) if source == "cifar_binary" else load_rmds(path)


def load_datasets(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    """(train, test) per the ``data`` section.

    Synthetic test samples come from the same class means with an independent
    noise stream. File sources without ``test_path`` hold out every fifth sample.
    """
    d = cfg.data
    seed = d.seed if d.seed is not None else cfg.train.seed
    if d.source == "synthetic":
        train_set = gen_synthetic(d.k_classes, d.per_class, d.dim, d.spread, seed)
        return train_set, sample_like(train_set.means, d.test_per_class, d.spread, seed, stream=2)
    full = _load_file(d.source, d.path)
    if d.test_path:
        return full, _load_file(d.source, d.test_path)
    held = np.arange(len(full)) % 5 == 4
    return full.subset(np.flatnonzero(~held)), full.subset(np.flatnonzero(held))


def probe_config(cfg: ExperimentConfig) -> ProbeConfig:
    e = cfg.eval
    return ProbeConfig(e.probe_epochs, e.probe_base_lr, e.probe_batch_size, e.probe_momentum,
                       e.probe_weight_decay, e.standardize)


@dataclass
class RunResult:
    params: EncoderParams
    records: list
    report: EvalReport
    seconds: float

    @property
    def final_loss(self) -> float:
        return self.records[-1]["loss"] if self.records else float("nan")


def run(cfg: ExperimentConfig, train_set: Dataset, test_set: Dataset,
        out_dir: Optional[Path] = None) -> RunResult:
    """Train, then evaluate the frozen backbone."""
    t0 = time.perf_counter()
    params, records = train(cfg, train_set, out_dir)
    report = evaluate(params, train_set, test_set, probe_config(cfg), cfg.eval.knn_k,
                      seed=cfg.train.seed, config_echo=cfg.to_dict())
    return RunResult(params, records, report, time.perf_counter() - t0)
