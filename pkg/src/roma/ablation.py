"""Ablation grids over loss parts, batch size, map dimension, regeneration
frequency and map distribution.

Batch sizes and map dimensions are scaled to the desk-scale setup: batch sizes
are the reference grid {64, ..., 1024} divided by ``BATCH_SCALE``, and map
dimensions are fractions/multiples of the projector width, mirroring
{256, ..., 8192} around a 2048-wide projector.
"""

from __future__ import annotations

import csv
import io
import logging
from pathlib import Path

from .config import ExperimentConfig
from .experiment import load_datasets, run
from .errors import ConfigError
from .plotting import plot_ablation

log = logging.getLogger(__name__)

AXES = ("loss", "batch", "dim", "frequency", "strategy")
BATCH_SCALE = 8
COLUMNS = ["axis", "variant", "setting", "final_loss", "probe_top1", "knn_top1",
           "emb_std", "mean_offdiag_cos", "regen_count"]


def variants(axis: str, cfg: ExperimentConfig) -> list[tuple[str, dict]]:
    """(label, dotted overrides) for every run on ``axis``."""
    if axis == "loss":
        return [("Triplet", {"loss.parts": "triplet"}), ("CE", {"loss.parts": "ce"}),
                ("Triplet+CE", {"loss.parts": "triplet_ce"})]
    if axis == "frequency":
        return [("NoRandom", {"random.frequency": "none"}), ("1Batch", {"random.frequency": "per_batch"}),
                ("1Epoch", {"random.frequency": "per_epoch"}),
                ("10Epoch", {"random.frequency": "per_k_epochs", "random.k": 10})]
    if axis == "strategy":
        return [("Bernoulli", {"random.distribution": "rademacher"}),
                ("Uniform", {"random.distribution": "uniform"}),
                ("Normal", {"random.distribution": "normal"})]
    if axis == "batch":
        return [(str(b), {"train.batch_size": max(2, b // BATCH_SCALE)}) for b in (64, 128, 256, 512, 1024)]
    if axis == "dim":
        d = cfg.encoder.projector_dim
        # reference projector width 2048 -> labels 256 .. 8192
        return [(str(2048 * num // den), {"random.dim_out": max(1, d * num // den)})
                for num, den in ((1, 8), (1, 4), (1, 2), (1, 1), (2, 1), (4, 1))]
    raise ConfigError(f"unknown ablation axis {axis!r}", key="axis")


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in COLUMNS})
    return buf.getvalue()


def run_axis(cfg: ExperimentConfig, axis: str, out_dir) -> list[dict]:
    """One seeded run per variant; writes ``ablation_<axis>.csv`` and ``.png``."""
    grid = variants(axis, cfg)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_set, test_set = load_datasets(cfg)
    rows = []
    for label, overrides in grid:
        run_cfg = cfg.replace(**overrides)
        run_dir = out_dir / axis / label.replace("+", "_")
        res = run(run_cfg, train_set, test_set, run_dir)
        setting = ";".join(f"{k}={v}" for k, v in overrides.items())
        rows.append({"axis": axis, "variant": label, "setting": setting, "final_loss": res.final_loss,
                     "probe_top1": res.report.probe_top1, "knn_top1": res.report.knn_top1,
                     "emb_std": res.report.emb_std, "mean_offdiag_cos": res.report.mean_offdiag_cos,
                     "regen_count": res.records[-1]["regen_count"] if res.records else 0})
        log.info("%s %s probe %.4f knn %.4f (%.1fs)", axis, label, res.report.probe_top1,
                 res.report.knn_top1, res.seconds)
    (out_dir / f"ablation_{axis}.csv").write_text(table_csv(rows))
    plot_ablation(rows, axis, out_dir / f"ablation_{axis}.png")
    return rows
