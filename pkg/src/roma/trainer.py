"""Self-supervised training loop.

One step: pick a minibatch of sources, build views (triplets or pairs),
encode them in one train-mode pass, project through the current random map,
evaluate the loss, backpropagate and apply SGD with momentum under a cosine
learning-rate schedule. The learning rate follows
``effective_lr = base_lr * batch_size / 256``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import ExperimentConfig
from .data import Dataset, augment_batch, make_triplets
from .encoder import EncoderParams, init_params, predict
from .errors import ConfigError, DimensionError, NumericError
from .evaluation import collapse_diagnostics
from .losses import default_pairs, nt_xent_roma, simsiam_roma, triplet_ce_loss
from .rngmap import RandomMap, maybe_regenerate, pending
from .seeding import rng as substream
from .seeding import substream_seed

log = logging.getLogger(__name__)

METRICS_HEADER = "epoch,step,loss,lr,emb_std,mean_offdiag_cos,regen_count"


class TrainingAborted(NumericError):
    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


def lr_at(step: int, total_steps: int, effective_lr: float) -> float:
    """Cosine decay from ``effective_lr`` at step 0 to 0 at ``total_steps``."""
    if total_steps < 1 or not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    return effective_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


@dataclass
class OptimizerState:
    velocity: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def sgd_step(params: list[tuple[str, T.Tensor, bool]], state: OptimizerState, lr: float,
             momentum: float = 0.9, weight_decay: float = 0.0) -> None:
    """g = grad + wd * p (decayed params only); v = m * v + g; p -= lr * v."""
    for name, p, decay in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise DimensionError(f"{name}: grad {g.shape} vs param {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p.data)
        elif v.shape != p.shape:
            raise DimensionError(f"{name}: velocity {v.shape} vs param {p.shape}")
        v *= momentum
        v += g
        if decay and weight_decay:
            v += weight_decay * p.data
        p.data -= lr * v
    state.step += 1


def batches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches covering all ``n`` rows; a final 1-row batch joins its predecessor."""
    order = rng.permutation(n)
    out = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(out) > 1 and len(out[-1]) < 2:
        last = out.pop()
        out[-1] = np.concatenate([out[-1], last])
    return out


def batch_loss(params: EncoderParams, sources: np.ndarray, cfg: ExperimentConfig, rmap: RandomMap,
               rng: np.random.Generator) -> T.Tensor:
    dtype = params.dtype
    renorm = cfg.random.renormalize
    kind = cfg.loss.kind
    lp = cfg.loss.params()
    b = len(sources)
    if kind == "triplet_ce":
        trip = make_triplets(sources, cfg.data.augment, rng)
        x = np.concatenate([trip.anchors, trip.positives, trip.negatives]).reshape(3 * b, -1)
        z = params.forward(x.astype(dtype), "train").z
        za, zp, zn = (T.slice_rows(z, i * b, (i + 1) * b) for i in range(3))
        loss = triplet_ce_loss(za, zp, zn, lp, rmap, renorm)
        if cfg.train.symmetrize:
            mirrored = triplet_ce_loss(zp, za, zn, lp, rmap, renorm)
            loss = T.scale(T.add(loss, mirrored), 0.5)
        return loss
    va = augment_batch(sources, cfg.data.augment, rng)
    vb = augment_batch(sources, cfg.data.augment, rng)
    x = np.concatenate([va, vb]).reshape(2 * b, -1).astype(dtype)
    fwd = params.forward(x, "train")
    if kind == "nt_xent":
        return nt_xent_roma(fwd.z, default_pairs(b), lp, rmap, renorm)
    p = predict(params, fwd.z_raw)
    p1, p2 = T.slice_rows(p, 0, b), T.slice_rows(p, b, 2 * b)
    z1, z2 = T.slice_rows(fwd.z, 0, b), T.slice_rows(fwd.z, b, 2 * b)
    return simsiam_roma(p1, p2, z1, z2, rmap, renorm)


def initial_map(cfg: ExperimentConfig) -> RandomMap:
    seed = cfg.random.seed if cfg.random.seed is not None else substream_seed(cfg.train.seed, "map")
    if cfg.random.frequency == "none":
        return RandomMap.identity(cfg.encoder.projector_dim)
    return pending(cfg.random.distribution, cfg.random_dim_out, cfg.encoder.projector_dim, seed,
                   cfg.random.scaled)


def build_encoder(cfg: ExperimentConfig, input_dim: int) -> EncoderParams:
    return init_params(input_dim, cfg.encoder.backbone_widths, cfg.encoder.projector_dim,
                       cfg.encoder.predictor or cfg.loss.kind == "simsiam", seed=cfg.train.seed,
                       dtype=T.DTYPES[cfg.train.precision])


def format_metrics(records: list[dict]) -> str:
    lines = [METRICS_HEADER]
    for r in records:
        lines.append(",".join([str(r["epoch"]), str(r["step"]), repr(r["loss"]), repr(r["lr"]),
                               repr(r["emb_std"]), repr(r["mean_offdiag_cos"]), str(r["regen_count"])]))
    return "\n".join(lines) + "\n"


def train(cfg: ExperimentConfig, dataset: Dataset, out_dir: Optional[Path] = None,
          on_epoch: Optional[Callable[[dict], None]] = None) -> tuple[EncoderParams, list[dict]]:
    """Run the configured number of epochs; returns final params and per-epoch records.

    With ``out_dir`` set, writes ``checkpoint.roma`` at the end (plus
    ``checkpoint_eNNNN.roma`` every ``train.checkpoint_every`` epochs) and
    ``metrics.csv``.
    """
    if len(dataset) < 2:
        raise ConfigError("dataset needs at least 2 samples", key="data")
    tc = cfg.train
    x_all = dataset.flat()
    params = build_encoder(cfg, x_all.shape[1])
    named = params.named_parameters()
    state = OptimizerState()
    rmap = initial_map(cfg)
    schedule = cfg.random.schedule()

    n = len(dataset)
    n_batches = len(batches(n, tc.batch_size, np.random.default_rng(0)))
    total_steps = max(1, tc.epochs * n_batches)
    diag_idx = np.arange(min(n, tc.diag_samples))
    records: list[dict] = []
    step = 0
    for epoch in range(tc.epochs):
        order_rng = substream(tc.seed, "data", epoch)
        losses = []
        lr = 0.0
        for bi, idx in enumerate(batches(n, tc.batch_size, order_rng)):
            rmap = maybe_regenerate(rmap, schedule, epoch, bi)
            lr = lr_at(step, total_steps, tc.effective_lr)
            aug_rng = substream(tc.seed, "augment", epoch, bi)
            sources = dataset.samples[idx]
            loss = batch_loss(params, sources, cfg, rmap, aug_rng)
            value = loss.item()
            if not math.isfinite(value):
                record = {"epoch": epoch, "step": step, "loss": value, "lr": lr,
                          "regen_count": rmap.generation_index}
                raise TrainingAborted(f"non-finite loss at epoch {epoch}, step {step}", record)
            params.zero_grad()
            loss.backward()
            sgd_step(named, state, lr, tc.momentum, tc.weight_decay)
            losses.append(value)
            step += 1
        z = params.forward(x_all[diag_idx], "eval").z.data
        emb_std, cos = collapse_diagnostics(z)
        rec = {"epoch": epoch + 1, "step": step, "loss": float(np.mean(losses)), "lr": float(lr),
               "emb_std": emb_std, "mean_offdiag_cos": cos, "regen_count": rmap.generation_index}
        records.append(rec)
        log.info("epoch %d loss %.4f lr %.4g emb_std %.4f cos %.3f", epoch + 1, rec["loss"], lr, emb_std, cos)
        if on_epoch is not None:
            on_epoch(rec)
        if out_dir is not None and tc.checkpoint_every and (epoch + 1) % tc.checkpoint_every == 0:
            checkpoint.save(Path(out_dir) / f"checkpoint_e{epoch + 1:04d}.roma", params.state_dict())
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(out_dir / "checkpoint.roma", params.state_dict())
        (out_dir / "metrics.csv").write_text(format_metrics(records))
    return params, records
