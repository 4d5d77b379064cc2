"""Training objectives.

Each random-mapped loss is its plain counterpart evaluated on projected
embeddings: ``u^T (L^T L) v`` is computed as ``(L u) . (L v)``, and the identity
map leaves embeddings untouched, so ``*_roma(..., identity)`` is bit-identical
to the plain loss.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import BatchSizeError, ConfigError, DimensionError, NumericError
from .rngmap import RandomMap, project

LOSS_KINDS = ("triplet_ce", "nt_xent", "simsiam")
TRIPLET_PARTS = ("triplet_ce", "triplet", "ce")


@dataclass(frozen=True)
class LossParams:
    gamma: float = 1.0
    lam: float = 8.0
    tau: float = 0.5
    faithful_eq1: bool = False
    parts: str = "triplet_ce"

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigError("loss.gamma must be >= 0", key="loss.gamma")
        if self.lam < 0:
            raise ConfigError("loss.lambda must be >= 0", key="loss.lambda")
        if self.tau <= 0:
            raise ConfigError("loss.tau must be > 0", key="loss.tau")
        if self.parts not in TRIPLET_PARTS:
            raise ConfigError(f"unknown loss.parts {self.parts!r}", key="loss.parts")


def _finite(*ts: T.Tensor) -> None:
    for t in ts:
        if not np.all(np.isfinite(t.data)):
            raise NumericError("non-finite values in embeddings")


def bilinear_sim(u: T.Tensor, v: T.Tensor, rmap: RandomMap | None = None,
                 renormalize: bool = True) -> T.Tensor:
    """Row-wise similarity of u and v under ``rmap``.

    Accepts single vectors (returns a 0-d tensor) or n x d batches (returns (n,)).
    """
    if u.shape != v.shape:
        raise DimensionError(f"bilinear_sim: {u.shape} vs {v.shape}")
    single = u.ndim == 1
    if single:
        u = T.reshape(u, (1, u.shape[0]))
        v = T.reshape(v, (1, v.shape[0]))
    s = T.rowdot(project(rmap, u, renormalize), project(rmap, v, renormalize))
    return T.reshape(s, ()) if single else s


def triplet_ce_from_similarities(s_pos: T.Tensor, s_neg: T.Tensor, params: LossParams) -> T.Tensor:
    """Batch mean of hinge + lambda * CE given positive and negative similarities."""
    if params.faithful_eq1:
        margin = T.add_scalar(T.sub(s_pos, s_neg), params.gamma)
    else:
        margin = T.add_scalar(T.sub(s_neg, s_pos), params.gamma)
    hinge = T.relu(margin)
    logits = T.scale(T.stack_cols([s_pos, s_neg]), 1.0 / params.tau)
    ce = T.sub(T.logsumexp(logits), T.pick(logits, np.arange(s_pos.shape[0]), np.zeros(s_pos.shape[0])))
    if params.parts == "triplet":
        per_row = hinge
    elif params.parts == "ce":
        per_row = T.scale(ce, params.lam)
    else:
        per_row = T.add(hinge, T.scale(ce, params.lam))
    return T.mean(per_row)


def triplet_ce(anchors: T.Tensor, positives: T.Tensor, negatives: T.Tensor,
               params: LossParams = LossParams()) -> T.Tensor:
    """Triplet + cross-entropy loss with cosine similarity on unit rows."""
    if not (anchors.shape == positives.shape == negatives.shape) or anchors.ndim != 2:
        raise DimensionError("triplet batch needs three equal n x d tensors")
    _finite(anchors, positives, negatives)
    s_pos = T.rowdot(anchors, positives)
    s_neg = T.rowdot(anchors, negatives)
    return triplet_ce_from_similarities(s_pos, s_neg, params)


def triplet_ce_loss(anchors: T.Tensor, positives: T.Tensor, negatives: T.Tensor,
                    params: LossParams = LossParams(), rmap: RandomMap | None = None,
                    renormalize: bool = True) -> T.Tensor:
    """Random-mapped triplet + CE loss; one map is shared by all three branches."""
    _finite(anchors, positives, negatives)
    return triplet_ce(project(rmap, anchors, renormalize), project(rmap, positives, renormalize),
                      project(rmap, negatives, renormalize), params)


def _check_pairs(pair_index: np.ndarray, n: int) -> np.ndarray:
    pair_index = np.asarray(pair_index, dtype=np.intp)
    if pair_index.shape != (n,):
        raise DimensionError(f"pair_index needs {n} entries, got {pair_index.shape}")
    idx = np.arange(n)
    if np.any(pair_index == idx) or np.any(pair_index[pair_index] != idx):
        raise ValueError("pair_index must be a fixed-point-free involution")
    return pair_index


def default_pairs(n_sources: int) -> np.ndarray:
    """Pairing for views stacked as [view_a; view_b]: i <-> i + N."""
    return np.concatenate([np.arange(n_sources, 2 * n_sources), np.arange(n_sources)])


def nt_xent(views: T.Tensor, pair_index=None, params: LossParams = LossParams()) -> T.Tensor:
    """SimCLR's normalized temperature-scaled cross entropy over 2N views."""
    if views.ndim != 2 or views.shape[0] % 2:
        raise DimensionError(f"nt_xent needs an even number of view rows, got {views.shape}")
    n2 = views.shape[0]
    if n2 < 4:
        raise BatchSizeError("nt_xent needs N >= 2 sources (4 views)")
    _finite(views)
    pairs = _check_pairs(default_pairs(n2 // 2) if pair_index is None else pair_index, n2)
    logits = T.scale(T.matmul(views, T.transpose(views)), 1.0 / params.tau)
    lse = T.logsumexp(logits, mask=~np.eye(n2, dtype=bool))
    pos = T.pick(logits, np.arange(n2), pairs)
    return T.mean(T.sub(lse, pos))


def nt_xent_roma(views: T.Tensor, pair_index=None, params: LossParams = LossParams(),
                 rmap: RandomMap | None = None, renormalize: bool = True) -> T.Tensor:
    _finite(views)
    return nt_xent(project(rmap, views, renormalize), pair_index, params)


def simsiam(p1: T.Tensor, p2: T.Tensor, z1: T.Tensor, z2: T.Tensor) -> T.Tensor:
    """Symmetrized negative cosine; gradients never reach z1 or z2."""
    if not (p1.shape == p2.shape == z1.shape == z2.shape) or p1.ndim != 2:
        raise DimensionError("simsiam needs four equal n x d tensors")
    _finite(p1, p2, z1, z2)
    z1, z2 = T.stop_gradient(z1), T.stop_gradient(z2)
    per_row = T.add(T.rowdot(p1, z2), T.rowdot(p2, z1))
    return T.scale(T.mean(per_row), -0.5)


def simsiam_roma(p1: T.Tensor, p2: T.Tensor, z1: T.Tensor, z2: T.Tensor,
                 rmap: RandomMap | None = None, renormalize: bool = True) -> T.Tensor:
    if not (p1.shape == p2.shape == z1.shape == z2.shape):
        raise DimensionError("simsiam needs four equal n x d tensors")
    z1, z2 = T.stop_gradient(z1), T.stop_gradient(z2)
    return simsiam(*(project(rmap, t, renormalize) for t in (p1, p2, z1, z2)))
