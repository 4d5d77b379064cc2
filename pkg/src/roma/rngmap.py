"""Random linear maps applied to embeddings before similarity.

A map ``L`` of shape (d_out, d_in) induces the bilinear similarity
``u^T (L^T L) v = (L u) . (L v)``, which is positive semidefinite by
construction. Maps never take part in optimization: ``L`` is a plain numpy
array and enters the graph only as a constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError

DISTRIBUTIONS = ("normal", "uniform", "rademacher", "bernoulli01")
POLICIES = ("none", "per_batch", "per_epoch", "per_k_epochs")


@dataclass(frozen=True)
class RandomMap:
    """One draw of a random projection, or the identity when ``L`` is None.

    ``generation_index`` counts how many maps have been drawn in this stream;
    a map with index 0 and no matrix is the not-yet-drawn starting state.
    """

    L: Optional[np.ndarray]
    distribution: str = "normal"
    seed: int = 0
    generation_index: int = 0
    d_in: int = 0
    d_out: int = 0
    scaled: bool = False

    @classmethod
    def identity(cls, d: int = 0) -> "RandomMap":
        return cls(L=None, distribution="identity", d_in=d, d_out=d)

    @property
    def is_identity(self) -> bool:
        return self.L is None

    def bilinear_matrix(self) -> np.ndarray:
        """M = L^T L (identity when no matrix is set)."""
        if self.L is None:
            return np.eye(self.d_in)
        return self.L.T @ self.L


def _sample(distribution: str, shape: tuple, rng: np.random.Generator) -> np.ndarray:
    if distribution == "normal":
        return rng.standard_normal(shape)
    if distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=shape)
    if distribution == "rademacher":
        return rng.integers(0, 2, size=shape).astype(np.float64) * 2.0 - 1.0
    if distribution == "bernoulli01":
        return rng.integers(0, 2, size=shape).astype(np.float64)
    raise ConfigError(f"unknown random distribution {distribution!r}", key="random.distribution")


def generate(distribution: str, d_out: int, d_in: int, seed: int, index: int,
             scaled: bool = False) -> RandomMap:
    """Draw the ``index``-th map of the stream identified by ``seed``.

    Entries are i.i.d.: normal N(0, 1), uniform U(-1, 1), rademacher +-1, or
    bernoulli01 {0, 1} with p = 1/2. ``scaled`` divides entries by sqrt(d_out).
    """
    if distribution not in DISTRIBUTIONS:
        raise ConfigError(f"unknown random distribution {distribution!r}", key="random.distribution")
    if d_out < 1 or d_in < 1:
        raise DimensionError(f"random map needs positive dims, got {d_out}x{d_in}")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    L = _sample(distribution, (d_out, d_in), rng)
    if scaled:
        L = L / math.sqrt(d_out)
    L.setflags(write=False)
    return RandomMap(L=L, distribution=distribution, seed=int(seed), generation_index=int(index),
                     d_in=d_in, d_out=d_out, scaled=scaled)


def project(rmap: RandomMap | None, z: T.Tensor, renormalize: bool = True) -> T.Tensor:
    """Map rows of ``z`` by ``L``; gradients reach ``z`` but never ``L``.

    The identity map returns ``z`` itself so that identity-mapped losses are
    bit-identical to their plain versions.
    """
    if rmap is None or rmap.is_identity:
        return z
    if z.ndim != 2 or z.shape[1] != rmap.L.shape[1] or z.shape[0] < 1:
        raise DimensionError(f"project: map expects (n, {rmap.L.shape[1]}), got {z.shape}")
    Lt = T.Tensor(np.ascontiguousarray(rmap.L.T), dtype=z.dtype)
    out = T.matmul(z, Lt)
    return T.l2_normalize(out) if renormalize else out


@dataclass(frozen=True)
class RegenSchedule:
    policy: str = "per_epoch"
    k: int = 10

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown random.frequency {self.policy!r}", key="random.frequency")
        if self.k < 1:
            raise ConfigError("random.k must be a positive integer", key="random.k")

    def is_boundary(self, epoch: int, batch: int) -> bool:
        if self.policy == "per_batch":
            return True
        if self.policy == "per_epoch":
            return batch == 0
        if self.policy == "per_k_epochs":
            return batch == 0 and epoch % self.k == 0
        return False

    def expected_generations(self, epochs: int, batches_per_epoch: int) -> int:
        """Closed-form number of draws over a full run."""
        if epochs <= 0 or batches_per_epoch <= 0:
            return 0
        if self.policy == "per_batch":
            return epochs * batches_per_epoch
        if self.policy == "per_epoch":
            return epochs
        if self.policy == "per_k_epochs":
            return -(-epochs // self.k)
        return 0


def maybe_regenerate(rmap: RandomMap, schedule: RegenSchedule, epoch: int, batch: int) -> RandomMap:
    """Return a fresh draw at schedule boundaries, otherwise ``rmap`` unchanged."""
    if epoch < 0 or batch < 0:
        raise ValueError("epoch and batch must be non-negative")
    if schedule.policy == "none":
        return rmap if rmap.is_identity else RandomMap.identity(rmap.d_in)
    if not schedule.is_boundary(epoch, batch):
        return rmap
    return generate(rmap.distribution, rmap.d_out, rmap.d_in, rmap.seed,
                    rmap.generation_index + 1, scaled=rmap.scaled)


def pending(distribution: str, d_out: int, d_in: int, seed: int, scaled: bool = False) -> RandomMap:
    """Starting state of a map stream: no matrix drawn yet."""
    if distribution not in DISTRIBUTIONS:
        raise ConfigError(f"unknown random distribution {distribution!r}", key="random.distribution")
    return RandomMap(L=None, distribution=distribution, seed=int(seed), generation_index=0,
                     d_in=d_in, d_out=d_out, scaled=scaled)
