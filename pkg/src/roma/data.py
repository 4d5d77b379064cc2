"""Datasets, augmentations and triplet construction.

Training code only ever sees ``Dataset.samples``; labels are kept on the
dataset for evaluation and never passed to anything that builds a loss.

Synthetic dataset file layout (all little-endian)::

    b"RMDS"            magic
    uint32             format version (1)
    uint32 N, uint32 D
    float32[N * D]     samples, row-major
    uint8[N]           labels
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import BatchSizeError, ConfigError, FormatError, GenerationError

CIFAR_RECORD = 3073
CIFAR_SIDE = 32
RMDS_MAGIC = b"RMDS"
RMDS_VERSION = 1

# minimum pairwise angle between synthetic class means
MIN_MEAN_ANGLE_DEG = 60.0


@dataclass
class Dataset:
    samples: np.ndarray          # (N, D) vectors or (N, H, W, 3) images in [0, 1]
    labels: np.ndarray           # (N,) uint8 class ids, evaluation only
    source: str = "synthetic"
    means: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def is_image(self) -> bool:
        return self.samples.ndim == 4

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def flat(self) -> np.ndarray:
        """Samples as an (N, D) float array, whatever their native layout."""
        return self.samples.reshape(len(self.samples), -1)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.samples[idx], self.labels[idx], self.source, self.means)


# -- synthetic ------------------------------------------------------------------

def _class_means(k: int, dim: int, rng: np.random.Generator, min_angle_deg: float) -> np.ndarray:
    max_cos = math.cos(math.radians(min_angle_deg))
    for _ in range(50):
        means = []
        for _ in range(200 * k):
            v = rng.standard_normal(dim)
            v /= np.linalg.norm(v)
            if all(float(v @ m) <= max_cos + 1e-12 for m in means):
                means.append(v)
                if len(means) == k:
                    return np.stack(means)
    raise GenerationError(f"cannot place {k} class means in {dim} dims at >= {min_angle_deg} degrees apart")


def gen_synthetic(k_classes: int, per_class: int, dim: int, spread: float, seed: int,
                  min_angle_deg: float = MIN_MEAN_ANGLE_DEG) -> Dataset:
    """Gaussian clusters around unit-sphere class means.

    Means are drawn uniformly on the sphere by rejection so every pair is at
    least ``min_angle_deg`` apart; each sample is its class mean plus
    N(0, spread^2) noise per coordinate.
    """
    if k_classes < 2:
        raise GenerationError("need at least 2 classes")
    if k_classes > 256:
        raise GenerationError("labels are stored as bytes; at most 256 classes")
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0]))
    means = _class_means(k_classes, dim, rng, min_angle_deg)
    return sample_like(means, per_class, spread, seed)


def sample_like(means: np.ndarray, per_class: int, spread: float, seed: int, stream: int = 1) -> Dataset:
    """Draw fresh samples around existing class means (``stream`` picks the noise draw)."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(stream)]))
    k, dim = means.shape
    labels = np.repeat(np.arange(k, dtype=np.uint8), per_class)
    samples = means[labels] + spread * rng.standard_normal((len(labels), dim))
    return Dataset(samples, labels, "synthetic", means)


def save_rmds(ds: Dataset, path) -> None:
    flat = np.ascontiguousarray(ds.flat(), dtype="<f4")
    n, d = flat.shape
    with open(path, "wb") as fh:
        fh.write(RMDS_MAGIC + struct.pack("<III", RMDS_VERSION, n, d))
        fh.write(flat.tobytes())
        fh.write(np.asarray(ds.labels, dtype=np.uint8).tobytes())


def load_rmds(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < 16 or raw[:4] != RMDS_MAGIC:
        raise FormatError(f"{path}: not an RMDS dataset file")
    version, n, d = struct.unpack_from("<III", raw, 4)
    if version != RMDS_VERSION:
        raise FormatError(f"{path}: unsupported RMDS version {version}")
    if len(raw) != 16 + 4 * n * d + n:
        raise FormatError(f"{path}: size {len(raw)} does not match header ({n} x {d})")
    samples = np.frombuffer(raw, dtype="<f4", count=n * d, offset=16).reshape(n, d).astype(np.float64)
    labels = np.frombuffer(raw, dtype=np.uint8, count=n, offset=16 + 4 * n * d).copy()
    return Dataset(samples, labels, "synthetic")


# -- CIFAR binary ---------------------------------------------------------------

def load_cifar_binary(path) -> Dataset:
    """Read CIFAR-10 binary records: 1 label byte + 1024 R + 1024 G + 1024 B bytes."""
    raw = np.fromfile(path, dtype=np.uint8)
    if raw.size % CIFAR_RECORD:
        raise FormatError(f"{path}: length {raw.size} is not a multiple of {CIFAR_RECORD}")
    records = raw.reshape(-1, CIFAR_RECORD)
    labels = records[:, 0].copy()
    if np.any(labels > 9):
        raise FormatError(f"{path}: label byte > 9 in record {int(np.argmax(labels > 9))}")
    pixels = records[:, 1:].reshape(-1, 3, CIFAR_SIDE, CIFAR_SIDE).transpose(0, 2, 3, 1)
    return Dataset(pixels.astype(np.float64) / 255.0, labels, "cifar_binary")


def write_cifar_binary(ds: Dataset, path) -> None:
    pixels = np.clip(np.rint(ds.samples * 255.0), 0, 255).astype(np.uint8)
    if pixels.shape[1:] != (CIFAR_SIDE, CIFAR_SIDE, 3):
        raise FormatError(f"CIFAR records need 32x32x3 images, got {pixels.shape[1:]}")
    body = pixels.transpose(0, 3, 1, 2).reshape(len(pixels), -1)
    records = np.concatenate([np.asarray(ds.labels, dtype=np.uint8)[:, None], body], axis=1)
    records.tofile(path)


# -- augmentation ---------------------------------------------------------------

@dataclass(frozen=True)
class AugmentConfig:
    # vectors
    noise_sigma: float = 0.1
    scale_range: tuple = (0.8, 1.2)
    mask_prob: float = 0.1
    # images
    crop_scale_range: tuple = (0.2, 1.0)
    flip_prob: float = 0.5
    brightness: float = 0.4
    contrast: float = 0.4
    saturation: float = 0.4
    jitter_prob: float = 0.8
    grayscale_prob: float = 0.2
    blur_prob: float = 0.0
    solarize_prob: float = 0.0

    def __post_init__(self):
        for name in ("mask_prob", "flip_prob", "jitter_prob", "grayscale_prob", "blur_prob", "solarize_prob"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ConfigError(f"data.augment.{name} must lie in [0, 1], got {p}", key=f"data.augment.{name}")
        if self.noise_sigma < 0:
            raise ConfigError("data.augment.noise_sigma must be >= 0", key="data.augment.noise_sigma")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ConfigError("data.augment.scale_range must satisfy 0 < lo <= hi", key="data.augment.scale_range")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ConfigError("data.augment.crop_scale_range must lie in (0, 1]", key="data.augment.crop_scale_range")

    @classmethod
    def identity(cls) -> "AugmentConfig":
        return cls(noise_sigma=0.0, scale_range=(1.0, 1.0), mask_prob=0.0, crop_scale_range=(1.0, 1.0),
                   flip_prob=0.0, jitter_prob=0.0, grayscale_prob=0.0, blur_prob=0.0, solarize_prob=0.0)


def augment_vectors(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random rescale, coordinate dropout and additive Gaussian noise, row-wise."""
    n, d = x.shape
    lo, hi = cfg.scale_range
    s = rng.uniform(lo, hi, size=(n, 1)) if hi > lo else np.full((n, 1), lo)
    keep = rng.random((n, d)) >= cfg.mask_prob if cfg.mask_prob > 0 else 1.0
    noise = cfg.noise_sigma * rng.standard_normal((n, d)) if cfg.noise_sigma > 0 else 0.0
    return (x * s * keep + noise).astype(x.dtype)


def hflip(img: np.ndarray) -> np.ndarray:
    return img[:, ::-1, :]


def _random_resized_crop(img, scale_range, rng):
    h, w, _ = img.shape
    lo, hi = scale_range
    if lo == hi == 1.0:
        return img
    for _ in range(10):
        area = h * w * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(math.log(3 / 4), math.log(4 / 3)))
        ch = int(round(math.sqrt(area / ratio)))
        cw = int(round(math.sqrt(area * ratio)))
        if 0 < ch <= h and 0 < cw <= w:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            break
    else:
        ch, cw, top, left = h, w, 0, 0
    rows = top + (np.arange(h) * ch // h)
    cols = left + (np.arange(w) * cw // w)
    return img[rows][:, cols]


def _gray(img):
    g = img @ np.array([0.299, 0.587, 0.114])
    return np.repeat(g[..., None], 3, axis=2)


def _blur(img):
    k = np.array([0.25, 0.5, 0.25])
    pad = np.pad(img, ((1, 1), (1, 1), (0, 0)), mode="edge")
    tmp = k[0] * pad[:-2] + k[1] * pad[1:-1] + k[2] * pad[2:]
    return k[0] * tmp[:, :-2] + k[1] * tmp[:, 1:-1] + k[2] * tmp[:, 2:]


def augment_image(img: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Crop/resize, flip, channel-affine colour jitter, grayscale, blur, solarize."""
    out = _random_resized_crop(img, cfg.crop_scale_range, rng)
    if cfg.flip_prob > 0 and rng.random() < cfg.flip_prob:
        out = hflip(out)
    if cfg.jitter_prob > 0 and rng.random() < cfg.jitter_prob:
        b = 1 + rng.uniform(-cfg.brightness, cfg.brightness)
        c = 1 + rng.uniform(-cfg.contrast, cfg.contrast)
        s = 1 + rng.uniform(-cfg.saturation, cfg.saturation)
        out = out * b
        out = (out - out.mean()) * c + out.mean()
        g = _gray(out)
        out = g + (out - g) * s
    if cfg.grayscale_prob > 0 and rng.random() < cfg.grayscale_prob:
        out = _gray(out)
    if cfg.blur_prob > 0 and rng.random() < cfg.blur_prob:
        out = _blur(out)
    if cfg.solarize_prob > 0 and rng.random() < cfg.solarize_prob:
        out = np.where(out >= 0.5, 1.0 - out, out)
    return np.clip(out, 0.0, 1.0)


def augment_batch(x: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    if x.ndim == 4:
        return np.stack([augment_image(img, cfg, rng) for img in x])
    return augment_vectors(x, cfg, rng)


def augment_pair(sample: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator):
    """Two independent views of one sample."""
    batch = sample[None]
    return augment_batch(batch, cfg, rng)[0], augment_batch(batch, cfg, rng)[0]


def derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random permutation with no fixed points (rejection sampling)."""
    if n < 2:
        raise BatchSizeError("a derangement needs at least 2 elements")
    idx = np.arange(n)
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == idx):
            return perm


@dataclass
class Triplets:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray
    negative_source: np.ndarray   # index into the batch of each negative's source


def make_triplets(sources: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> Triplets:
    """One (anchor, positive, negative) triple per source; negatives via a derangement."""
    b = len(sources)
    if b < 2:
        raise BatchSizeError(f"triplets need at least 2 sources per batch, got {b}")
    perm = derangement(b, rng)
    anchors = augment_batch(sources, cfg, rng)
    positives = augment_batch(sources, cfg, rng)
    negatives = augment_batch(sources[perm], cfg, rng)
    return Triplets(anchors, positives, negatives, perm)
