"""MLP encoder: backbone, three-layer projector, optional predictor.

Layer layout (``d`` = projector width)::

    backbone   linear -> leaky_relu(0.2)           (per configured width)
    projector  linear -> bn -> leaky_relu(0.2)
               linear -> bn -> leaky_relu(0.2)
               linear -> bn
    predictor  linear(d -> d/4) -> bn -> leaky_relu(0.2) -> linear(d/4 -> d)

Weights are drawn from N(0, 1/fan_in) so unit-variance inputs give roughly
unit-variance pre-activations; biases start at zero.

Eval mode is tape-free and multiplies one row at a time, which makes a row's
features independent of the batch it is encoded in, bit for bit. BLAS picks
different kernels for different row counts, so a batched product would not
guarantee that.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import tensor as T
from .errors import BatchSizeError, ConfigError, DimensionError
from .seeding import rng as substream

SLOPE = 0.2


@dataclass
class Linear:
    weight: T.Tensor
    bias: T.Tensor

    @property
    def shape(self) -> tuple:
        return self.weight.shape

    def __call__(self, x: T.Tensor) -> T.Tensor:
        return T.add_row(T.matmul(x, self.weight), self.bias)

    def eval(self, x: np.ndarray) -> np.ndarray:
        w, b = self.weight.data, self.bias.data
        return np.stack([row @ w for row in x]) + b if len(x) else np.zeros((0, w.shape[1]), w.dtype)


def _linear(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> Linear:
    w = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
    return Linear(T.Tensor(w.astype(dtype), requires_grad=True),
                  T.Tensor(np.zeros(fan_out, dtype=dtype), requires_grad=True))


class Forward(NamedTuple):
    features: T.Tensor      # backbone output, used for evaluation
    z_raw: T.Tensor         # projector output before normalization
    z: T.Tensor             # unit-norm embedding fed to the loss


@dataclass
class EncoderParams:
    backbone: list[Linear]
    projector: list[tuple[Linear, T.BatchNorm]]
    predictor: list | None = None
    dtype: type = np.float64
    widths: dict = field(default_factory=dict)

    def describe(self) -> list[str]:
        """One line per layer, in forward order."""
        lines = []
        for lin in self.backbone:
            lines += [f"backbone.linear({lin.shape[0]}->{lin.shape[1]})", f"backbone.leaky_relu({SLOPE})"]
        for i, (lin, bn) in enumerate(self.projector):
            lines += [f"projector.linear({lin.shape[0]}->{lin.shape[1]})", f"projector.bn({bn.dim})"]
            if i < len(self.projector) - 1:
                lines.append(f"projector.leaky_relu({SLOPE})")
        if self.predictor is not None:
            (l1, bn), l2 = self.predictor
            lines += [f"predictor.linear({l1.shape[0]}->{l1.shape[1]})", f"predictor.bn({bn.dim})",
                      f"predictor.leaky_relu({SLOPE})", f"predictor.linear({l2.shape[0]}->{l2.shape[1]})"]
        return lines

    def named_parameters(self) -> list[tuple[str, T.Tensor, bool]]:
        """(name, tensor, weight_decay) for every trainable tensor."""
        out = []
        for i, lin in enumerate(self.backbone):
            out += [(f"backbone.{i}.weight", lin.weight, True), (f"backbone.{i}.bias", lin.bias, False)]
        for i, (lin, bn) in enumerate(self.projector):
            out += [(f"projector.{i}.weight", lin.weight, True), (f"projector.{i}.bias", lin.bias, False),
                    (f"projector.{i}.bn.gamma", bn.gamma, False), (f"projector.{i}.bn.beta", bn.beta, False)]
        if self.predictor is not None:
            (l1, bn), l2 = self.predictor
            out += [("predictor.0.weight", l1.weight, True), ("predictor.0.bias", l1.bias, False),
                    ("predictor.0.bn.gamma", bn.gamma, False), ("predictor.0.bn.beta", bn.beta, False),
                    ("predictor.1.weight", l2.weight, True), ("predictor.1.bias", l2.bias, False)]
        return out

    def batch_norms(self) -> list[tuple[str, T.BatchNorm]]:
        bns = [(f"projector.{i}.bn", bn) for i, (_, bn) in enumerate(self.projector)]
        if self.predictor is not None:
            bns.append(("predictor.0.bn", self.predictor[0][1]))
        return bns

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: t.data.copy() for name, t, _ in self.named_parameters()}
        for name, bn in self.batch_norms():
            state[f"{name}.running_mean"] = bn.running_mean.copy()
            state[f"{name}.running_var"] = bn.running_var.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        expected = self.state_dict()
        if set(expected) != set(state):
            missing = sorted(set(expected) ^ set(state))
            raise ConfigError(f"checkpoint arrays do not match encoder layout: {missing[:4]}")
        for name, t, _ in self.named_parameters():
            if state[name].shape != t.shape:
                raise DimensionError(f"{name}: {state[name].shape} vs {t.shape}")
            t.data = np.array(state[name], dtype=self.dtype)
        for name, bn in self.batch_norms():
            bn.running_mean = np.array(state[f"{name}.running_mean"], dtype=self.dtype)
            bn.running_var = np.array(state[f"{name}.running_var"], dtype=self.dtype)

    def zero_grad(self) -> None:
        for _, t, _ in self.named_parameters():
            t.grad = None

    # -- forward ---------------------------------------------------------------

    def forward(self, x, mode: str = "train") -> Forward:
        if mode == "eval":
            return self._forward_eval(np.asarray(x.data if isinstance(x, T.Tensor) else x, dtype=self.dtype))
        if mode != "train":
            raise ValueError(f"unknown mode {mode!r}")
        x = x if isinstance(x, T.Tensor) else T.Tensor(np.asarray(x, dtype=self.dtype))
        if x.shape[0] < 2:
            raise BatchSizeError(f"train mode needs at least 2 rows, got {x.shape[0]}")
        h = x
        for lin in self.backbone:
            h = T.leaky_relu(lin(h), SLOPE)
        z = h
        for i, (lin, bn) in enumerate(self.projector):
            z = bn(lin(z), "train")
            if i < len(self.projector) - 1:
                z = T.leaky_relu(z, SLOPE)
        return Forward(h, z, T.l2_normalize(z))

    def _forward_eval(self, x: np.ndarray) -> Forward:
        h = x
        for lin in self.backbone:
            h = _leaky(lin.eval(h))
        z = h
        for i, (lin, bn) in enumerate(self.projector):
            z = _bn_eval(lin.eval(z), bn)
            if i < len(self.projector) - 1:
                z = _leaky(z)
        z_t = T.Tensor(z)
        return Forward(T.Tensor(h), z_t, T.l2_normalize(z_t))

    def features(self, x) -> np.ndarray:
        """Frozen backbone features (eval mode, no tape)."""
        return self.forward(x, "eval").features.data


def _leaky(a: np.ndarray) -> np.ndarray:
    return np.where(a > 0, a, a * a.dtype.type(SLOPE))


def _bn_eval(a: np.ndarray, bn: T.BatchNorm) -> np.ndarray:
    inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
    return ((a - bn.running_mean) * inv * bn.gamma.data + bn.beta.data).astype(a.dtype)


def init_params(input_dim: int, backbone_widths=(512, 512), projector_dim: int = 512,
                predictor: bool = False, seed: int = 0, dtype=np.float64) -> EncoderParams:
    if input_dim < 1 or not backbone_widths:
        raise ConfigError("encoder needs an input dim and at least one backbone width",
                          key="encoder.backbone_widths")
    rng = substream(seed, "init")
    widths = [input_dim, *backbone_widths]
    backbone = [_linear(rng, a, b, dtype) for a, b in zip(widths[:-1], widths[1:])]
    dims = [widths[-1], projector_dim, projector_dim, projector_dim]
    projector = [(_linear(rng, a, b, dtype), T.BatchNorm(b, dtype=dtype)) for a, b in zip(dims[:-1], dims[1:])]
    pred = None
    if predictor:
        hidden = max(1, projector_dim // 4)
        pred = [(_linear(rng, projector_dim, hidden, dtype), T.BatchNorm(hidden, dtype=dtype)),
                _linear(rng, hidden, projector_dim, dtype)]
    return EncoderParams(backbone, projector, pred, dtype,
                         widths={"input": input_dim, "backbone": list(backbone_widths),
                                 "projector": projector_dim, "predictor": predictor})


def encode(params: EncoderParams, x, mode: str = "train") -> T.Tensor:
    """Unit-norm projector embeddings."""
    return params.forward(x, mode).z


def predict(params: EncoderParams, z_raw: T.Tensor, mode: str = "train") -> T.Tensor:
    """Unit-norm predictor output for raw projector embeddings."""
    if params.predictor is None:
        raise ConfigError("predict() called on an encoder without a predictor", key="encoder.predictor")
    (l1, bn), l2 = params.predictor
    if mode == "eval":
        a = _leaky(_bn_eval(l1.eval(z_raw.data), bn))
        return T.l2_normalize(T.Tensor(l2.eval(a)))
    h = T.leaky_relu(bn(l1(z_raw), "train"), SLOPE)
    return T.l2_normalize(l2(h))


def from_state(state: dict[str, np.ndarray]) -> EncoderParams:
    """Rebuild an encoder whose layout matches a checkpoint's arrays."""
    try:
        nb = 1 + max(int(k.split(".")[1]) for k in state if k.startswith("backbone."))
        input_dim = state["backbone.0.weight"].shape[0]
        widths = [state[f"backbone.{i}.weight"].shape[1] for i in range(nb)]
        projector_dim = state["projector.2.weight"].shape[1]
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"checkpoint is missing encoder arrays ({exc})") from exc
    dtype = state["backbone.0.weight"].dtype.type
    params = init_params(input_dim, widths, projector_dim, "predictor.0.weight" in state, seed=0, dtype=dtype)
    params.load_state_dict(state)
    return params
