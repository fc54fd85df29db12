"""Bidirectional LSTM regressor: parameters, initialization, forward pass.

The network consumes one vector per timestep -- the (optionally
projected) prompt embedding plus a sinusoidal encoding of the step
index -- runs it through stacked bidirectional LSTM layers, and maps
each step's concatenated hidden state through a small MLP with a final
sigmoid, yielding one score in (0, 1) per step.

Everything is plain numpy in float64. The gate axis is fused: weight
matrices have 4*hidden columns ordered input, forget, cell, output.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ..errors import ValidationError
from ..types import EmbeddingVector

GATE_ORDER = ("input", "forget", "cell", "output")
DIRECTIONS = ("fwd", "bwd")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture and training hyperparameters.

    ``embed_dim`` is both the positional-encoding width and the width the
    prompt embedding must have after the (optional) input projection.
    ``mlp_dims`` defaults to (2*hidden, 128, 1); its first entry must be
    the bidirectional hidden width and its last must be 1.
    """

    embed_dim: int = 64
    hidden: int = 64
    num_layers: int = 2
    mlp_dims: tuple[int, ...] = ()
    dropout_rate: float = 0.2
    learning_rate: float = 1e-4
    batch_size: int = 32
    epochs: int = 25
    rng_seed: int = 0
    use_position_embedding: bool = True
    train_stride: int = 1

    def __post_init__(self):
        if self.embed_dim < 2 or self.embed_dim % 2 != 0:
            raise ValidationError("embed_dim must be even and >= 2")
        if self.hidden < 1 or self.num_layers < 1:
            raise ValidationError("hidden and num_layers must be positive")
        mlp = tuple(self.mlp_dims) or (2 * self.hidden, 128, 1)
        if mlp[0] != 2 * self.hidden:
            raise ValidationError(
                f"mlp_dims[0] must equal 2*hidden={2 * self.hidden}, got {mlp[0]}"
            )
        if mlp[-1] != 1:
            raise ValidationError(f"mlp_dims[-1] must be 1, got {mlp[-1]}")
        if len(mlp) < 2 or any(d < 1 for d in mlp):
            raise ValidationError(f"bad mlp_dims {mlp}")
        object.__setattr__(self, "mlp_dims", mlp)
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must be in [0, 1)")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("learning_rate, batch_size, epochs must be positive")
        if self.train_stride < 1:
            raise ValidationError("train_stride must be >= 1")

    def to_dict(self) -> dict:
        return {
            "embed_dim": self.embed_dim,
            "hidden": self.hidden,
            "num_layers": self.num_layers,
            "mlp_dims": list(self.mlp_dims),
            "dropout_rate": self.dropout_rate,
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "epochs": self.epochs,
            "rng_seed": self.rng_seed,
            "use_position_embedding": self.use_position_embedding,
            "train_stride": self.train_stride,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        if "mlp_dims" in obj:
            obj["mlp_dims"] = tuple(obj["mlp_dims"])
        return cls(**obj)


@dataclass
class DirectionParams:
    """One direction of one LSTM layer (fused gate axis)."""

    w_x: np.ndarray  # (in_dim, 4*hidden)
    w_h: np.ndarray  # (hidden, 4*hidden)
    bias: np.ndarray  # (4*hidden,)


@dataclass
class PredictorParams:
    """All learnable tensors of one metric's regressor.

    ``projection`` is empty when the native prompt-embedding width equals
    ``embed_dim``; otherwise it holds [weight (input_dim, embed_dim),
    bias (embed_dim,)].
    """

    input_dim: int
    projection: list[np.ndarray] = field(default_factory=list)
    layers: list[list[DirectionParams]] = field(default_factory=list)
    mlp: list[list[np.ndarray]] = field(default_factory=list)

    def named_tensors(self) -> Iterator[tuple[str, np.ndarray]]:
        """Deterministic (name, tensor) walk; also the checkpoint order."""
        if self.projection:
            yield "projection.weight", self.projection[0]
            yield "projection.bias", self.projection[1]
        for li, directions in enumerate(self.layers):
            for di, dp in enumerate(directions):
                tag = f"lstm{li}.{DIRECTIONS[di]}"
                yield f"{tag}.w_x", dp.w_x
                yield f"{tag}.w_h", dp.w_h
                yield f"{tag}.bias", dp.bias
        for mi, (w, b) in enumerate(self.mlp):
            yield f"mlp{mi}.weight", w
            yield f"mlp{mi}.bias", b

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        for own_name, arr in self.named_tensors():
            if own_name == name:
                if arr.shape != value.shape:
                    raise ValidationError(
                        f"tensor {name}: shape {value.shape} != expected {arr.shape}"
                    )
                arr[...] = value
                return
        raise ValidationError(f"unknown tensor name {name!r}")

    def zeros_like(self) -> "PredictorParams":
        out = PredictorParams(input_dim=self.input_dim)
        out.projection = [np.zeros_like(a) for a in self.projection]
        out.layers = [
            [DirectionParams(np.zeros_like(d.w_x), np.zeros_like(d.w_h), np.zeros_like(d.bias))
             for d in directions]
            for directions in self.layers
        ]
        out.mlp = [[np.zeros_like(w), np.zeros_like(b)] for w, b in self.mlp]
        return out

    def copy(self) -> "PredictorParams":
        out = self.zeros_like()
        for name, arr in self.named_tensors():
            out.set_tensor(name, arr)
        return out

    def check_finite(self) -> None:
        for name, arr in self.named_tensors():
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"tensor {name} contains non-finite values")


def init_params(
    config: ModelConfig,
    input_dim: int,
    rng: np.random.Generator,
) -> PredictorParams:
    """Draw initial weights.

    LSTM weights and biases are uniform in [-1/sqrt(hidden), 1/sqrt(hidden)]
    with the forget-gate bias pinned to +1 so memory survives early
    training. Projection and MLP layers use the same uniform rule with
    their own fan-in. Draw order matches ``named_tensors``.
    """
    h = config.hidden
    params = PredictorParams(input_dim=input_dim)

    def uniform(shape, bound):
        return rng.uniform(-bound, bound, size=shape)

    if input_dim != config.embed_dim:
        bound = 1.0 / np.sqrt(input_dim)
        params.projection = [
            uniform((input_dim, config.embed_dim), bound),
            uniform((config.embed_dim,), bound),
        ]

    bound = 1.0 / np.sqrt(h)
    in_dim = config.embed_dim
    for _ in range(config.num_layers):
        directions = []
        for _ in DIRECTIONS:
            w_x = uniform((in_dim, 4 * h), bound)
            w_h = uniform((h, 4 * h), bound)
            bias = uniform((4 * h,), bound)
            bias[h:2 * h] = 1.0  # forget gate
            directions.append(DirectionParams(w_x, w_h, bias))
        params.layers.append(directions)
        in_dim = 2 * h

    dims = config.mlp_dims
    for fan_in, fan_out in zip(dims, dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.mlp.append([uniform((fan_in, fan_out), bound), uniform((fan_out,), bound)])
    return params


def zero_params(config: ModelConfig, input_dim: int) -> PredictorParams:
    """All-zero parameters with the right structure (sigmoid(0)=0.5 output)."""
    return init_params(config, input_dim, np.random.default_rng(0)).zeros_like()


# ---------------------------------------------------------------------------
# Positional encoding

def position_matrix(steps: np.ndarray, dim: int) -> np.ndarray:
    """Sinusoidal encodings, one row per step: row[2k] = sin(t/10000^(2k/dim)),
    row[2k+1] = cos(t/10000^(2k/dim))."""
    if dim < 2 or dim % 2 != 0:
        raise ValidationError(f"positional dim must be even and >= 2, got {dim}")
    steps = np.asarray(steps, dtype=np.float64)
    inv_freq = 10000.0 ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)
    angles = steps[:, None] * inv_freq[None, :]
    out = np.empty((steps.size, dim), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def position_embedding(t: int, dim: int) -> EmbeddingVector:
    if t < 0:
        raise ValidationError(f"timestep must be >= 0, got {t}")
    return EmbeddingVector(position_matrix(np.array([t]), dim)[0])


# ---------------------------------------------------------------------------
# Forward pass

def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _run_direction(
    x: np.ndarray,
    p: DirectionParams,
    reverse: bool,
) -> tuple[np.ndarray, dict]:
    """Unroll one LSTM direction over a (B, T, D) input.

    ``reverse`` processes the sequence back-to-front; outputs are
    realigned to input order. The cache keeps activations in processing
    order for backprop.
    """
    b, t_len, _ = x.shape
    h_dim = p.w_h.shape[0]
    xs = x[:, ::-1] if reverse else x
    zx = xs @ p.w_x + p.bias  # (B, T, 4H), input contribution precomputed

    gates = np.empty((b, t_len, 4 * h_dim))
    cells = np.empty((b, t_len, h_dim))
    tanh_cells = np.empty((b, t_len, h_dim))
    hidden = np.empty((b, t_len, h_dim))

    h = np.zeros((b, h_dim))
    c = np.zeros((b, h_dim))
    for t in range(t_len):
        z = zx[:, t] + h @ p.w_h
        i = _sigmoid(z[:, :h_dim])
        f = _sigmoid(z[:, h_dim:2 * h_dim])
        g = np.tanh(z[:, 2 * h_dim:3 * h_dim])
        o = _sigmoid(z[:, 3 * h_dim:])
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        gates[:, t, :h_dim] = i
        gates[:, t, h_dim:2 * h_dim] = f
        gates[:, t, 2 * h_dim:3 * h_dim] = g
        gates[:, t, 3 * h_dim:] = o
        cells[:, t] = c
        tanh_cells[:, t] = tc
        hidden[:, t] = h

    aligned = hidden[:, ::-1] if reverse else hidden
    cache = {
        "x": xs, "gates": gates, "cells": cells,
        "tanh_cells": tanh_cells, "hidden": hidden, "reverse": reverse,
    }
    return aligned, cache


def _forward_internal(
    params: PredictorParams,
    config: ModelConfig,
    emb_batch: np.ndarray,
    steps: np.ndarray,
    dropout_mask: np.ndarray | None = None,
) -> tuple[np.ndarray, dict]:
    """Batched forward pass; returns per-step scores (B, T) plus the
    activation cache the backward pass consumes."""
    if emb_batch.ndim != 2:
        raise ValidationError("embedding batch must be 2-D (batch, dim)")
    if emb_batch.shape[1] != params.input_dim:
        raise ValidationError(
            f"embedding width {emb_batch.shape[1]} != model input_dim {params.input_dim}"
        )
    steps = np.asarray(steps, dtype=np.int64)
    if steps.size == 0 or np.any(np.diff(steps) <= 0):
        raise ValidationError("steps must be non-empty and strictly increasing")

    if params.projection:
        base = emb_batch @ params.projection[0] + params.projection[1]
    else:
        base = emb_batch
    if base.shape[1] != config.embed_dim:
        raise ValidationError(
            f"projected width {base.shape[1]} != embed_dim {config.embed_dim}"
        )

    if config.use_position_embedding:
        seq = base[:, None, :] + position_matrix(steps, config.embed_dim)[None, :, :]
    else:
        seq = np.broadcast_to(base[:, None, :], (base.shape[0], steps.size, base.shape[1])).copy()

    layer_caches = []
    layer_in = seq
    for directions in params.layers:
        h_f, cache_f = _run_direction(layer_in, directions[0], reverse=False)
        h_b, cache_b = _run_direction(layer_in, directions[1], reverse=True)
        layer_caches.append((cache_f, cache_b))
        layer_in = np.concatenate([h_f, h_b], axis=2)

    y = layer_in
    if dropout_mask is not None:
        y = y * dropout_mask

    b, t_len, width = y.shape
    act = y.reshape(b * t_len, width)
    mlp_inputs = []
    mlp_pre = []
    for idx, (w, bvec) in enumerate(params.mlp):
        mlp_inputs.append(act)
        z = act @ w + bvec
        mlp_pre.append(z)
        act = np.maximum(z, 0.0) if idx < len(params.mlp) - 1 else z
    pred = _sigmoid(act[:, 0]).reshape(b, t_len)

    cache = {
        "emb": emb_batch, "base": base, "seq": seq, "steps": steps,
        "layers": layer_caches, "bilstm_out": layer_in,
        "dropout_mask": dropout_mask,
        "mlp_inputs": mlp_inputs, "mlp_pre": mlp_pre, "pred": pred,
    }
    return pred, cache


def forward(
    params: PredictorParams,
    config: ModelConfig,
    prompt_embedding: EmbeddingVector,
    steps: np.ndarray,
) -> np.ndarray:
    """Score one prompt at the given steps (inference: dropout disabled)."""
    pred, _ = _forward_internal(
        params, config, prompt_embedding.values[None, :], np.asarray(steps)
    )
    return pred[0]
