"""Dense encoder mapping inputs to a low-dimensional latent space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from .autograd import BatchNormState, Tensor

ACTIVATIONS = ("relu", "leaky_relu")
LEAKY_SLOPE = 0.01


@dataclass
class EncoderConfig:
    input_dim: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64, 64])
    latent_dim: int = 6
    activation: str = "relu"
    final_batchnorm: bool = True
    seed: int = 0

    def validate(self) -> None:
        dims = [self.input_dim, *self.hidden_dims, self.latent_dim]
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"encoder dimensions must be >= 1, got {dims}")
        if self.latent_dim > 64:
            raise ValueError(f"latent_dim must be <= 64, got {self.latent_dim}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


@dataclass
class EncoderParams:
    config: EncoderConfig
    weights: list[Tensor]
    biases: list[Tensor]
    batchnorm: BatchNormState | None

    def parameters(self) -> list[Tensor]:
        params = [p for pair in zip(self.weights, self.biases) for p in pair]
        if self.batchnorm is not None:
            params.extend(self.batchnorm.parameters())
        return params


def init_encoder(config: EncoderConfig) -> EncoderParams:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, deterministic per seed."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    dims = [config.input_dim, *config.hidden_dims, config.latent_dim]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(ag.parameter(rng.uniform(-bound, bound, size=(fan_in, fan_out))))
        biases.append(ag.parameter(np.zeros(fan_out)))
    bn = BatchNormState.create(config.latent_dim) if config.final_batchnorm else None
    return EncoderParams(config, weights, biases, bn)


def encode(params: EncoderParams, x: Tensor | np.ndarray, train: bool = False) -> Tensor:
    """Hidden linear+activation layers, a final linear projection, then batchnorm."""
    x = x if isinstance(x, Tensor) else ag.tensor(x)
    if x.data.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ag.ShapeError(f"encoder expects (B, {params.config.input_dim}) input, got {x.shape}")
    slope = LEAKY_SLOPE if params.config.activation == "leaky_relu" else 0.0
    h = x
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        h = ag.add_row(ag.matmul(h, w), b)
        if i < last:
            h = ag.leaky_relu(h, slope)
    if params.batchnorm is not None:
        h = ag.batchnorm1d(h, params.batchnorm, train)
    return h
