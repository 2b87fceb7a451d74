"""Convolutional encoder/decoder pair.

The encoder is a stack of dilated causal convolutions that turns the n x m
input sequence into an L x m sequence whose column t estimates
(y^t, ..., y^{t+L-1}). The decoder mirrors it with time-reversed
convolutions and maps the L x m estimate back to n x m.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .embedding import ConfigError, SeriesMatrix
from .numerics import ConvLayer, ConvSpec, DimensionError, Parameter


@dataclass
class ArchitectureConfig:
    L: int = 16
    input_dim: int = 90
    hidden_channels: list[int] = field(default_factory=lambda: [32, 32, 32])
    kernel_size: int = 3
    dilations: list[int] = field(default_factory=lambda: [1, 2, 4])
    seed: int = 0
    lambda1: float = 1.0
    lambda2: float = 1.0
    # the unsquared reconstruction norm swamps the other two terms on short series
    lambda3: float = 0.0
    learning_rate: float = 3e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    max_epochs: int = 1000
    convergence_tol: float = 1e-6
    patience: int = 50
    # n > L is the embedding condition; tiny causal toys can opt out of it
    strict_embedding: bool = True

    def __post_init__(self):
        self.hidden_channels = [int(c) for c in self.hidden_channels]
        self.dilations = [int(d) for d in self.dilations]

    @property
    def receptive_field(self) -> int:
        return 1 + sum((self.kernel_size - 1) * d for d in self.dilations)

    @property
    def window(self) -> int:
        """w such that each estimate sees the columns t-w .. t."""
        return self.receptive_field - 1

    def validate(self) -> None:
        if self.L < 2 or self.input_dim < 1:
            raise ConfigError(f"need L > 1 and at least one input, got n={self.input_dim}, L={self.L}")
        if self.strict_embedding and not self.L < self.input_dim:
            raise ConfigError(f"need n > L > 1, got n={self.input_dim}, L={self.L}")
        if self.kernel_size < 1 or any(d < 1 for d in self.dilations) or not self.dilations:
            raise ConfigError("kernel_size and every dilation must be >= 1, with at least one layer")
        if len(self.hidden_channels) != len(self.dilations) or any(c < 1 for c in self.hidden_channels):
            raise ConfigError("hidden_channels needs one positive width per dilation")
        if self.receptive_field < 2:
            raise ConfigError("receptive field must cover at least two time points")
        lams = (self.lambda1, self.lambda2, self.lambda3)
        if any(lam < 0 for lam in lams) or not any(lam > 0 for lam in lams):
            raise ConfigError("loss weights must be non-negative and not all zero")
        if self.learning_rate <= 0 or not (0 < self.beta1 < 1 and 0 < self.beta2 < 1) or self.eps <= 0:
            raise ConfigError("invalid optimizer settings")
        if self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("max_epochs must be >= 0 and patience >= 1")

    def replace(self, **changes) -> "ArchitectureConfig":
        d = asdict(self)
        d.update(changes)
        return ArchitectureConfig(**d)

    @classmethod
    def from_dict(cls, d: dict) -> "ArchitectureConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class SticmNetwork:
    def __init__(self, config: ArchitectureConfig, encoder: list[ConvLayer], decoder: list[ConvLayer]):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder

    @property
    def parameters(self) -> list[Parameter]:
        return [p for layer in self.encoder + self.decoder for p in layer.parameters]

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = _as_values(x)
        if x.shape[0] != self.config.input_dim:
            raise DimensionError(f"input has {x.shape[0]} variables, network expects {self.config.input_dim}")
        for layer in self.encoder:
            x = layer.forward(x)
        return x

    def decode(self, est: np.ndarray) -> np.ndarray:
        est = _as_values(est)
        if est.shape[0] != self.config.L:
            raise DimensionError(f"estimate has {est.shape[0]} rows, network expects L={self.config.L}")
        for layer in self.decoder:
            est = layer.forward(est)
        return est

    def backward_encoder(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.encoder):
            grad = layer.backward(grad)
        return grad

    def backward_decoder(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.decoder):
            grad = layer.backward(grad)
        return grad

    def state_dict(self) -> dict:
        return {
            "config": asdict(self.config),
            "parameters": [p.value.ravel().tolist() for p in self.parameters],
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.state_dict()))

    @classmethod
    def load(cls, path) -> "SticmNetwork":
        return cls.from_state_dict(json.loads(Path(path).read_text()))

    @classmethod
    def from_state_dict(cls, state: dict) -> "SticmNetwork":
        net = build_network(ArchitectureConfig.from_dict(state["config"]))
        params = net.parameters
        if len(params) != len(state["parameters"]):
            raise ValueError("checkpoint does not match the architecture")
        for p, flat in zip(params, state["parameters"]):
            arr = np.asarray(flat, dtype=np.float64)
            if arr.size != p.value.size:
                raise ValueError("checkpoint does not match the architecture")
            p.value[...] = arr.reshape(p.value.shape)
        return net


def _as_values(x) -> np.ndarray:
    if isinstance(x, SeriesMatrix):
        return x.values
    return np.asarray(x, dtype=np.float64)


def build_network(config: ArchitectureConfig) -> SticmNetwork:
    """Initialise encoder and mirrored decoder deterministically from ``config.seed``."""
    config.validate()
    rng = np.random.default_rng(config.seed)
    k = config.kernel_size
    widths = [config.input_dim] + list(config.hidden_channels)
    enc_specs = [ConvSpec(widths[i], widths[i + 1], k, d) for i, d in enumerate(config.dilations)]
    enc_specs.append(ConvSpec(widths[-1], config.L, 1, 1))
    encoder = [ConvLayer.initialise(s, rng) for s in enc_specs]
    encoder[-1].activation = False

    # decoder: same layers in reverse order with in/out swapped
    decoder = []
    for s in reversed(enc_specs):
        spec = ConvSpec(s.out_channels, s.in_channels, s.kernel_size, s.dilation)
        decoder.append(ConvLayer.initialise(spec, rng, transposed=True))
    decoder[-1].activation = False
    return SticmNetwork(config, encoder, decoder)


def encode_sequence(net: SticmNetwork, X) -> np.ndarray:
    return net.encode(X)


def decode_sequence(net: SticmNetwork, est) -> np.ndarray:
    return net.decode(est)
