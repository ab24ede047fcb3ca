"""
Encoder Module

Desk-scale image encoders f_theta mapping an input example to a
d-dimensional representation:

    MLP:        chain of affine + relu layers, then an affine map to d
    SMALL_CNN:  3x3 conv (stride 2) + relu blocks, global average pool,
                then an affine map to d

Weights are drawn from N(0, 2/fan_in); biases start at zero.
"""

import math
import numbers
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional, Tuple

import numpy as np

from .exceptions import ConfigError, DimensionError
from .tensor import Tensor, add, conv2d, flatten, global_avg_pool, matmul, relu


class EncoderKind(Enum):
    """Supported encoder architectures"""
    MLP = "mlp"
    SMALL_CNN = "small_cnn"


@dataclass
class EncoderSpec:
    """Architecture description of an encoder"""
    kind: EncoderKind
    input_shape: Tuple[int, ...]          # per-example shape, e.g. (64,) or (1, 8, 8)
    widths: List[int] = field(default_factory=list)  # hidden widths (MLP) or channels (SMALL_CNN)
    embed_dim: int = 2
    seed: int = 0

    def __post_init__(self):
        """Convert string kinds and validate the architecture"""
        if isinstance(self.kind, str):
            try:
                self.kind = EncoderKind[self.kind.upper()]
            except KeyError:
                raise ConfigError(f"Unknown encoder kind: {self.kind}", key="encoder.kind")
        self.input_shape = tuple(int(s) for s in self.input_shape)
        if any(isinstance(w, bool) or not isinstance(w, numbers.Integral) for w in self.widths):
            raise ConfigError(f"Layer widths must be integers, got {self.widths!r}", key="encoder.widths")
        self.widths = [int(w) for w in self.widths]

        if not self.widths:
            raise ConfigError("Encoder needs at least one hidden layer", key="encoder.widths")
        if any(w < 1 for w in self.widths):
            raise ConfigError(f"Layer widths must be positive, got {self.widths}", key="encoder.widths")
        if self.embed_dim < 1:
            raise ConfigError(f"embed_dim must be >= 1, got {self.embed_dim}", key="encoder.embed_dim")
        if not self.input_shape or any(s < 1 for s in self.input_shape):
            raise ConfigError(f"Invalid input shape {self.input_shape}", key="encoder.input_shape")
        if self.kind == EncoderKind.SMALL_CNN and len(self.input_shape) != 3:
            raise ConfigError(
                f"SMALL_CNN expects (channels, height, width) inputs, got {self.input_shape}",
                key="encoder.kind")

    def to_dict(self) -> dict:
        return {
            'kind': self.kind.name,
            'input_shape': list(self.input_shape),
            'widths': list(self.widths),
            'embed_dim': self.embed_dim,
            'seed': self.seed,
        }


class Encoder:
    """
    Parameter set plus forward function of an encoder.

    Args:
        spec: Architecture description
        params: Named parameter tensors, in creation order
    """

    def __init__(self, spec: EncoderSpec, params: Dict[str, Tensor]):
        self.spec = spec
        self.params = params

    def parameters(self) -> Dict[str, Tensor]:
        return dict(self.params)

    def encode(self, batch: Tensor) -> Tensor:
        """
        Forward pass.

        Args:
            batch: Inputs of shape (n,) + spec.input_shape

        Returns:
            Embeddings of shape (n, spec.embed_dim)
        """
        expected = self.spec.input_shape
        if batch.data.ndim != len(expected) + 1 or batch.shape[1:] != expected:
            raise DimensionError(f"Encoder expects batches of shape (n, {', '.join(map(str, expected))}), "
                                 f"got {batch.shape}")

        if self.spec.kind == EncoderKind.MLP:
            h = flatten(batch) if batch.data.ndim > 2 else batch
            for k in range(len(self.spec.widths)):
                h = relu(add(matmul(h, self.params[f'encoder.layer{k}.weight']),
                             self.params[f'encoder.layer{k}.bias']))
        else:
            h = batch
            for k in range(len(self.spec.widths)):
                h = relu(add(conv2d(h, self.params[f'encoder.layer{k}.weight'], stride=2),
                             self.params[f'encoder.layer{k}.bias']))
            h = global_avg_pool(h)

        return add(matmul(h, self.params['encoder.out.weight']), self.params['encoder.out.bias'])


def build_encoder(spec: EncoderSpec, rng: Optional[np.random.Generator] = None) -> Encoder:
    """
    Create encoder parameters.

    Args:
        spec: Architecture description
        rng: Generator to draw weights from; defaults to one seeded with spec.seed

    Returns:
        Encoder with freshly initialized parameters
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)

    def he_normal(shape, fan_in):
        return Tensor(rng.standard_normal(shape) * math.sqrt(2.0 / fan_in), requires_grad=True)

    params: Dict[str, Tensor] = {}
    if spec.kind == EncoderKind.MLP:
        fan_in = int(np.prod(spec.input_shape))
        for k, width in enumerate(spec.widths):
            params[f'encoder.layer{k}.weight'] = he_normal((fan_in, width), fan_in)
            params[f'encoder.layer{k}.bias'] = Tensor(np.zeros(width), requires_grad=True)
            fan_in = width
    else:
        channels = spec.input_shape[0]
        for k, out_channels in enumerate(spec.widths):
            params[f'encoder.layer{k}.weight'] = he_normal((out_channels, channels, 3, 3), channels * 9)
            params[f'encoder.layer{k}.bias'] = Tensor(np.zeros((1, out_channels, 1, 1)), requires_grad=True)
            channels = out_channels
        fan_in = channels

    params['encoder.out.weight'] = he_normal((fan_in, spec.embed_dim), fan_in)
    params['encoder.out.bias'] = Tensor(np.zeros(spec.embed_dim), requires_grad=True)
    return Encoder(spec, params)


def encode(encoder: Encoder, batch: Tensor) -> Tensor:
    """Functional form of Encoder.encode."""
    return encoder.encode(batch)
