"""
Classification Heads Module

Implements the four classification-layer variants studied by this framework:

    DOT,    learnable:  logits = f . W^T (+ b)
    DOT,    fixed:      same, with W drawn randomly, row-normalized and frozen
    COSINE, learnable:  logits = S * cos(alpha_j), cos(alpha_j) = <f/|f|, w_j/|w_j|>
    COSINE, fixed:      same, with W drawn randomly, row-normalized and frozen

Where:
    W = class-vector matrix (m x d), one row w_j per target class
    f = image representation produced by the encoder (n x d)
    S = scaling factor multiplying cosine logits
    b = optional bias (off by default; frozen at zero for fixed heads)

Also provides the analytic upper bound on the predicted probability of a
cosine head, e^S / (e^S + (m-1) e^-S).
"""

import hashlib
import math
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Optional

import numpy as np

from .exceptions import ConfigError, DimensionError
from .tensor import Tensor, add, l2_normalize, matmul, scale, transpose


class HeadMode(Enum):
    """Logit definition of a classification head"""
    DOT = "dot"        # inner product between f and w_j
    COSINE = "cosine"  # scaled cosine-similarity between f and w_j


@dataclass
class HeadConfig:
    """Configuration of a classification head"""
    mode: HeadMode
    num_classes: int       # m
    embed_dim: int         # d
    fixed: bool = False
    scale_s: float = 1.0   # S, only used by COSINE heads
    use_bias: bool = False
    seed: int = 0

    def __post_init__(self):
        """Convert string modes and validate ranges"""
        if isinstance(self.mode, str):
            try:
                self.mode = HeadMode[self.mode.upper()]
            except KeyError:
                raise ConfigError(f"Unknown head mode: {self.mode}", key="head.mode")
        if self.num_classes < 2:
            raise ConfigError(f"A head needs at least 2 classes, got {self.num_classes}", key="head.num_classes")
        if self.embed_dim < 1:
            raise ConfigError(f"Embedding dimension must be >= 1, got {self.embed_dim}", key="head.embed_dim")
        if not self.scale_s > 0:
            raise ConfigError(f"Scaling factor S must be positive, got {self.scale_s}", key="head.scale_s")
        if self.mode == HeadMode.COSINE and self.use_bias:
            raise ConfigError("COSINE heads have no bias term", key="head.use_bias")
        self.scale_s = float(self.scale_s)

    def to_dict(self) -> dict:
        return {
            'mode': self.mode.name,
            'num_classes': self.num_classes,
            'embed_dim': self.embed_dim,
            'fixed': self.fixed,
            'scale_s': self.scale_s,
            'use_bias': self.use_bias,
            'seed': self.seed,
        }


def weights_digest(weights: np.ndarray) -> str:
    """SHA-256 of the little-endian float64 bytes of a weight matrix."""
    raw = np.ascontiguousarray(weights, dtype='<f8').tobytes()
    return hashlib.sha256(raw).hexdigest()


class ClassificationHead:
    """
    Class-vector matrix W, optional bias, and the logit rule selected by the config.

    Fixed heads hold W (and a zero bias, if enabled) as non-trainable tensors,
    so no gradient buffer is ever allocated for them.

    Args:
        config: Head configuration
        weights: Initial m x d class-vector matrix
        bias: Initial bias of length m (required iff config.use_bias)
        init_digest: Digest recorded at creation; computed from weights if omitted
    """

    def __init__(self,
                 config: HeadConfig,
                 weights: np.ndarray,
                 bias: Optional[np.ndarray] = None,
                 init_digest: Optional[str] = None):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != (config.num_classes, config.embed_dim):
            raise DimensionError(
                f"Head weights have shape {weights.shape}, expected "
                f"({config.num_classes}, {config.embed_dim})")

        self.config = config
        self.weights = Tensor(weights, requires_grad=not config.fixed)
        self.bias: Optional[Tensor] = None
        if config.use_bias:
            if bias is None:
                bias = np.zeros(config.num_classes)
            self.bias = Tensor(bias, requires_grad=not config.fixed)
        self.init_digest = init_digest if init_digest is not None else weights_digest(weights)

    def parameters(self) -> Dict[str, Tensor]:
        """Trainable tensors by name (empty for a fixed head)."""
        params = {}
        if self.weights.requires_grad:
            params['head.weights'] = self.weights
        if self.bias is not None and self.bias.requires_grad:
            params['head.bias'] = self.bias
        return params

    def state(self) -> Dict[str, np.ndarray]:
        """All head tensors by name, trainable or not."""
        state = {'head.weights': self.weights.data}
        if self.bias is not None:
            state['head.bias'] = self.bias.data
        return state

    def verify_digest(self) -> bool:
        """True iff the current weights hash to the digest recorded at creation."""
        return weights_digest(self.weights.data) == self.init_digest

    def forward(self, f: Tensor) -> Tensor:
        """
        Compute logits for a batch of embeddings.

        Args:
            f: Embeddings, shape (n, d)

        Returns:
            Logits, shape (n, m)
        """
        if f.data.ndim != 2 or f.shape[1] != self.config.embed_dim:
            raise DimensionError(
                f"Head expects embeddings of shape (n, {self.config.embed_dim}), got {f.shape}")

        if self.config.mode == HeadMode.DOT:
            logits = matmul(f, transpose(self.weights))
            if self.bias is not None:
                logits = add(logits, self.bias)
            return logits

        cosines = matmul(l2_normalize(f, axis=1), transpose(l2_normalize(self.weights, axis=1)))
        return scale(cosines, self.config.scale_s)


def init_head(config: HeadConfig, rng: Optional[np.random.Generator] = None) -> ClassificationHead:
    """
    Draw the initial class vectors.

    Rows are i.i.d. standard normal. Fixed heads divide each row by its
    l2-norm; learnable heads scale rows by 1/sqrt(d). Any bias starts at zero.

    Args:
        config: Head configuration
        rng: Generator to draw from; defaults to one seeded with config.seed

    Returns:
        ClassificationHead
    """
    if rng is None:
        rng = np.random.default_rng(config.seed)
    m, d = config.num_classes, config.embed_dim

    weights = rng.standard_normal((m, d))
    if config.fixed:
        weights = weights / np.linalg.norm(weights, axis=1, keepdims=True)
    else:
        weights = weights / math.sqrt(d)

    bias = np.zeros(m) if config.use_bias else None
    return ClassificationHead(config, weights, bias)


def max_predicted_probability(m: int, s: float) -> float:
    """
    Largest softmax probability a cosine head with scale S can assign.

    Reached when the true class has cosine 1 and every other class cosine -1:
        P = e^S / (e^S + (m-1) e^-S)

    Args:
        m: Number of classes (>= 2)
        s: Scaling factor S (> 0)

    Returns:
        Probability in (0, 1]
    """
    if m < 2:
        raise ConfigError(f"m must be >= 2, got {m}")
    if not s > 0:
        raise ConfigError(f"s must be positive, got {s}")
    # Divided through by e^S so large S cannot overflow
    return 1.0 / (1.0 + (m - 1) * math.exp(-2.0 * s))
