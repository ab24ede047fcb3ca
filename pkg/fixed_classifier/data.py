"""
Data Module

Datasets for the classification-layer experiments:

- ``Dataset``: features, integer labels, class count, and the standardization
  statistics fitted on a training split.
- ``generate_synthetic``: hierarchical synthetic classes. Superclass
  prototypes are drawn uniformly on the unit hypersphere; every class
  prototype is a perturbed, renormalized copy of its superclass prototype, so
  classes sharing a superclass are deliberately "visually similar".
- ``flip_horizontal``: the only augmentation (mirror the last spatial axis).

IDX loading lives in input_reader.py, image corruptions in corruptions.py.
"""

import logging
import math
from dataclasses import dataclass, replace
from typing import Optional, Tuple

import numpy as np
from scipy.special import expit

from .exceptions import ConfigError, DimensionError, LabelRangeError

logger = logging.getLogger(__name__)


@dataclass
class Dataset:
    """Container for one split of examples"""
    features: np.ndarray     # (N, ...) float64
    labels: np.ndarray       # (N,) integers in [0, num_classes)
    num_classes: int
    split: str = "train"
    mean: Optional[np.ndarray] = None   # per-feature mean, set by fit_standardization
    std: Optional[np.ndarray] = None    # per-feature std, set by fit_standardization
    prototypes: Optional[np.ndarray] = None      # class prototypes (synthetic data only)
    superclass_of: Optional[np.ndarray] = None   # class -> superclass (synthetic data only)

    def __post_init__(self):
        """Convert inputs to numpy arrays and validate labels"""
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)

        if self.num_classes < 2:
            raise ConfigError(f"A dataset needs at least 2 classes, got {self.num_classes}")
        if self.features.shape[0] != self.labels.shape[0]:
            raise DimensionError(
                f"{self.features.shape[0]} examples but {self.labels.shape[0]} labels")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise LabelRangeError(
                f"Labels must lie in [0, {self.num_classes}), got [{self.labels.min()}, {self.labels.max()}]")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def example_shape(self) -> Tuple[int, ...]:
        return tuple(self.features.shape[1:])

    @property
    def is_image(self) -> bool:
        """True for (N, channels, height, width) data."""
        return self.features.ndim == 4

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def fit_standardization(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        Compute per-feature mean and standard deviation of this split.

        Constant features get std 1 so they standardize to 0.

        Returns:
            Tuple of (mean, std), each of shape example_shape
        """
        mean = self.features.mean(axis=0)
        std = self.features.std(axis=0)
        std = np.where(std > 0.0, std, 1.0)
        self.mean, self.std = mean, std
        return mean, std

    def standardize(self, mean: np.ndarray, std: np.ndarray) -> "Dataset":
        """Return a copy with (x - mean) / std applied to every example."""
        return replace(self, features=(self.features - mean) / std, mean=mean, std=std)

    def subset(self, indices: np.ndarray) -> "Dataset":
        return replace(self, features=self.features[indices], labels=self.labels[indices])


def flip_horizontal(x: np.ndarray) -> np.ndarray:
    """Mirror the last spatial axis; applying it twice restores the input."""
    return x[..., ::-1].copy()


@dataclass
class SyntheticSpec:
    """Parameters of a hierarchical synthetic dataset"""
    num_classes: int            # m
    num_superclasses: int       # g; class c belongs to superclass c mod g
    prototype_spread: float     # sigma_p, class prototype spread around its superclass
    within_class_noise: float   # sigma_w, example spread around its class prototype
    feature_dim: int
    examples_per_class: int
    seed: int = 0
    image_side: Optional[int] = None   # render examples as 1 x side x side images
    test_fraction: float = 0.2

    def __post_init__(self):
        """Validate parameters"""
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}", key="dataset.num_classes")
        if not 1 <= self.num_superclasses <= self.num_classes:
            raise ConfigError(f"num_superclasses must lie in [1, {self.num_classes}], "
                              f"got {self.num_superclasses}", key="dataset.num_superclasses")
        if not self.prototype_spread > 0:
            raise ConfigError("prototype_spread must be positive", key="dataset.prototype_spread")
        if not self.within_class_noise > 0:
            raise ConfigError("within_class_noise must be positive", key="dataset.within_class_noise")
        if self.feature_dim < 1:
            raise ConfigError("feature_dim must be >= 1", key="dataset.feature_dim")
        if self.examples_per_class < 2:
            raise ConfigError("examples_per_class must be >= 2 so both splits are populated",
                              key="dataset.examples_per_class")
        if not 0.0 < self.test_fraction < 1.0:
            raise ConfigError("test_fraction must lie in (0, 1)", key="dataset.test_fraction")
        if self.image_side is not None and self.image_side ** 2 != self.feature_dim:
            raise ConfigError(f"image_side**2 must equal feature_dim ({self.image_side}**2 != {self.feature_dim})",
                              key="dataset.image_side")

    def to_dict(self) -> dict:
        return {
            'num_classes': self.num_classes,
            'num_superclasses': self.num_superclasses,
            'prototype_spread': self.prototype_spread,
            'within_class_noise': self.within_class_noise,
            'feature_dim': self.feature_dim,
            'examples_per_class': self.examples_per_class,
            'seed': self.seed,
            'image_side': self.image_side,
            'test_fraction': self.test_fraction,
        }


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def generate_synthetic(spec: SyntheticSpec) -> Tuple[Dataset, Dataset]:
    """
    Generate a hierarchical synthetic dataset with a stratified train/test split.

    Args:
        spec: Dataset parameters

    Returns:
        Tuple of (train, test) Datasets
    """
    rng = np.random.default_rng(spec.seed)
    m, g, dim, k = spec.num_classes, spec.num_superclasses, spec.feature_dim, spec.examples_per_class

    superclass_prototypes = _unit_rows(rng.standard_normal((g, dim)))
    superclass_of = np.arange(m) % g
    prototypes = _unit_rows(superclass_prototypes[superclass_of]
                            + spec.prototype_spread * rng.standard_normal((m, dim)))

    labels = np.repeat(np.arange(m), k)
    features = prototypes[labels] + spec.within_class_noise * rng.standard_normal((m * k, dim))

    if spec.image_side is not None:
        features = expit(math.sqrt(dim) * features).reshape(m * k, 1, spec.image_side, spec.image_side)

    n_test = max(1, min(k - 1, int(round(k * spec.test_fraction))))
    train_idx, test_idx = [], []
    for c in range(m):
        order = c * k + rng.permutation(k)
        test_idx.append(order[:n_test])
        train_idx.append(order[n_test:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)

    common = dict(num_classes=m, prototypes=prototypes, superclass_of=superclass_of)
    train = Dataset(features[train_idx], labels[train_idx], split="train", **common)
    test = Dataset(features[test_idx], labels[test_idx], split="test", **common)
    logger.debug("generated synthetic data: %d classes, %d superclasses, %d train / %d test",
                 m, g, len(train), len(test))
    return train, test
