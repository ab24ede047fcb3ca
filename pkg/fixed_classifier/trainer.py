"""
Trainer Module

Deterministic mini-batch training of an encoder plus classification head:

    loss      = mean softmax cross-entropy over the mini-batch
    velocity  v <- momentum * v - lr * grad
    parameter p <- p + v

Fixed heads hold their class vectors as non-trainable tensors, so they never
reach the optimizer. The shuffling permutation of every epoch depends only
on (seed, epoch); identical config, seed and data give bit-identical
parameters.

Also runs hyperparameter sweeps (one full train + evaluate per value).
"""

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset, flip_horizontal
from .encoder import Encoder, EncoderSpec, build_encoder
from .exceptions import ConfigError, DimensionError, DivergenceError
from .heads import ClassificationHead, HeadConfig, init_head
from .metrics import MetricsReport, build_report, confusion_matrix
from .tensor import Tensor, softmax_cross_entropy

logger = logging.getLogger(__name__)

EVAL_BATCH = 512


@dataclass
class TrainConfig:
    """Optimization settings plus the architecture being trained"""
    learning_rate: float
    epochs: int
    batch_size: int
    encoder: EncoderSpec
    head: HeadConfig
    momentum: float = 0.9
    lr_decay: List[Tuple[int, float]] = field(default_factory=list)  # (completed epochs, multiplier)
    seed: int = 0
    flip_augment: bool = False
    standardize: bool = True

    def __post_init__(self):
        """Validate ranges and normalize the decay schedule"""
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}",
                              key="training.learning_rate")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}", key="training.momentum")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}", key="training.batch_size")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}", key="training.epochs")
        if self.head.embed_dim != self.encoder.embed_dim:
            raise ConfigError(f"Head expects d={self.head.embed_dim} but the encoder produces "
                              f"d={self.encoder.embed_dim}", key="encoder.embed_dim")
        self.lr_decay = sorted((int(e), float(mult)) for e, mult in self.lr_decay)
        if any(e < 0 or not mult > 0 for e, mult in self.lr_decay):
            raise ConfigError("lr_decay milestones need epoch >= 0 and multiplier > 0",
                              key="training.lr_decay")

    def to_dict(self) -> Dict[str, Any]:
        return {
            'learning_rate': self.learning_rate,
            'momentum': self.momentum,
            'epochs': self.epochs,
            'batch_size': self.batch_size,
            'lr_decay': [list(m) for m in self.lr_decay],
            'seed': self.seed,
            'flip_augment': self.flip_augment,
            'standardize': self.standardize,
            'encoder': self.encoder.to_dict(),
            'head': self.head.to_dict(),
        }


def learning_rate_at(config: TrainConfig, epoch: int) -> float:
    """
    Learning rate for a 0-based epoch index.

    Every milestone (e, multiplier) with e <= epoch has been applied.
    """
    lr = config.learning_rate
    for milestone, multiplier in config.lr_decay:
        if epoch >= milestone:
            lr *= multiplier
    return lr


class SGDMomentum:
    """
    Stochastic gradient descent with classical momentum.

    Args:
        params: Trainable tensors by name
        learning_rate: Default step size
        momentum: Velocity decay in [0, 1)
    """

    def __init__(self, params: Dict[str, Tensor], learning_rate: float, momentum: float = 0.9):
        self.params = dict(params)
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self, learning_rate: Optional[float] = None):
        lr = self.learning_rate if learning_rate is None else learning_rate
        for name, p in self.params.items():
            v = self.momentum * self.velocity[name] - lr * p.grad
            self.velocity[name] = v
            p.data += v


class Model:
    """
    Trained encoder and head, plus the input standardization fitted on the
    training split (None when standardization is off).
    """

    def __init__(self,
                 encoder: Encoder,
                 head: ClassificationHead,
                 mean: Optional[np.ndarray] = None,
                 std: Optional[np.ndarray] = None):
        self.encoder = encoder
        self.head = head
        self.mean = mean
        self.std = std

    @property
    def input_shape(self) -> Tuple[int, ...]:
        return self.encoder.spec.input_shape

    def parameters(self) -> Dict[str, Tensor]:
        """Trainable tensors of encoder and head."""
        params = self.encoder.parameters()
        params.update(self.head.parameters())
        return params

    def state(self) -> Dict[str, np.ndarray]:
        """Every tensor by name, trainable or not."""
        state = {name: t.data for name, t in self.encoder.parameters().items()}
        state.update(self.head.state())
        return state

    def _check(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise DimensionError(f"Model expects examples of shape {self.input_shape}, got {x.shape[1:]}")
        return x

    def prepare(self, x: np.ndarray) -> np.ndarray:
        """Apply the stored standardization."""
        if self.mean is None:
            return x
        return (x - self.mean) / self.std

    def forward(self, x: np.ndarray) -> Tensor:
        """Differentiable logits for a raw batch."""
        embeddings = self.encoder.encode(Tensor(self.prepare(self._check(x))))
        return self.head.forward(embeddings)

    def embed(self, x: np.ndarray, batch_size: int = EVAL_BATCH) -> np.ndarray:
        x = self._check(x)
        chunks = [self.encoder.encode(Tensor(self.prepare(x[i:i + batch_size]))).data
                  for i in range(0, x.shape[0], batch_size)]
        if not chunks:
            return np.zeros((0, self.encoder.spec.embed_dim))
        return np.concatenate(chunks, axis=0)

    def logits(self, x: np.ndarray) -> np.ndarray:
        return self.head.forward(Tensor(self.embed(x))).data

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Argmax class; ties go to the lowest index."""
        return np.argmax(self.logits(x), axis=1)


@dataclass
class EpochRecord:
    epoch: int              # 1-based
    learning_rate: float
    train_loss: float       # mean mini-batch loss
    train_accuracy: float   # full pass after the epoch's last update


@dataclass
class RunResult:
    """Outcome of one training run"""
    history: List[EpochRecord]
    test_report: Optional[MetricsReport]
    seconds: float
    config: TrainConfig

    def to_dict(self) -> Dict[str, Any]:
        return {
            'config': self.config.to_dict(),
            'history': [vars(record).copy() for record in self.history],
            'test': self.test_report.to_dict() if self.test_report is not None else None,
            'wall_clock_seconds': self.seconds,
        }


def _check_data(config: TrainConfig, data: Dataset):
    if data.num_classes != config.head.num_classes:
        raise ConfigError(f"Dataset has {data.num_classes} classes but the head has "
                          f"{config.head.num_classes}", key="head.num_classes")
    if data.example_shape != config.encoder.input_shape:
        raise DimensionError(f"Encoder expects examples of shape {config.encoder.input_shape}, "
                             f"dataset provides {data.example_shape}")
    if config.flip_augment and not data.is_image:
        raise ConfigError("flip_augment needs image data", key="training.flip_augment")


def train(config: TrainConfig,
          train_data: Dataset,
          test_data: Optional[Dataset] = None) -> Tuple[Model, RunResult]:
    """
    Train an encoder and head from scratch.

    Args:
        config: Training configuration
        train_data: Training split
        test_data: Optional split evaluated once after the last epoch

    Returns:
        Tuple of (model, RunResult)

    Raises:
        ConfigError: If the dataset's class count differs from the head's
        DivergenceError: If a mini-batch loss or, at the end of an epoch, a
            parameter becomes non-finite
    """
    _check_data(config, train_data)
    started = time.perf_counter()

    encoder = build_encoder(config.encoder)
    head = init_head(config.head)
    mean = std = None
    if config.standardize:
        mean, std = train_data.fit_standardization()
    model = Model(encoder, head, mean, std)

    optimizer = SGDMomentum(model.parameters(), config.learning_rate, config.momentum)
    features, labels = train_data.features, train_data.labels
    n = len(train_data)
    history: List[EpochRecord] = []

    for epoch in range(config.epochs):
        lr = learning_rate_at(config, epoch)
        rng = np.random.default_rng([config.seed, epoch])
        order = rng.permutation(n)
        losses = []

        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            batch = features[idx]
            if config.flip_augment:
                flip = rng.random(idx.shape[0]) < 0.5
                batch = batch.copy()
                batch[flip] = flip_horizontal(batch[flip])

            loss = softmax_cross_entropy(model.forward(batch), labels[idx])
            if not np.isfinite(loss.data):
                raise DivergenceError(epoch + 1)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step(lr)
            losses.append(float(loss.data))

        if not all(np.all(np.isfinite(p.data)) for p in model.parameters().values()):
            raise DivergenceError(epoch + 1)

        accuracy = confusion_matrix(labels, model.predict(features), train_data.num_classes).accuracy()
        record = EpochRecord(epoch + 1, lr, float(np.mean(losses)), accuracy)
        history.append(record)
        logger.info("epoch %d/%d  lr=%.4g  loss=%.6f  train_acc=%.4f",
                    record.epoch, config.epochs, lr, record.train_loss, accuracy)

    test_report = evaluate(model, test_data) if test_data is not None else None
    return model, RunResult(history, test_report, time.perf_counter() - started, config)


def evaluate(model: Model, data: Dataset, project: bool = True) -> MetricsReport:
    """
    Evaluate a model without touching its parameters.

    Raises:
        DimensionError: If the model's input shape does not match the data
    """
    embeddings = model.embed(data.features)
    predictions = np.argmax(model.head.forward(Tensor(embeddings)).data, axis=1)
    return build_report(embeddings, data.labels, predictions, model.head.weights.data,
                        data.num_classes, project=project)


# ========== Sweeps ==========

SWEEP_AXES = ('scale_s', 'learning_rate')


def with_value(template: TrainConfig, axis: str, value: float) -> TrainConfig:
    """Copy of ``template`` with one hyperparameter replaced."""
    if axis == 'scale_s':
        return replace(template, head=replace(template.head, scale_s=float(value)))
    if axis == 'learning_rate':
        return replace(template, learning_rate=float(value))
    raise ConfigError(f"Unknown sweep axis: {axis!r}", key="sweep.axis")


@dataclass
class SweepTable:
    """One RunResult per swept value, in the order the values were given"""
    axis: str
    rows: Dict[float, RunResult]

    @property
    def best_value(self) -> float:
        """Value with the highest test accuracy; the lowest value wins ties."""
        return min(self.rows, key=lambda v: (-self.rows[v].test_report.accuracy, v))

    def to_rows(self) -> List[Dict[str, Any]]:
        table = []
        for value, result in self.rows.items():
            report = result.test_report
            table.append({
                self.axis: value,
                'test_accuracy': report.accuracy,
                'mean_pred_cosine': report.mean_pred_cosine,
                'mean_class_cosine': report.mean_class_cosine,
                'compactness': report.compactness,
                'separability': report.separability,
                'spearman_rho': report.spearman_rho,
            })
        return table


def _sweep_run(args) -> RunResult:
    config, train_data, test_data = args
    return train(config, train_data, test_data)[1]


def sweep(template: TrainConfig,
          axis: str,
          values: Sequence[float],
          train_data: Dataset,
          test_data: Dataset,
          jobs: int = 1) -> SweepTable:
    """
    Train and evaluate once per value; every run uses the template's seeds.

    Args:
        template: Base configuration
        axis: 'scale_s' or 'learning_rate'
        values: Non-empty list of distinct values
        train_data: Training split
        test_data: Split used for selection
        jobs: Worker processes (1 runs sequentially)

    Returns:
        SweepTable
    """
    values = [float(v) for v in values]
    if not values:
        raise ConfigError("A sweep needs at least one value", key="sweep.values")
    if len(set(values)) != len(values):
        raise ConfigError(f"Sweep values must be distinct, got {values}", key="sweep.values")
    configs = [with_value(template, axis, v) for v in values]

    if jobs > 1 and len(configs) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_sweep_run, [(c, train_data, test_data) for c in configs]))
    else:
        results = [_sweep_run((c, train_data, test_data)) for c in configs]

    for value, result in zip(values, results):
        logger.info("sweep %s=%g  test_acc=%.4f  mean_pred_cos=%s",
                    axis, value, result.test_report.accuracy, result.test_report.mean_pred_cosine)
    return SweepTable(axis, dict(zip(values, results)))


def mean_summary(reports: Sequence[MetricsReport]) -> Dict[str, Optional[float]]:
    """Average the scalar figures of repeated runs; a figure undefined in any run stays None."""
    keys = ('accuracy', 'compactness', 'separability', 'spearman_rho', 'mean_pred_cosine', 'mean_class_cosine')
    summary: Dict[str, Optional[float]] = {}
    for key in keys:
        values = [getattr(r, key) for r in reports]
        summary[key] = None if any(v is None for v in values) else float(np.mean(values))
    return summary
