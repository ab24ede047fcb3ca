"""
Metrics Module

Quantitative analyses of trained classifiers:

- confusion matrix and accuracy
- cosine-similarity matrix between class vectors
- Spearman rank correlation (average ranks for ties)
- correlation between class-vector similarity and pairwise confusion
- embedding geometry: mean cosine to the predicted class vector,
  intra-class compactness and inter-class separability
- 2-D PCA projection by power iteration with deflation

Geometry definitions:
    mean_pred_cosine = mean_i cos(f_i, w_{pred_i})
    compactness      = mean_i cos(f_i, mu_{y_i}),  mu_c = normalized mean embedding of class c
    separability     = 1 - mean_{c<k} cos(mu_c, mu_k)
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .exceptions import (ContractError, DimensionError, InsufficientPairsError,
                         NumericError, UndefinedCentroidError, UndefinedStatisticError)

logger = logging.getLogger(__name__)

EPS = 1e-12


def _array(x) -> np.ndarray:
    """Accept Tensors or array-likes."""
    return np.asarray(getattr(x, 'data', x), dtype=np.float64)


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), EPS)


@dataclass
class ConfusionMatrix:
    """counts[i, j] = number of examples of true class i predicted as class j"""
    counts: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.counts.shape[0])

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def per_class(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def accuracy(self) -> float:
        if self.total == 0:
            raise ContractError("accuracy of an empty confusion matrix is undefined")
        return float(np.trace(self.counts)) / self.total


def confusion_matrix(labels: Sequence[int], predictions: Sequence[int], num_classes: int) -> ConfusionMatrix:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if labels.shape != predictions.shape:
        raise DimensionError(f"{labels.size} labels but {predictions.size} predictions")
    flat = np.bincount(labels * num_classes + predictions, minlength=num_classes * num_classes)
    return ConfusionMatrix(flat.reshape(num_classes, num_classes).astype(np.int64))


def class_cosine_matrix(weights) -> np.ndarray:
    """
    Cosine similarity between every pair of class vectors.

    Args:
        weights: m x d class-vector matrix (Tensor or array)

    Returns:
        Symmetric m x m matrix with entries in [-1, 1] and unit diagonal
        (zero rows, guarded by eps, get 0 everywhere)
    """
    w = _array(weights)
    if w.ndim != 2:
        raise DimensionError(f"class vectors must form a 2-D matrix, got shape {w.shape}")
    unit = _unit_rows(w)
    cos = unit @ unit.T
    cos = 0.5 * (cos + cos.T)
    nonzero = np.linalg.norm(w, axis=1) > EPS
    diag = np.arange(w.shape[0])
    cos[diag, diag] = np.where(nonzero, 1.0, 0.0)
    return np.clip(cos, -1.0, 1.0)


def mean_class_cosine(weights) -> float:
    """Mean off-diagonal entry of the class cosine matrix."""
    cos = class_cosine_matrix(weights)
    m = cos.shape[0]
    return float((cos.sum() - np.trace(cos)) / (m * (m - 1)))


def spearman(x: Sequence[float], y: Sequence[float]) -> float:
    """
    Spearman rank correlation: Pearson correlation of average-rank vectors.

    Raises:
        DimensionError: If lengths differ or are below 3
        UndefinedStatisticError: If either argument is constant
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise DimensionError(f"spearman arguments differ in length: {x.size} vs {y.size}")
    if x.size < 3:
        raise DimensionError(f"spearman needs at least 3 observations, got {x.size}")

    rx = rankdata(x, method='average')
    ry = rankdata(y, method='average')
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    vx = float(dx @ dx)
    vy = float(dy @ dy)
    if vx == 0.0 or vy == 0.0:
        raise UndefinedStatisticError("Spearman correlation is undefined for a constant argument")
    rho = float(dx @ dy) / np.sqrt(vx * vy)
    return float(np.clip(rho, -1.0, 1.0))


@dataclass
class ClassPair:
    """One point of the similarity-vs-confusion scatter"""
    true_class: int
    predicted_class: int
    cosine: float
    confusions: int


def class_pairs(weights, confusion: ConfusionMatrix, ordered: bool = True) -> List[ClassPair]:
    """
    (cosine, confusion count) for every off-diagonal class pair.

    Args:
        weights: m x d class-vector matrix
        confusion: Confusion matrix of the same model
        ordered: Use all ordered pairs (i, j), i != j, with y = confusion(i, j).
                 Otherwise use pairs i < j with y = confusion(i, j) + confusion(j, i).
    """
    cos = class_cosine_matrix(weights)
    m = cos.shape[0]
    if m < 3:
        raise InsufficientPairsError(f"need at least 3 classes to correlate class pairs, got {m}")
    if confusion.num_classes != m:
        raise DimensionError(f"confusion matrix has {confusion.num_classes} classes, weights have {m}")

    counts = confusion.counts
    pairs = []
    for i in range(m):
        for j in range(m):
            if i == j or (not ordered and j < i):
                continue
            y = int(counts[i, j]) if ordered else int(counts[i, j] + counts[j, i])
            pairs.append(ClassPair(i, j, float(cos[i, j]), y))
    return pairs


def similarity_confusion_correlation(weights,
                                     confusion: ConfusionMatrix,
                                     ordered: bool = True) -> Tuple[List[ClassPair], float]:
    """
    Correlate class-vector similarity with pairwise misclassification.

    Returns:
        Tuple of (pairs, spearman rho)
    """
    pairs = class_pairs(weights, confusion, ordered)
    rho = spearman([p.cosine for p in pairs], [p.confusions for p in pairs])
    return pairs, rho


@dataclass
class GeometryReport:
    mean_pred_cosine: float
    compactness: float
    separability: float


def class_centroids(embeddings, labels: Sequence[int]) -> Dict[int, np.ndarray]:
    """
    Normalized mean embedding of every class present in ``labels``.

    Raises:
        UndefinedCentroidError: If there are no examples or a centroid has zero length
    """
    f = _array(embeddings)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size == 0:
        raise UndefinedCentroidError("no examples to build class centroids from")
    centroids = {}
    for c in np.unique(labels):
        mean = f[labels == c].mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= EPS:
            raise UndefinedCentroidError(f"class {int(c)} has a zero-length centroid")
        centroids[int(c)] = mean / norm
    return centroids


def geometry_report(embeddings, labels: Sequence[int], predictions: Sequence[int], weights) -> GeometryReport:
    """
    Compactness and separability of embeddings, plus their cosine to the
    predicted class vectors.

    Args:
        embeddings: N x d encoder outputs
        labels: True classes
        predictions: Predicted classes
        weights: m x d class-vector matrix

    Returns:
        GeometryReport
    """
    f = _array(embeddings)
    w = _array(weights)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    if f.ndim != 2 or f.shape[0] != labels.size or labels.size != predictions.size:
        raise DimensionError(f"embeddings {f.shape}, {labels.size} labels, {predictions.size} predictions")

    unit_f = _unit_rows(f)
    unit_w = _unit_rows(w)
    mean_pred_cosine = float(np.mean(np.sum(unit_f * unit_w[predictions], axis=1)))

    centroids = class_centroids(f, labels)
    mu = np.stack([centroids[int(c)] for c in labels])
    compactness = float(np.mean(np.sum(unit_f * mu, axis=1)))

    classes = sorted(centroids)
    if len(classes) < 2:
        raise UndefinedCentroidError("separability needs at least two classes")
    stacked = np.stack([centroids[c] for c in classes])
    cos = stacked @ stacked.T
    upper = np.triu_indices(len(classes), k=1)
    separability = float(1.0 - np.mean(cos[upper]))

    return GeometryReport(mean_pred_cosine, compactness, separability)


def _orient(v: np.ndarray) -> np.ndarray:
    """Fix the sign so the largest-magnitude component is positive."""
    return -v if v[np.argmax(np.abs(v))] < 0 else v


def project_2d(embeddings, tol: float = 1e-9, max_iter: int = 10_000) -> np.ndarray:
    """
    Project embeddings onto their top two principal axes.

    Power iteration with deflation on the covariance of the mean-centered
    embeddings; 2-D inputs are returned unchanged.

    Args:
        embeddings: N x d matrix, N >= 3
        tol: Residual tolerance ||Cv - lambda v|| (relative to max(1, |lambda|))
        max_iter: Iteration cap per axis

    Returns:
        N x 2 coordinates
    """
    f = _array(embeddings)
    if f.ndim != 2 or f.shape[0] < 3 or f.shape[1] < 2:
        raise DimensionError(f"project_2d needs an N x d matrix with N >= 3 and d >= 2, got {f.shape}")
    if f.shape[1] == 2:
        return f.copy()

    centered = f - f.mean(axis=0)
    cov = centered.T @ centered / f.shape[0]
    deflated = cov.copy()
    rng = np.random.default_rng(0)
    axes: List[np.ndarray] = []

    for k in range(2):
        v = rng.standard_normal(f.shape[1])
        for a in axes:
            v -= (v @ a) * a
        v /= np.linalg.norm(v)
        for _ in range(max_iter):
            # residual of the operator restricted to the complement of the found axes
            y = deflated @ v
            for a in axes:
                y -= (y @ a) * a
            lam = float(v @ y)
            if np.linalg.norm(y - lam * v) < tol * max(1.0, abs(lam)):
                break
            v = y / np.linalg.norm(y)
        else:
            raise NumericError(f"power iteration for principal axis {k} did not converge in {max_iter} iterations")
        v = _orient(v)
        axes.append(v)
        deflated = deflated - lam * np.outer(v, v)

    return centered @ np.stack(axes, axis=1)


@dataclass
class MetricsReport:
    """Evaluation of one model on one dataset"""
    accuracy: float
    confusion: ConfusionMatrix
    class_cosine: np.ndarray
    mean_class_cosine: float
    spearman_rho: Optional[float] = None
    mean_pred_cosine: Optional[float] = None
    compactness: Optional[float] = None
    separability: Optional[float] = None
    pairs: List[ClassPair] = field(default_factory=list)
    projection: Optional[np.ndarray] = None

    @property
    def num_examples(self) -> int:
        return self.confusion.total

    def summary(self) -> Dict[str, Any]:
        """Scalar figures only."""
        return {
            'accuracy': self.accuracy,
            'num_examples': self.num_examples,
            'spearman_rho': self.spearman_rho,
            'mean_pred_cosine': self.mean_pred_cosine,
            'compactness': self.compactness,
            'separability': self.separability,
            'mean_class_cosine': self.mean_class_cosine,
        }

    def to_dict(self) -> Dict[str, Any]:
        result = self.summary()
        result['confusion'] = self.confusion.counts.tolist()
        result['class_cosine'] = self.class_cosine.tolist()
        return result


def build_report(embeddings,
                 labels: Sequence[int],
                 predictions: Sequence[int],
                 weights,
                 num_classes: int,
                 project: bool = True) -> MetricsReport:
    """
    Assemble every metric for one evaluation.

    Statistics that are undefined for the data at hand (a constant confusion
    pattern, zero-length centroids, fewer than three classes) are left as None.
    """
    f = _array(embeddings)
    confusion = confusion_matrix(labels, predictions, num_classes)
    report = MetricsReport(
        accuracy=confusion.accuracy(),
        confusion=confusion,
        class_cosine=class_cosine_matrix(weights),
        mean_class_cosine=mean_class_cosine(weights),
    )

    try:
        report.pairs = class_pairs(weights, confusion)
        report.spearman_rho = spearman([p.cosine for p in report.pairs], [p.confusions for p in report.pairs])
    except (InsufficientPairsError, UndefinedStatisticError) as exc:
        logger.debug("similarity/confusion correlation skipped: %s", exc)

    try:
        geometry = geometry_report(f, labels, predictions, weights)
        report.mean_pred_cosine = geometry.mean_pred_cosine
        report.compactness = geometry.compactness
        report.separability = geometry.separability
    except UndefinedCentroidError as exc:
        logger.debug("geometry report skipped: %s", exc)
        unit_f = _unit_rows(f)
        unit_w = _unit_rows(_array(weights))
        report.mean_pred_cosine = float(np.mean(np.sum(unit_f * unit_w[np.asarray(predictions)], axis=1)))

    if project and f.shape[0] >= 3 and f.shape[1] >= 2:
        try:
            report.projection = project_2d(f)
        except NumericError as exc:
            logger.warning("2-D projection skipped: %s", exc)

    return report
