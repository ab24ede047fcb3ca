"""
Slow end-to-end checks of the qualitative behaviour of fixed and learnable
class vectors on a hierarchical synthetic problem (20 classes under 5
superclasses, 64 features, MLP encoder) at three noise levels.

Run with: pytest -m slow
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import math
from dataclasses import replace

import pytest

from fixed_classifier.corruptions import apply_corruption
from fixed_classifier.data import SyntheticSpec, generate_synthetic
from fixed_classifier.encoder import EncoderKind, EncoderSpec
from fixed_classifier.heads import HeadConfig, HeadMode, max_predicted_probability
from fixed_classifier.metrics import class_cosine_matrix
from fixed_classifier.trainer import TrainConfig, evaluate, train

pytestmark = pytest.mark.slow

NUM_CLASSES = 20
LADDERS = {
    'salt_pepper': [0, 0.1, 0.3],
    'blur': [0, 1, 2],
    'compression': [0, 0.05, 0.2],
}


def _splits(noise=0.1, per_class=50, image_side=None):
    spec = SyntheticSpec(num_classes=NUM_CLASSES, num_superclasses=5, prototype_spread=0.05,
                         within_class_noise=noise, feature_dim=64, examples_per_class=per_class, seed=11,
                         image_side=image_side)
    return generate_synthetic(spec)


def _config(input_shape, mode, fixed, scale_s=1.0, epochs=30):
    return TrainConfig(
        learning_rate=0.05, epochs=epochs, batch_size=32, seed=14,
        encoder=EncoderSpec(EncoderKind.MLP, input_shape=input_shape, widths=[64], embed_dim=64, seed=12),
        head=HeadConfig(mode, num_classes=NUM_CLASSES, embed_dim=64, fixed=fixed, scale_s=scale_s, seed=13))


@pytest.fixture(scope="module")
def vectors():
    return _splits()


# sibling classes barely overlap; embeddings can sit close to their class vectors
@pytest.fixture(scope="module")
def tight_vectors():
    return _splits(noise=0.03)


# sibling classes overlap, so test errors concentrate inside superclasses
@pytest.fixture(scope="module")
def confusable_vectors():
    return _splits(noise=0.2, per_class=100)


def test_small_cosine_scale_bounds_the_loss(vectors):
    train_data, _ = vectors
    _, low = train(_config((64,), HeadMode.COSINE, True, scale_s=1.0), train_data)
    _, high = train(_config((64,), HeadMode.COSINE, True, scale_s=20.0), train_data)
    floor = -math.log(max_predicted_probability(NUM_CLASSES, 1.0))
    assert low.history[-1].train_loss >= floor - 1e-9
    assert high.history[-1].train_loss < low.history[-1].train_loss


def test_fixed_cosine_embeddings_are_compact(tight_vectors):
    train_data, test_data = tight_vectors
    model, result = train(_config((64,), HeadMode.COSINE, True, scale_s=1.0, epochs=40), train_data, test_data)
    assert result.test_report.mean_pred_cosine >= 0.9
    assert model.head.verify_digest()


def test_fixed_class_vectors_do_not_move(vectors):
    train_data, _ = vectors
    untrained, _ = train(_config((64,), HeadMode.DOT, True, epochs=0), train_data)
    trained, _ = train(_config((64,), HeadMode.DOT, True), train_data)
    assert (class_cosine_matrix(trained.head.weights.data)
            == class_cosine_matrix(untrained.head.weights.data)).all()


def test_learned_cosine_alignment_drops_as_scale_grows(vectors):
    train_data, test_data = vectors
    alignment = []
    for s in (1.0, 20.0, 40.0):
        _, result = train(_config((64,), HeadMode.COSINE, False, scale_s=s), train_data, test_data)
        alignment.append(result.test_report.mean_pred_cosine)
    assert alignment[0] > alignment[1] > alignment[2]


def test_fixed_cosine_head_outperforms_learnable_at_unit_scale(confusable_vectors):
    train_data, test_data = confusable_vectors
    _, fixed = train(_config((64,), HeadMode.COSINE, True, scale_s=1.0), train_data, test_data)
    _, learned = train(_config((64,), HeadMode.COSINE, False, scale_s=1.0), train_data, test_data)
    assert fixed.test_report.accuracy - learned.test_report.accuracy >= 0.15


def test_learned_class_vectors_mirror_confusions(confusable_vectors):
    train_data, test_data = confusable_vectors
    learned, _ = train(_config((64,), HeadMode.DOT, False), train_data)
    fixed, _ = train(_config((64,), HeadMode.DOT, True), train_data)
    learned_rho = evaluate(learned, test_data, project=False).spearman_rho
    fixed_rho = evaluate(fixed, test_data, project=False).spearman_rho
    assert learned_rho is not None and learned_rho > 0.3
    assert fixed_rho is None or fixed_rho < learned_rho


def test_corruption_ladders_do_not_improve_accuracy():
    train_data, test_data = _splits(image_side=8)
    model, result = train(_config((1, 8, 8), HeadMode.COSINE, True, scale_s=20.0), train_data, test_data)
    clean = result.test_report.accuracy
    for kind, severities in LADDERS.items():
        accuracies = []
        for severity in severities:
            corrupted = replace(test_data, features=apply_corruption(kind, test_data.features, severity, seed=0))
            accuracies.append(evaluate(model, corrupted, project=False).accuracy)
        assert accuracies[0] == clean
        for weaker, stronger in zip(accuracies, accuracies[1:]):
            assert stronger <= weaker, kind


if __name__ == "__main__":
    pytest.main([__file__, "-v", "-m", "slow"])
