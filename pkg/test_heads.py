"""
Tests for the classification heads and the cosine-head probability bound
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fixed_classifier.exceptions import ConfigError, DimensionError
from fixed_classifier.heads import (ClassificationHead, HeadConfig, HeadMode, init_head,
                                    max_predicted_probability, weights_digest)
from fixed_classifier.tensor import Graph, Tensor, grad_check, softmax_cross_entropy


def test_max_predicted_probability_reference_value():
    p = max_predicted_probability(200, 1.0)
    assert abs(p - 0.0358) < 5e-4
    assert abs(p - 1.0 / (1.0 + 199.0 * math.exp(-2.0))) < 1e-15


def test_max_predicted_probability_two_classes():
    assert_allclose(max_predicted_probability(2, 1.0), 0.8807970779778823, rtol=0, atol=1e-12)


def test_max_predicted_probability_monotone_in_s_and_m():
    grid_s = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 20.0, 32.0, 40.0, 64.0]
    grid_m = [2, 3, 5, 10, 20, 50, 100, 200, 500, 1000]
    for m in grid_m:
        values = [max_predicted_probability(m, s) for s in grid_s]
        # float saturates at 1.0 for large S, so compare non-strictly
        assert all(b >= a for a, b in zip(values, values[1:]))
        assert values[0] < values[1]
    for s in grid_s:
        values = [max_predicted_probability(m, s) for m in grid_m]
        assert all(b <= a for a, b in zip(values, values[1:]))


def test_max_predicted_probability_rejects_bad_arguments():
    with pytest.raises(ConfigError):
        max_predicted_probability(1, 1.0)
    with pytest.raises(ConfigError):
        max_predicted_probability(10, 0.0)


def test_head_config_converts_mode_strings():
    config = HeadConfig(mode="cosine", num_classes=3, embed_dim=2)
    assert config.mode == HeadMode.COSINE


def test_head_config_rejects_unknown_mode():
    with pytest.raises(ConfigError) as excinfo:
        HeadConfig(mode="euclid", num_classes=3, embed_dim=2)
    assert excinfo.value.key == "head.mode"


def test_cosine_head_rejects_bias():
    with pytest.raises(ConfigError) as excinfo:
        HeadConfig(mode=HeadMode.COSINE, num_classes=3, embed_dim=2, use_bias=True)
    assert excinfo.value.key == "head.use_bias"


def test_fixed_init_gives_unit_rows_and_no_parameters():
    head = init_head(HeadConfig(HeadMode.COSINE, num_classes=10, embed_dim=2, fixed=True, seed=0))
    assert_allclose(np.linalg.norm(head.weights.data, axis=1), 1.0, rtol=0, atol=1e-12)
    assert head.parameters() == {}
    assert head.weights.grad is None
    assert head.verify_digest()


def test_fixed_class_vectors_are_nearly_orthogonal_in_high_dimension():
    head = init_head(HeadConfig(HeadMode.COSINE, num_classes=100, embed_dim=64, fixed=True, seed=0))
    w = head.weights.data
    cos = w @ w.T
    off_diagonal = cos[~np.eye(100, dtype=bool)]
    assert np.max(np.abs(off_diagonal)) < 0.6


def test_init_is_deterministic_per_seed():
    config = HeadConfig(HeadMode.DOT, num_classes=5, embed_dim=4, fixed=True, seed=7)
    a, b = init_head(config), init_head(config)
    assert_array_equal(a.weights.data, b.weights.data)
    assert a.init_digest == b.init_digest
    other = init_head(HeadConfig(HeadMode.DOT, num_classes=5, embed_dim=4, fixed=True, seed=8))
    assert other.init_digest != a.init_digest


def test_learnable_init_scales_by_sqrt_d():
    config = HeadConfig(HeadMode.DOT, num_classes=4, embed_dim=9, fixed=False, use_bias=True, seed=3)
    head = init_head(config)
    raw = np.random.default_rng(3).standard_normal((4, 9))
    assert_allclose(head.weights.data, raw / 3.0, rtol=0, atol=1e-15)
    assert set(head.parameters()) == {'head.weights', 'head.bias'}
    assert_array_equal(head.bias.data, np.zeros(4))


def test_dot_forward_values():
    config = HeadConfig(HeadMode.DOT, num_classes=2, embed_dim=2, use_bias=True)
    head = ClassificationHead(config, np.array([[1.0, 0.0], [0.0, 2.0]]), bias=np.array([0.5, -0.5]))
    logits = head.forward(Tensor([[3.0, 4.0]]))
    assert_array_equal(logits.data, [[3.5, 7.5]])


def test_cosine_forward_values_and_bound():
    config = HeadConfig(HeadMode.COSINE, num_classes=2, embed_dim=2, scale_s=10.0)
    head = ClassificationHead(config, np.array([[2.0, 0.0], [0.0, -1.0]]))
    logits = head.forward(Tensor([[3.0, 4.0]]))
    assert_allclose(logits.data, [[6.0, -8.0]], rtol=0, atol=1e-12)

    rng = np.random.default_rng(0)
    f = Tensor(rng.standard_normal((50, 2)) * 100.0)
    assert np.all(np.abs(head.forward(f).data) <= 10.0 + 1e-12)


def test_cosine_forward_zero_embedding_gives_zero_logits():
    config = HeadConfig(HeadMode.COSINE, num_classes=3, embed_dim=2, fixed=True, scale_s=5.0)
    head = init_head(config)
    assert_array_equal(head.forward(Tensor(np.zeros((2, 2)))).data, np.zeros((2, 3)))


def test_forward_rejects_wrong_embedding_width():
    head = init_head(HeadConfig(HeadMode.DOT, num_classes=3, embed_dim=2))
    with pytest.raises(DimensionError):
        head.forward(Tensor(np.ones((4, 3))))


def test_weights_shape_checked():
    with pytest.raises(DimensionError):
        ClassificationHead(HeadConfig(HeadMode.DOT, num_classes=3, embed_dim=2), np.ones((2, 3)))


def test_digest_detects_a_single_bit_flip():
    head = init_head(HeadConfig(HeadMode.COSINE, num_classes=4, embed_dim=3, fixed=True))
    bits = head.weights.data.view(np.uint64)
    bits[0, 0] ^= np.uint64(1)
    assert not head.verify_digest()
    assert weights_digest(head.weights.data) != head.init_digest


@pytest.mark.parametrize("mode,fixed", [(HeadMode.DOT, False), (HeadMode.DOT, True),
                                        (HeadMode.COSINE, False), (HeadMode.COSINE, True)])
def test_head_gradients_match_finite_differences(mode, fixed):
    rng = np.random.default_rng(21)
    config = HeadConfig(mode, num_classes=4, embed_dim=3, fixed=fixed, scale_s=2.0,
                        use_bias=(mode == HeadMode.DOT), seed=5)
    head = init_head(config)
    f = Tensor(rng.standard_normal((6, 3)), requires_grad=True)
    loss = softmax_cross_entropy(head.forward(f), rng.integers(0, 4, size=6))
    graph = Graph(loss)
    assert grad_check(graph, tol=1e-5)
    if fixed:
        assert all(p is not head.weights for p in graph.parameters())


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
