"""
Tests for the image corruptions
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from fixed_classifier.corruptions import (CorruptionKind, apply_corruption, block_dct, block_idct,
                                          corrupt_blur, corrupt_block_compression, corrupt_salt_pepper)
from fixed_classifier.exceptions import ConfigError, RangeError


@pytest.fixture
def images():
    return np.random.default_rng(0).uniform(0.0, 1.0, size=(3, 1, 16, 16))


def test_salt_pepper_zero_probability_is_identity(images):
    assert_array_equal(corrupt_salt_pepper(images, 0.0, rng=1), images)


def test_salt_pepper_full_probability_gives_binary_image(images):
    out = corrupt_salt_pepper(images, 1.0, rng=1)
    assert set(np.unique(out)) <= {0.0, 1.0}


def test_salt_pepper_rate_and_determinism():
    x = np.full((200, 200), 0.5)
    out = corrupt_salt_pepper(x, 0.3, rng=7)
    assert abs(np.mean(out != 0.5) - 0.3) < 0.01
    assert_array_equal(out, corrupt_salt_pepper(x, 0.3, rng=7))


def test_salt_pepper_probability_range(images):
    with pytest.raises(RangeError):
        corrupt_salt_pepper(images, 1.5)


def test_blur_constant_image_unchanged():
    x = np.full((1, 1, 9, 9), 0.25)
    assert_allclose(corrupt_blur(x, 2), x, rtol=0, atol=1e-15)


def test_blur_spreads_an_impulse():
    x = np.zeros((5, 5))
    x[2, 2] = 1.0
    out = corrupt_blur(x, 1)
    assert_allclose(out[1:4, 1:4], np.full((3, 3), 1.0 / 9.0), rtol=0, atol=1e-15)
    assert out[0, 0] == 0.0


def test_blur_stays_within_input_range(images):
    out = corrupt_blur(images, 2)
    assert out.min() >= images.min() - 1e-12
    assert out.max() <= images.max() + 1e-12


def test_blur_radius_validated(images):
    with pytest.raises(RangeError):
        corrupt_blur(images, 0)
    with pytest.raises(RangeError):
        corrupt_blur(images, 1.5)


def test_block_dct_preserves_energy(images):
    coefs = block_dct(images)
    assert coefs.shape == (3, 1, 2, 2, 8, 8)
    assert_allclose(np.sum(coefs ** 2), np.sum(images ** 2), rtol=1e-12)


def test_block_dct_round_trip_with_padding():
    x = np.random.default_rng(2).uniform(size=(2, 10, 13))
    assert_allclose(block_idct(block_dct(x), x.shape), x, rtol=0, atol=1e-12)


def test_compression_step_zero_is_identity(images):
    assert_allclose(corrupt_block_compression(images, 0.0), images, rtol=0, atol=1e-12)


def test_compression_output_clamped(images):
    out = corrupt_block_compression(images, 0.5)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert not np.allclose(out, images)


def test_compression_error_grows_with_step():
    pattern = np.random.default_rng(5).uniform(0.0, 1.0, size=(16, 16))
    errors = [np.mean((corrupt_block_compression(pattern, q) - pattern) ** 2) for q in (0.01, 0.05, 0.1, 0.3)]
    assert all(a <= b for a, b in zip(errors, errors[1:]))
    assert errors[0] > 0.0


def test_apply_corruption_zero_severity_is_a_copy(images):
    for kind in CorruptionKind:
        out = apply_corruption(kind, images, 0)
        assert_array_equal(out, images)
        assert out is not images


def test_apply_corruption_dispatches_by_name(images):
    assert_array_equal(apply_corruption("salt_pepper", images, 0.2, seed=3),
                       corrupt_salt_pepper(images, 0.2, rng=3))
    assert_array_equal(apply_corruption("blur", images, 1), corrupt_blur(images, 1))
    assert_array_equal(apply_corruption("compression", images, 0.1), corrupt_block_compression(images, 0.1))



def test_apply_corruption_rejects_unknown_kind(images):
    with pytest.raises(ConfigError) as excinfo:
        apply_corruption("gaussian", images, 0.1)
    assert excinfo.value.key == "corruptions.kind"
    with pytest.raises(ConfigError):
        apply_corruption(3, images, 0.1)

if __name__ == "__main__":
    pytest.main([__file__, "-v"])
