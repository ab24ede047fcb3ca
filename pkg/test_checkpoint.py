"""
Tests for FXH1 checkpoint files
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pytest
from numpy.testing import assert_array_equal

from fixed_classifier.checkpoint import load_checkpoint, save_checkpoint
from fixed_classifier.data import SyntheticSpec, generate_synthetic
from fixed_classifier.encoder import EncoderKind, EncoderSpec
from fixed_classifier.exceptions import FormatError, IntegrityError, TruncatedFileError
from fixed_classifier.heads import HeadConfig, HeadMode
from fixed_classifier.trainer import TrainConfig, evaluate, train


@pytest.fixture(scope="module")
def splits():
    spec = SyntheticSpec(num_classes=3, num_superclasses=1, prototype_spread=0.5, within_class_noise=0.1,
                         feature_dim=16, examples_per_class=8, seed=1, image_side=4)
    return generate_synthetic(spec)


def _trained(splits, kind=EncoderKind.MLP, mode=HeadMode.COSINE, fixed=True, use_bias=False):
    train_data, _ = splits
    config = TrainConfig(
        learning_rate=0.05, epochs=2, batch_size=6, seed=0,
        encoder=EncoderSpec(kind, input_shape=(1, 4, 4), widths=[3], embed_dim=2, seed=1),
        head=HeadConfig(mode, num_classes=3, embed_dim=2, fixed=fixed, use_bias=use_bias, seed=2))
    return train(config, train_data)[0]


@pytest.mark.parametrize("kind,mode,fixed,use_bias", [
    (EncoderKind.MLP, HeadMode.COSINE, True, False),
    (EncoderKind.SMALL_CNN, HeadMode.DOT, False, True),
    (EncoderKind.MLP, HeadMode.DOT, True, True),
])
def test_round_trip_restores_every_tensor(tmp_path, splits, kind, mode, fixed, use_bias):
    model = _trained(splits, kind, mode, fixed, use_bias)
    path = tmp_path / "model.fxh"
    save_checkpoint(model, path)
    loaded = load_checkpoint(path)

    assert set(loaded.state()) == set(model.state())
    for name, values in model.state().items():
        assert_array_equal(loaded.state()[name], values)
    assert_array_equal(loaded.mean, model.mean)
    assert_array_equal(loaded.std, model.std)
    assert loaded.head.config == model.head.config
    assert loaded.encoder.spec == model.encoder.spec
    assert set(loaded.parameters()) == set(model.parameters())


def test_save_load_save_is_byte_identical(tmp_path, splits):
    model = _trained(splits)
    save_checkpoint(model, tmp_path / "a.fxh")
    save_checkpoint(load_checkpoint(tmp_path / "a.fxh"), tmp_path / "b.fxh")
    assert (tmp_path / "a.fxh").read_bytes() == (tmp_path / "b.fxh").read_bytes()


def test_loaded_model_evaluates_identically(tmp_path, splits):
    _, test_data = splits
    model = _trained(splits, fixed=False)
    save_checkpoint(model, tmp_path / "m.fxh")
    loaded = load_checkpoint(tmp_path / "m.fxh")
    assert evaluate(loaded, test_data).to_dict() == evaluate(model, test_data).to_dict()


def test_corrupted_magic_is_a_format_error(tmp_path, splits):
    path = tmp_path / "m.fxh"
    save_checkpoint(_trained(splits), path)
    raw = bytearray(path.read_bytes())
    raw[0:4] = b"FXH2"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_unknown_version_is_a_format_error(tmp_path, splits):
    path = tmp_path / "m.fxh"
    save_checkpoint(_trained(splits), path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = (7).to_bytes(4, "little")
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_file(tmp_path, splits):
    path = tmp_path / "m.fxh"
    save_checkpoint(_trained(splits), path)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(TruncatedFileError):
        load_checkpoint(path)


def test_tampered_fixed_head_fails_integrity_check(tmp_path, splits):
    model = _trained(splits, fixed=True)
    model.head.weights.data[0, 0] += 1e-9
    path = tmp_path / "m.fxh"
    save_checkpoint(model, path)
    with pytest.raises(IntegrityError):
        load_checkpoint(path)


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
