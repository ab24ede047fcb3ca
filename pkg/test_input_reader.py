"""
Tests for IDX file I/O and experiment configuration parsing
"""

import os
import sys
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import copy
import json
import struct

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from fixed_classifier.data import Dataset
from fixed_classifier.exceptions import ConfigError, ConsistencyError, FormatError, TruncatedFileError
from fixed_classifier.heads import HeadMode
from fixed_classifier.input_reader import (DEFAULT_S_GRID, ExperimentConfig, InputReader,
                                           create_template_config, load_idx)


def _write(path, payload: bytes):
    path.write_bytes(payload)
    return path


def _images(count, rows, cols, pixels):
    return struct.pack('>IIII', 0x00000803, count, rows, cols) + bytes(pixels)


def _labels(values):
    return struct.pack('>II', 0x00000801, len(values)) + bytes(values)


# ========== IDX ==========

def test_read_idx_scales_pixels(tmp_path):
    images = _write(tmp_path / "img.idx", _images(2, 2, 2, [0, 255, 128, 1, 2, 3, 4, 5]))
    labels = _write(tmp_path / "lbl.idx", _labels([1, 0]))
    data = InputReader.read_idx(images, labels)
    assert data.features.shape == (2, 1, 2, 2)
    assert data.features[0, 0, 0, 1] == 1.0
    assert data.features[0, 0, 0, 0] == 0.0
    assert data.features[0, 0, 1, 0] == 128.0 / 255.0
    assert_array_equal(data.labels, [1, 0])
    assert data.num_classes == 2


def test_load_idx_infers_class_count(tmp_path):
    images = _write(tmp_path / "img.idx", _images(3, 1, 1, [0, 1, 2]))
    labels = _write(tmp_path / "lbl.idx", _labels([0, 4, 2]))
    data = load_idx(images, labels)
    assert data.num_classes == 5
    assert data.features.shape == (3, 1, 1, 1)


def test_read_idx_bad_magic(tmp_path):
    images = _write(tmp_path / "img.idx", struct.pack('>IIII', 0x00000804, 1, 1, 1) + b"\x00")
    labels = _write(tmp_path / "lbl.idx", _labels([0]))
    with pytest.raises(FormatError):
        InputReader.read_idx(images, labels)


def test_read_idx_truncated_payload(tmp_path):
    images = _write(tmp_path / "img.idx", _images(2, 2, 2, [0] * 7))
    labels = _write(tmp_path / "lbl.idx", _labels([0, 1]))
    with pytest.raises(TruncatedFileError):
        InputReader.read_idx(images, labels)


def test_read_idx_truncated_header(tmp_path):
    images = _write(tmp_path / "img.idx", struct.pack('>II', 0x00000803, 2))
    labels = _write(tmp_path / "lbl.idx", _labels([0, 1]))
    with pytest.raises(TruncatedFileError):
        InputReader.read_idx(images, labels)


def test_read_idx_count_mismatch(tmp_path):
    images = _write(tmp_path / "img.idx", _images(2, 1, 1, [0, 1]))
    labels = _write(tmp_path / "lbl.idx", _labels([0, 1, 1]))
    with pytest.raises(ConsistencyError):
        InputReader.read_idx(images, labels)


def test_write_then_read_images(tmp_path):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(5, 1, 3, 4)) / 255.0
    data = Dataset(pixels, [0, 1, 2, 1, 0], num_classes=3)
    InputReader.write_idx(data, tmp_path / "img.idx", tmp_path / "lbl.idx")
    back = InputReader.read_idx(tmp_path / "img.idx", tmp_path / "lbl.idx", num_classes=3)
    assert_array_equal(back.features, pixels)
    assert_array_equal(back.labels, data.labels)


def test_write_vectors_as_one_row_images(tmp_path):
    data = Dataset(np.array([[-1.0, 0.0, 1.0], [1.0, 1.0, -1.0]]), [0, 1], num_classes=2)
    InputReader.write_idx(data, tmp_path / "img.idx", tmp_path / "lbl.idx")
    raw = (tmp_path / "img.idx").read_bytes()
    assert struct.unpack('>IIII', raw[:16]) == (0x00000803, 2, 1, 3)
    assert list(raw[16:]) == [0, 128, 255, 255, 255, 0]


# ========== Configuration ==========

BASE = {
    "schema_version": 1,
    "seed": 3,
    "output_dir": "runs/test",
    "dataset": {"kind": "synthetic", "num_classes": 4, "num_superclasses": 2, "prototype_spread": 0.1,
                "within_class_noise": 0.1, "feature_dim": 8, "examples_per_class": 5},
    "encoder": {"kind": "MLP", "widths": [8], "embed_dim": 2},
    "head": {"mode": "COSINE", "fixed": True},
    "training": {"learning_rate": 0.1, "epochs": 2, "batch_size": 4},
}


def _config(**changes):
    raw = copy.deepcopy(BASE)
    raw.update(changes)
    return raw


def _key_of(raw):
    with pytest.raises(ConfigError) as excinfo:
        ExperimentConfig.from_dict(raw)
    return excinfo.value.key


def test_valid_config_parses():
    config = ExperimentConfig.from_dict(_config())
    assert config.seed == 3
    assert config.repeats == 1
    assert config.sweep is None


def test_missing_head_mode_names_the_key():
    raw = _config()
    del raw["head"]["mode"]
    assert _key_of(raw) == "head.mode"


def test_unknown_keys_rejected_at_any_level():
    assert _key_of(_config(colour="blue")) == "colour"
    raw = _config()
    raw["training"]["nesterov"] = True
    assert _key_of(raw) == "training.nesterov"


def test_schema_version_checked():
    assert _key_of(_config(schema_version=2)) == "schema_version"


def test_bad_enum_values_rejected():
    raw = _config()
    raw["encoder"]["kind"] = "transformer"
    assert _key_of(raw) == "encoder.kind"
    raw = _config()
    raw["head"]["mode"] = "euclidean"
    assert _key_of(raw) == "head.mode"


def test_sweep_defaults_to_s_grid():
    config = ExperimentConfig.from_dict(_config(sweep={"axis": "scale_s"}))
    assert config.sweep["values"] == DEFAULT_S_GRID
    assert _key_of(_config(sweep={"axis": "learning_rate"})) == "sweep.values"
    assert _key_of(_config(sweep={"axis": "momentum", "values": [0.5]})) == "sweep.axis"


def test_compare_needs_two_variants():
    assert _key_of(_config(compare={"variants": [{"fixed": True}]})) == "compare.variants"
    raw = _config(compare={"variants": [{"fixed": True}, {"fixed": False, "depth": 3}]})
    assert _key_of(raw) == "compare.variants[1].depth"


def test_corruption_kind_checked():
    raw = _config(corruptions=[{"kind": "fog", "severities": [0, 1]}])
    assert _key_of(raw) == "corruptions[0].kind"


def test_list_elements_are_type_checked():
    for widths in (["8"], [8.5], [True], [0], [8, None]):
        raw = _config()
        raw["encoder"]["widths"] = widths
        assert _key_of(raw) == "encoder.widths", widths
    for lr_decay in ([[20, "0.1"]], [["x", 0.1]], [[-1, 0.1]], [[20, 0.0]], [[True, 0.1]], [[20]], {"20": 0.1}):
        raw = _config()
        raw["training"]["lr_decay"] = lr_decay
        assert _key_of(raw) == "training.lr_decay", lr_decay
    assert _key_of(_config(sweep={"axis": "scale_s", "values": [1, "big"]})) == "sweep.values"
    raw = _config(corruptions=[{"kind": "blur", "severities": [0, "1"]}])
    assert _key_of(raw) == "corruptions[0].severities"

    raw = _config()
    raw["training"]["lr_decay"] = [[1, 0.5], [2, 1]]
    assert ExperimentConfig.from_dict(raw).training["lr_decay"] == [[1, 0.5], [2, 1]]


def test_builders_derive_seeds():
    config = ExperimentConfig.from_dict(_config())
    train, test = config.load_datasets()
    assert train.num_classes == 4
    spec = config.encoder_spec(train.example_shape)
    head = config.head_config(train.num_classes, overrides={"label": "x", "fixed": False})
    assert spec.seed == 4 and head.seed == 5
    assert head.mode == HeadMode.COSINE and not head.fixed


def test_read_config_from_json_file(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(_config()))
    assert InputReader.read_config_from_json(path).output_dir == "runs/test"


def test_invalid_json_is_a_config_error(tmp_path):
    path = tmp_path / "exp.json"
    path.write_text("{not json")
    with pytest.raises(ConfigError):
        InputReader.read_config_from_json(path)


def test_template_config_is_valid(tmp_path):
    path = create_template_config(tmp_path)
    config = InputReader.read_config_from_json(path)
    assert config.head["mode"] == "COSINE"
    assert len(config.corruptions) == 3


if __name__ == "__main__":
    pytest.main([__file__, "-v"])
