"""
Input Reader Module

This module reads experiment inputs from external files:

- IDX binary image/label files (big-endian header, unsigned-byte payload),
  and writes datasets back to the same layout.
- Experiment configuration from JSON files, validated against a fixed
  schema (unknown keys are rejected, required keys must be present).

Users can prepare their configuration in any text editor; see
CONFIG_FILES_GUIDE.md for the full schema.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from .data import Dataset, SyntheticSpec, generate_synthetic
from .encoder import EncoderKind, EncoderSpec
from .exceptions import (ConfigError, ConsistencyError, DimensionError, FormatError,
                         TruncatedFileError)
from .heads import HeadConfig, HeadMode

logger = logging.getLogger(__name__)

IDX_IMAGE_MAGIC = 0x00000803   # unsigned bytes, 3 dimensions (count, rows, cols)
IDX_LABEL_MAGIC = 0x00000801   # unsigned bytes, 1 dimension (count)

SCHEMA_VERSION = 1
DEFAULT_S_GRID = [1.0, 2.0, 4.0, 8.0, 16.0, 20.0, 32.0, 40.0, 64.0]

# section -> (required keys, optional keys)
_TOP_LEVEL = ({'schema_version', 'seed', 'output_dir', 'dataset', 'encoder', 'head', 'training'},
              {'sweep', 'corruptions', 'compare', 'repeats', 'checkpoint'})
_SYNTHETIC = ({'kind', 'num_classes', 'num_superclasses', 'prototype_spread', 'within_class_noise',
               'feature_dim', 'examples_per_class'},
              {'image_side', 'test_fraction'})
_IDX = ({'kind', 'train_images', 'train_labels', 'test_images', 'test_labels'}, set())
_ENCODER = ({'kind', 'widths', 'embed_dim'}, set())
_HEAD = ({'mode', 'fixed'}, {'scale_s', 'use_bias'})
_TRAINING = ({'learning_rate', 'epochs', 'batch_size'}, {'momentum', 'lr_decay', 'flip_augment'})
_SWEEP = ({'axis'}, {'values'})
_CORRUPTION = ({'kind', 'severities'}, set())
_COMPARE = ({'variants'}, set())
_VARIANT = (set(), {'label', 'mode', 'fixed', 'scale_s', 'use_bias'})

SWEEP_AXES = ('scale_s', 'learning_rate')
CORRUPTION_KINDS = ('salt_pepper', 'blur', 'compression')


def _check_section(section: Any, keys: Tuple[set, set], prefix: str) -> Dict[str, Any]:
    """Reject non-objects, unknown keys and missing required keys."""
    if not isinstance(section, dict):
        raise ConfigError(f"'{prefix}' must be a JSON object", key=prefix)
    required, optional = keys
    for key in sorted(section):
        if key not in required and key not in optional:
            name = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"Unknown configuration key: {name}", key=name)
    for key in sorted(required):
        if key not in section:
            name = f"{prefix}.{key}" if prefix else key
            raise ConfigError(f"Missing required configuration key: {name}", key=name)
    return section


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _number(section: Dict[str, Any], key: str, prefix: str, integer: bool = False) -> Union[int, float]:
    value = section[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"'{prefix}.{key}' must be a number", key=f"{prefix}.{key}")
    if integer and int(value) != value:
        raise ConfigError(f"'{prefix}.{key}' must be an integer", key=f"{prefix}.{key}")
    return int(value) if integer else float(value)


@dataclass
class ExperimentConfig:
    """
    Validated experiment description.

    A single ``seed`` drives every random stream: dataset = seed,
    encoder = seed + 1, head = seed + 2, training = seed + 3.
    """
    seed: int
    output_dir: str
    dataset: Dict[str, Any]
    encoder: Dict[str, Any]
    head: Dict[str, Any]
    training: Dict[str, Any]
    sweep: Optional[Dict[str, Any]] = None
    corruptions: List[Dict[str, Any]] = field(default_factory=list)
    compare_variants: List[Dict[str, Any]] = field(default_factory=list)
    repeats: int = 1
    checkpoint: Optional[str] = None
    schema_version: int = SCHEMA_VERSION

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "ExperimentConfig":
        """
        Validate a parsed JSON document.

        Raises:
            ConfigError: Naming the offending dotted key
        """
        _check_section(raw, _TOP_LEVEL, "")
        if raw['schema_version'] != SCHEMA_VERSION:
            raise ConfigError(f"Unsupported schema_version {raw['schema_version']!r} "
                              f"(expected {SCHEMA_VERSION})", key="schema_version")
        seed = raw['seed']
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
            raise ConfigError("'seed' must be an unsigned 64-bit integer", key="seed")
        if not isinstance(raw['output_dir'], str):
            raise ConfigError("'output_dir' must be a string", key="output_dir")

        dataset = raw['dataset']
        if not isinstance(dataset, dict) or 'kind' not in dataset:
            raise ConfigError("Missing required configuration key: dataset.kind", key="dataset.kind")
        if dataset['kind'] == 'synthetic':
            _check_section(dataset, _SYNTHETIC, "dataset")
        elif dataset['kind'] == 'idx':
            _check_section(dataset, _IDX, "dataset")
        else:
            raise ConfigError(f"Unknown dataset kind: {dataset['kind']!r}", key="dataset.kind")

        encoder = _check_section(raw['encoder'], _ENCODER, "encoder")
        if not isinstance(encoder['kind'], str) or encoder['kind'].upper() not in EncoderKind.__members__:
            raise ConfigError(f"Unknown encoder kind: {encoder['kind']!r}", key="encoder.kind")
        if not isinstance(encoder['widths'], list) or not encoder['widths']:
            raise ConfigError("'encoder.widths' must be a non-empty list", key="encoder.widths")
        if not all(_is_int(w) and w >= 1 for w in encoder['widths']):
            raise ConfigError(f"'encoder.widths' must hold positive integers, got {encoder['widths']!r}",
                              key="encoder.widths")
        _number(encoder, 'embed_dim', 'encoder', integer=True)

        head = _check_section(raw['head'], _HEAD, "head")
        if not isinstance(head['mode'], str) or head['mode'].upper() not in HeadMode.__members__:
            raise ConfigError(f"Unknown head mode: {head['mode']!r}", key="head.mode")
        if not isinstance(head['fixed'], bool):
            raise ConfigError("'head.fixed' must be true or false", key="head.fixed")
        if 'scale_s' in head:
            _number(head, 'scale_s', 'head')

        training = _check_section(raw['training'], _TRAINING, "training")
        _number(training, 'learning_rate', 'training')
        _number(training, 'epochs', 'training', integer=True)
        _number(training, 'batch_size', 'training', integer=True)
        lr_decay = training.get('lr_decay', [])
        if not isinstance(lr_decay, list):
            raise ConfigError("'training.lr_decay' must be a list", key="training.lr_decay")
        for milestone in lr_decay:
            if (not isinstance(milestone, list) or len(milestone) != 2
                    or not _is_int(milestone[0]) or milestone[0] < 0
                    or not _is_number(milestone[1]) or milestone[1] <= 0):
                raise ConfigError("'training.lr_decay' entries must be [epoch >= 0, multiplier > 0] pairs",
                                  key="training.lr_decay")

        sweep = None
        if 'sweep' in raw:
            sweep = dict(_check_section(raw['sweep'], _SWEEP, "sweep"))
            if sweep['axis'] not in SWEEP_AXES:
                raise ConfigError(f"Unknown sweep axis: {sweep['axis']!r}", key="sweep.axis")
            if 'values' not in sweep:
                if sweep['axis'] != 'scale_s':
                    raise ConfigError("Missing required configuration key: sweep.values", key="sweep.values")
                sweep['values'] = list(DEFAULT_S_GRID)
            if not isinstance(sweep['values'], list) or not sweep['values']:
                raise ConfigError("'sweep.values' must be a non-empty list", key="sweep.values")
            if not all(_is_number(v) for v in sweep['values']):
                raise ConfigError("'sweep.values' must hold numbers", key="sweep.values")

        corruptions = []
        for position, entry in enumerate(raw.get('corruptions', [])):
            prefix = f"corruptions[{position}]"
            _check_section(entry, _CORRUPTION, prefix)
            if entry['kind'] not in CORRUPTION_KINDS:
                raise ConfigError(f"Unknown corruption kind: {entry['kind']!r}", key=f"{prefix}.kind")
            if not isinstance(entry['severities'], list) or not entry['severities']:
                raise ConfigError(f"'{prefix}.severities' must be a non-empty list", key=f"{prefix}.severities")
            if not all(_is_number(v) for v in entry['severities']):
                raise ConfigError(f"'{prefix}.severities' must hold numbers", key=f"{prefix}.severities")
            corruptions.append(dict(entry))

        variants = []
        if 'compare' in raw:
            compare = _check_section(raw['compare'], _COMPARE, "compare")
            if not isinstance(compare['variants'], list) or len(compare['variants']) != 2:
                raise ConfigError("'compare.variants' must list exactly two head variants", key="compare.variants")
            for position, variant in enumerate(compare['variants']):
                variants.append(dict(_check_section(variant, _VARIANT, f"compare.variants[{position}]")))

        repeats = raw.get('repeats', 1)
        if isinstance(repeats, bool) or not isinstance(repeats, int) or repeats < 1:
            raise ConfigError("'repeats' must be a positive integer", key="repeats")

        return cls(
            seed=seed,
            output_dir=raw['output_dir'],
            dataset=dict(dataset),
            encoder=dict(encoder),
            head=dict(head),
            training=dict(training),
            sweep=sweep,
            corruptions=corruptions,
            compare_variants=variants,
            repeats=repeats,
            checkpoint=raw.get('checkpoint'),
        )

    def to_dict(self) -> Dict[str, Any]:
        result = {
            'schema_version': self.schema_version,
            'seed': self.seed,
            'output_dir': self.output_dir,
            'dataset': self.dataset,
            'encoder': self.encoder,
            'head': self.head,
            'training': self.training,
            'repeats': self.repeats,
        }
        if self.sweep is not None:
            result['sweep'] = self.sweep
        if self.corruptions:
            result['corruptions'] = self.corruptions
        if self.compare_variants:
            result['compare'] = {'variants': self.compare_variants}
        if self.checkpoint is not None:
            result['checkpoint'] = self.checkpoint
        return result

    # ========== Builders ==========

    def load_datasets(self, seed: Optional[int] = None) -> Tuple[Dataset, Dataset]:
        """Generate or read the (train, test) splits."""
        seed = self.seed if seed is None else seed
        ds = self.dataset
        if ds['kind'] == 'synthetic':
            spec = SyntheticSpec(
                num_classes=_number(ds, 'num_classes', 'dataset', integer=True),
                num_superclasses=_number(ds, 'num_superclasses', 'dataset', integer=True),
                prototype_spread=_number(ds, 'prototype_spread', 'dataset'),
                within_class_noise=_number(ds, 'within_class_noise', 'dataset'),
                feature_dim=_number(ds, 'feature_dim', 'dataset', integer=True),
                examples_per_class=_number(ds, 'examples_per_class', 'dataset', integer=True),
                seed=seed,
                image_side=ds.get('image_side'),
                test_fraction=float(ds.get('test_fraction', 0.2)),
            )
            return generate_synthetic(spec)

        train = InputReader.read_idx(ds['train_images'], ds['train_labels'])
        test = InputReader.read_idx(ds['test_images'], ds['test_labels'])
        num_classes = max(train.num_classes, test.num_classes)
        train = Dataset(train.features, train.labels, num_classes, split="train")
        test = Dataset(test.features, test.labels, num_classes, split="test")
        return train, test

    def encoder_spec(self, input_shape: Tuple[int, ...], seed: Optional[int] = None) -> EncoderSpec:
        seed = self.seed if seed is None else seed
        return EncoderSpec(
            kind=self.encoder['kind'],
            input_shape=tuple(input_shape),
            widths=list(self.encoder['widths']),
            embed_dim=int(self.encoder['embed_dim']),
            seed=seed + 1,
        )

    def head_config(self, num_classes: int, seed: Optional[int] = None,
                    overrides: Optional[Dict[str, Any]] = None) -> HeadConfig:
        seed = self.seed if seed is None else seed
        head = dict(self.head)
        head.update({k: v for k, v in (overrides or {}).items() if k != 'label'})
        return HeadConfig(
            mode=head['mode'],
            num_classes=num_classes,
            embed_dim=int(self.encoder['embed_dim']),
            fixed=bool(head['fixed']),
            scale_s=float(head.get('scale_s', 1.0)),
            use_bias=bool(head.get('use_bias', False)),
            seed=seed + 2,
        )


class InputReader:
    """
    Read experiment inputs from external files.

    Supports:
    - IDX image and label files
    - Experiment configuration from JSON files
    """

    @staticmethod
    def _read_idx_array(filepath: Union[str, Path], expected_magic: int) -> np.ndarray:
        filepath = Path(filepath)
        if not filepath.exists():
            raise FileNotFoundError(f"IDX file not found: {filepath}")
        raw = filepath.read_bytes()

        if len(raw) < 4:
            raise TruncatedFileError(f"{filepath}: file too short for an IDX header")
        (magic,) = struct.unpack('>I', raw[:4])
        if magic != expected_magic:
            raise FormatError(f"{filepath}: magic number 0x{magic:08x}, expected 0x{expected_magic:08x}")

        ndims = magic & 0xFF
        header_size = 4 + 4 * ndims
        if len(raw) < header_size:
            raise TruncatedFileError(f"{filepath}: header truncated")
        dims = struct.unpack('>' + 'I' * ndims, raw[4:header_size])
        count = int(np.prod(dims, dtype=np.int64))
        if len(raw) < header_size + count:
            raise TruncatedFileError(
                f"{filepath}: expected {count} payload bytes, found {len(raw) - header_size}")
        return np.frombuffer(raw, dtype=np.uint8, count=count, offset=header_size).reshape(dims)

    @staticmethod
    def read_idx(image_path: Union[str, Path],
                 label_path: Union[str, Path],
                 num_classes: Optional[int] = None) -> Dataset:
        """
        Read an IDX image file and its label file.

        Images are scaled to [0, 1] (byte 255 -> 1.0) and shaped
        (count, 1, rows, cols).

        Args:
            image_path: Path to the images file (magic 0x00000803)
            label_path: Path to the labels file (magic 0x00000801)
            num_classes: Class count; defaults to max(label) + 1 (at least 2)

        Returns:
            Dataset
        """
        images = InputReader._read_idx_array(image_path, IDX_IMAGE_MAGIC)
        labels = InputReader._read_idx_array(label_path, IDX_LABEL_MAGIC)
        if images.shape[0] != labels.shape[0]:
            raise ConsistencyError(f"{images.shape[0]} images but {labels.shape[0]} labels")

        features = images.astype(np.float64)[:, None, :, :] / 255.0
        labels = labels.astype(np.int64)
        if num_classes is None:
            num_classes = max(2, int(labels.max()) + 1 if labels.size else 2)
        logger.debug("read %d IDX images of %dx%d from %s", images.shape[0], images.shape[1],
                     images.shape[2], image_path)
        return Dataset(features, labels, num_classes, split=Path(image_path).stem)

    @staticmethod
    def write_idx(dataset: Dataset, image_path: Union[str, Path], label_path: Union[str, Path]):
        """
        Write a dataset in IDX layout.

        Single-channel images are written as round(255 * x). Vector data is
        written as 1 x D images after a global min-max rescale to [0, 1].
        """
        features = dataset.features
        if dataset.is_image:
            if features.shape[1] != 1:
                raise DimensionError(f"IDX stores single-channel images, got {features.shape[1]} channels")
            pixels = features[:, 0]
        elif features.ndim == 2:
            pixels = features[:, None, :]
        else:
            raise DimensionError(f"cannot store features of shape {features.shape} as IDX images")

        low, high = float(pixels.min()), float(pixels.max())
        if low < 0.0 or high > 1.0:
            pixels = (pixels - low) / (high - low) if high > low else np.zeros_like(pixels)
        if dataset.labels.size and dataset.labels.max() > 255:
            raise FormatError("IDX labels are unsigned bytes; class indices above 255 cannot be stored")

        payload = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
        count, rows, cols = payload.shape
        with open(image_path, 'wb') as f:
            f.write(struct.pack('>IIII', IDX_IMAGE_MAGIC, count, rows, cols))
            f.write(payload.tobytes())
        with open(label_path, 'wb') as f:
            f.write(struct.pack('>II', IDX_LABEL_MAGIC, count))
            f.write(dataset.labels.astype(np.uint8).tobytes())

    @staticmethod
    def read_config_from_json(filepath: Union[str, Path]) -> ExperimentConfig:
        """
        Read and validate an experiment configuration.

        Args:
            filepath: Path to the JSON file

        Returns:
            ExperimentConfig

        Raises:
            FileNotFoundError: If the file does not exist
            ConfigError: If the document is not valid JSON or violates the schema
        """
        filepath = Path(filepath)
        if not filepath.exists():
            raise FileNotFoundError(f"Config file not found: {filepath}")
        with open(filepath, 'r') as f:
            try:
                raw = json.load(f)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{filepath}: invalid JSON ({exc})")
        return ExperimentConfig.from_dict(raw)


def load_idx(image_path: Union[str, Path], label_path: Union[str, Path]) -> Dataset:
    """Shortcut for InputReader.read_idx with the class count taken from the labels."""
    return InputReader.read_idx(image_path, label_path)


def create_template_config(output_dir: Union[str, Path] = ".") -> Path:
    """
    Create a template experiment configuration for users to edit.

    Args:
        output_dir: Directory where the template will be created

    Returns:
        Path of the written file
    """
    output_path = Path(output_dir)
    output_path.mkdir(parents=True, exist_ok=True)

    config_file = output_path / "experiment_template.json"
    config_data = {
        "schema_version": SCHEMA_VERSION,
        "seed": 0,
        "output_dir": "runs/template",
        "dataset": {
            "kind": "synthetic",
            "num_classes": 20,
            "num_superclasses": 5,
            "prototype_spread": 0.1,
            "within_class_noise": 0.15,
            "feature_dim": 64,
            "examples_per_class": 50,
            "image_side": 8
        },
        "encoder": {"kind": "MLP", "widths": [64], "embed_dim": 64},
        "head": {"mode": "COSINE", "fixed": True, "scale_s": 1.0},
        "training": {
            "learning_rate": 0.1,
            "momentum": 0.9,
            "epochs": 30,
            "batch_size": 32,
            "lr_decay": [[20, 0.1]]
        },
        "sweep": {"axis": "scale_s", "values": [1, 20, 40]},
        "corruptions": [
            {"kind": "salt_pepper", "severities": [0, 0.1, 0.3]},
            {"kind": "blur", "severities": [0, 1, 2]},
            {"kind": "compression", "severities": [0, 0.05, 0.2]}
        ]
    }

    with open(config_file, 'w') as f:
        json.dump(config_data, f, indent=2)

    print(f"✓ Created experiment template: {config_file}")
    return config_file
