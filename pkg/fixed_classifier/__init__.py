"""
Fixed Classifier Framework

This package trains small image classifiers whose final classification layer
is either learned or fixed to random unit class vectors, with dot-product or
scaled cosine-similarity logits, and measures what fixing the layer does to
accuracy, embedding geometry and robustness.
"""

__version__ = "1.0.0"
__author__ = "Fixed Classifier Team"

from .tensor import Tensor, Graph, grad_check
from .heads import HeadMode, HeadConfig, ClassificationHead, init_head, max_predicted_probability
from .encoder import EncoderKind, EncoderSpec, Encoder, build_encoder, encode
from .data import Dataset, SyntheticSpec, generate_synthetic
from .corruptions import apply_corruption
from .trainer import TrainConfig, Model, RunResult, SweepTable, train, evaluate, sweep
from .checkpoint import save_checkpoint, load_checkpoint
from .metrics import MetricsReport, build_report
from .input_reader import ExperimentConfig, InputReader, create_template_config, load_idx

__all__ = ['Tensor', 'Graph', 'grad_check', 'HeadMode', 'HeadConfig', 'ClassificationHead', 'init_head',
           'max_predicted_probability', 'EncoderKind', 'EncoderSpec', 'Encoder', 'build_encoder', 'encode',
           'Dataset', 'SyntheticSpec', 'generate_synthetic', 'apply_corruption', 'TrainConfig', 'Model',
           'RunResult', 'SweepTable', 'train', 'evaluate', 'sweep', 'save_checkpoint', 'load_checkpoint',
           'MetricsReport', 'build_report', 'ExperimentConfig', 'InputReader', 'create_template_config',
           'load_idx']
