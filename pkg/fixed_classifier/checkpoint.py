"""
Checkpoint Module

FXH1 model files:

    bytes 0-3    magic b"FXH1"
    bytes 4-7    format version, little-endian u32
    bytes 8-11   header length H, little-endian u32
    next H       UTF-8 JSON header (sorted keys): encoder spec, head config,
                 head init digest, tensor names and shapes in blob order
    remainder    each tensor as little-endian float64, C order

Files are canonical: saving a loaded model reproduces the input bytes.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Union

import numpy as np

from .encoder import Encoder, EncoderSpec
from .exceptions import FormatError, IntegrityError, TruncatedFileError
from .heads import ClassificationHead, HeadConfig
from .tensor import Tensor
from .trainer import Model

logger = logging.getLogger(__name__)

MAGIC = b"FXH1"
FORMAT_VERSION = 1
_PREFIX = struct.Struct('<4sII')


def save_checkpoint(model: Model, path: Union[str, Path]):
    """
    Write every tensor of ``model`` to an FXH1 file.

    Args:
        model: Model to save
        path: Destination file
    """
    tensors = dict(model.state())
    if model.mean is not None:
        tensors['input.mean'] = np.asarray(model.mean, dtype=np.float64)
        tensors['input.std'] = np.asarray(model.std, dtype=np.float64)

    header = {
        'encoder': model.encoder.spec.to_dict(),
        'head': model.head.config.to_dict(),
        'init_digest': model.head.init_digest,
        'tensors': [{'name': name, 'shape': list(t.shape)} for name, t in tensors.items()],
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')

    with open(path, 'wb') as f:
        f.write(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
        f.write(header_bytes)
        for t in tensors.values():
            f.write(np.ascontiguousarray(t, dtype='<f8').tobytes())
    logger.debug("saved %d tensors to %s", len(tensors), path)


def load_checkpoint(path: Union[str, Path]) -> Model:
    """
    Read an FXH1 file.

    Returns:
        Model with every tensor restored bit-exactly

    Raises:
        FormatError: Bad magic, unsupported version or malformed header
        TruncatedFileError: File shorter than its header announces
        IntegrityError: A fixed head's weights no longer match their init digest
    """
    raw = Path(path).read_bytes()
    if len(raw) < _PREFIX.size:
        raise TruncatedFileError(f"{path}: too short for an FXH1 header")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported FXH1 version {version}")

    offset = _PREFIX.size + header_len
    if len(raw) < offset:
        raise TruncatedFileError(f"{path}: header truncated")
    try:
        header = json.loads(raw[_PREFIX.size:offset].decode('utf-8'))
        encoder_spec = EncoderSpec(**header['encoder'])
        head_config = HeadConfig(**header['head'])
        entries = header['tensors']
        init_digest = header['init_digest']
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed header ({exc})")

    tensors = {}
    for entry in entries:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if len(raw) < end:
            raise TruncatedFileError(f"{path}: tensor {entry['name']} truncated")
        tensors[entry['name']] = np.frombuffer(raw, dtype='<f8', count=count, offset=offset).reshape(shape).copy()
        offset = end

    encoder_params = {name: Tensor(values, requires_grad=True)
                      for name, values in tensors.items() if name.startswith('encoder.')}
    head = ClassificationHead(head_config, tensors['head.weights'], tensors.get('head.bias'), init_digest)
    if head_config.fixed and not head.verify_digest():
        raise IntegrityError(f"{path}: fixed head weights do not match their initialization digest")

    return Model(Encoder(encoder_spec, encoder_params), head,
                 tensors.get('input.mean'), tensors.get('input.std'))
