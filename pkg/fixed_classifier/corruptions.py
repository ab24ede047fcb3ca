"""
Corruptions Module

Severity-controlled image corruptions used to measure robustness:

    salt_pepper:  impulse noise, each pixel replaced by 0 or 1 with probability p
    blur:         de-focus stand-in, box filter of side 2*radius+1 (replicate padding)
    compression:  8x8 orthonormal DCT-II coefficient quantization with step q
                  (a proxy for JPEG compression, not a codec)

Images are arrays with values in [0, 1] whose last two axes are spatial; any
leading axes (batch, channel) are carried through. A severity of 0 means "no
corruption" in ``apply_corruption``.
"""

from enum import Enum
from typing import Tuple, Union

import numpy as np
from scipy.fft import dctn, idctn
from scipy.ndimage import uniform_filter

from .exceptions import ConfigError, DimensionError, RangeError

BLOCK = 8


class CorruptionKind(Enum):
    """Available corruption families"""
    SALT_PEPPER = "salt_pepper"
    BLUR = "blur"
    COMPRESSION = "compression"


def _generator(rng: Union[np.random.Generator, int]) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def corrupt_salt_pepper(x: np.ndarray, p: float, rng: Union[np.random.Generator, int] = 0) -> np.ndarray:
    """
    Impulse noise.

    Args:
        x: Image array with values in [0, 1]
        p: Replacement probability per pixel
        rng: Generator or seed

    Returns:
        Corrupted copy of x
    """
    if not 0.0 <= p <= 1.0:
        raise RangeError(f"salt-and-pepper probability must lie in [0, 1], got {p}")
    rng = _generator(rng)
    x = np.asarray(x, dtype=np.float64)
    hit = rng.random(x.shape) < p
    salt = (rng.random(x.shape) < 0.5).astype(np.float64)
    return np.where(hit, salt, x)


def corrupt_blur(x: np.ndarray, radius: int) -> np.ndarray:
    """
    Box blur over the two spatial axes.

    Args:
        x: Image array, spatial axes last
        radius: Kernel half-width (>= 1); the kernel side is 2*radius+1

    Returns:
        Blurred copy of x
    """
    if radius < 1 or int(radius) != radius:
        raise RangeError(f"blur radius must be an integer >= 1, got {radius}")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"blur expects at least 2 spatial axes, got shape {x.shape}")
    side = 2 * int(radius) + 1
    size = (1,) * (x.ndim - 2) + (side, side)
    return uniform_filter(x, size=size, mode='nearest')


def _blocks(padded: np.ndarray) -> np.ndarray:
    """(..., H, W) -> (..., H/8, W/8, 8, 8)"""
    *lead, h, w = padded.shape
    blocks = padded.reshape(*lead, h // BLOCK, BLOCK, w // BLOCK, BLOCK)
    return np.swapaxes(blocks, -3, -2)


def _unblocks(blocks: np.ndarray) -> np.ndarray:
    """(..., H/8, W/8, 8, 8) -> (..., H, W)"""
    *lead, hb, wb, _, _ = blocks.shape
    return np.swapaxes(blocks, -3, -2).reshape(*lead, hb * BLOCK, wb * BLOCK)


def block_dct(x: np.ndarray) -> np.ndarray:
    """
    Orthonormal 2-D DCT-II of every 8x8 block.

    The image is padded by edge replication to multiples of 8 first.

    Returns:
        Coefficients of shape (..., H8/8, W8/8, 8, 8)
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2:
        raise DimensionError(f"block DCT expects at least 2 spatial axes, got shape {x.shape}")
    h, w = x.shape[-2:]
    pad_h = (-h) % BLOCK
    pad_w = (-w) % BLOCK
    padded = np.pad(x, [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)], mode='edge')
    return dctn(_blocks(padded), type=2, norm='ortho', axes=(-2, -1))


def block_idct(coefs: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Inverse of block_dct, cropped back to ``shape``."""
    pixels = _unblocks(idctn(coefs, type=2, norm='ortho', axes=(-2, -1)))
    h, w = shape[-2:]
    return pixels[..., :h, :w]


def corrupt_block_compression(x: np.ndarray, q: float) -> np.ndarray:
    """
    Blockwise DCT quantization.

    Args:
        x: Image array with values in [0, 1]
        q: Quantization step (>= 0); q = 0 leaves coefficients untouched

    Returns:
        Reconstructed image clamped to [0, 1]
    """
    if q < 0:
        raise RangeError(f"quantization step must be >= 0, got {q}")
    x = np.asarray(x, dtype=np.float64)
    coefs = block_dct(x)
    if q > 0:
        coefs = q * np.round(coefs / q)
    return np.clip(block_idct(coefs, x.shape), 0.0, 1.0)


def apply_corruption(kind: Union[CorruptionKind, str],
                     x: np.ndarray,
                     severity: float,
                     seed: int = 0) -> np.ndarray:
    """
    Apply one corruption by name.

    Args:
        kind: Corruption family
        x: Image array
        severity: p for salt_pepper, radius for blur, q for compression;
                  0 returns an unchanged copy
        seed: Seed for salt_pepper

    Returns:
        Corrupted copy of x

    Raises:
        ConfigError: If kind names no corruption family
    """
    if not isinstance(kind, CorruptionKind):
        try:
            kind = CorruptionKind(str(kind).lower())
        except ValueError:
            raise ConfigError(f"Unknown corruption kind: {kind!r}", key="corruptions.kind")
    x = np.asarray(x, dtype=np.float64)
    if severity == 0:
        return x.copy()
    if kind == CorruptionKind.SALT_PEPPER:
        return corrupt_salt_pepper(x, severity, seed)
    if kind == CorruptionKind.BLUR:
        return corrupt_blur(x, severity)
    return corrupt_block_compression(x, severity)
