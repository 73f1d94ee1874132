"""Seeded augmentation pipeline for normalized frames.

Factors follow the training recipe: horizontal flip, random rotation
expressed as a fraction of a full turn (0.01 -> at most 3.6 degrees),
random zoom by a fraction around 1, and a multiplicative brightness factor
drawn from [0.2, 1.0]. Steps run in that fixed order so a fixed seed gives
a bit-identical result; out-of-frame samples from rotation/zoom are filled
with 0 and the final result is clamped back to [0, 1].

Augmentation is intended for the training split only; validation and test
frames go through normalization and resizing alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError
from .image import ImageFrame, affine_sample
from .rng import SeededGenerator

_RANGE_TOL = 1e-6


@dataclass(frozen=True)
class AugmentationPolicy:
    """Factor table for the augmentation chain."""

    normalize: bool = True
    resize_to: tuple[int, int] | None = None
    horizontal_flip: float = 0.5
    rotation_factor: float = 0.01
    zoom_factor: float = 0.2
    brightness_range: tuple[float, float] = (0.2, 1.0)

    def __post_init__(self):
        if not 0.0 <= self.horizontal_flip <= 1.0:
            raise ContractError(f"flip probability {self.horizontal_flip} outside [0, 1]")
        if self.rotation_factor < 0:
            raise ContractError("rotation_factor must be >= 0")
        if self.zoom_factor < 0:
            raise ContractError("zoom_factor must be >= 0")
        low, high = self.brightness_range
        if not 0 < low <= high:
            raise ContractError(f"brightness range {self.brightness_range} needs 0 < low <= high")


def flip_horizontal(frame: ImageFrame) -> ImageFrame:
    """Mirror around the vertical axis; exact involution."""
    return ImageFrame(frame.pixels[:, ::-1, :].copy())


def rotate(frame: ImageFrame, angle: float) -> ImageFrame:
    """Rotate about the center by angle radians, zero fill outside."""
    if angle == 0.0:
        return frame
    c, s = math.cos(angle), math.sin(angle)
    # inverse map of a rotation by `angle` in (y, x) coordinates
    matrix = np.array([[c, s], [-s, c]], dtype=np.float64)
    return affine_sample(frame, matrix, fill=0.0)


def zoom(frame: ImageFrame, scale: float) -> ImageFrame:
    """Scale about the center; scale > 1 magnifies, < 1 shrinks with zero fill."""
    if scale <= 0:
        raise ContractError(f"zoom scale must be positive, got {scale}")
    if scale == 1.0:
        return frame
    inv = 1.0 / scale
    matrix = np.array([[inv, 0.0], [0.0, inv]], dtype=np.float64)
    return affine_sample(frame, matrix, fill=0.0)


def apply_augmentation(frame: ImageFrame, policy: AugmentationPolicy,
                       rng: SeededGenerator) -> ImageFrame:
    """Flip -> rotate -> zoom -> brightness -> clamp, deterministic per seed.

    The input must already be normalized to [0, 1]. All four random draws
    are consumed every call, even for neutral factors, so the consumed
    stream length does not depend on the policy.
    """
    lo = float(frame.pixels.min())
    hi = float(frame.pixels.max())
    if hi > 1.0 + _RANGE_TOL or lo < -_RANGE_TOL:
        raise ContractError(
            f"apply_augmentation expects [0, 1] input, saw range [{lo:.4g}, {hi:.4g}]"
        )

    do_flip = rng.uniform() < policy.horizontal_flip
    angle = rng.uniform(-policy.rotation_factor, policy.rotation_factor) * 2.0 * math.pi
    scale = rng.uniform(1.0 - policy.zoom_factor, 1.0 + policy.zoom_factor)
    brightness = rng.uniform(*policy.brightness_range)

    out = frame
    if do_flip:
        out = flip_horizontal(out)
    out = rotate(out, angle)
    out = zoom(out, scale)
    return ImageFrame(np.clip(out.pixels * brightness, 0.0, 1.0))
