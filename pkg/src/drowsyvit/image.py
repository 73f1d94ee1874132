"""Image frames, bilinear resampling, normalization, and PNG I/O.

Pixel values are floats throughout; the expected range depends on the stage:
raw ingestion is [0, 255], after normalize_frame with mean 0 / std 1 it is
[0, 1]. A single bilinear kernel backs resizing and the affine resampling
used by the augmentation pipeline, with two border policies: clamp-to-edge
(resize) and constant fill (rotation/zoom).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import ContractError, IngestionError, NonFiniteError


@dataclass(frozen=True)
class ImageFrame:
    """H x W x C raster of real-valued pixels (C is 1 or 3)."""

    pixels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ContractError(f"pixels must be H x W x C, got shape {arr.shape}")
        if arr.shape[2] not in (1, 3):
            raise ContractError(f"channel count must be 1 or 3, got {arr.shape[2]}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("image holds NaN or Inf pixels")
        object.__setattr__(self, "pixels", arr)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.pixels.shape


def read_png(path) -> ImageFrame:
    """Decode an image file into a raw [0, 255] float frame."""
    try:
        with Image.open(path) as img:
            if img.mode in ("RGB", "L"):
                decoded = img
            elif img.mode in ("1", "I", "I;16", "F", "LA"):
                decoded = img.convert("L")
            else:
                decoded = img.convert("RGB")
            arr = np.asarray(decoded, dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise IngestionError(f"cannot decode image {path}: {exc}") from exc
    return ImageFrame(arr)


def write_png(frame: ImageFrame, path) -> None:
    """Encode a [0, 255] frame as 8-bit PNG (lossless for 8-bit data)."""
    arr = np.clip(np.rint(frame.pixels), 0, 255).astype(np.uint8)
    if arr.shape[2] == 1:
        img = Image.fromarray(arr[:, :, 0], mode="L")
    else:
        img = Image.fromarray(arr, mode="RGB")
    img.save(path, format="PNG")


def _bilinear_gather(pixels: np.ndarray, ys: np.ndarray, xs: np.ndarray,
                     fill: float | None) -> np.ndarray:
    """Sample pixels at float coordinates with bilinear weights.

    fill=None clamps neighbor indices to the frame edge; a float fill
    substitutes that value for neighbors falling outside the frame.
    """
    h, w = pixels.shape[:2]
    y0 = np.floor(ys)
    x0 = np.floor(xs)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    y0 = y0.astype(np.int64)
    x0 = x0.astype(np.int64)

    def corner(yi, xi):
        if fill is None:
            yc = np.clip(yi, 0, h - 1)
            xc = np.clip(xi, 0, w - 1)
            return pixels[yc, xc]
        inside = (yi >= 0) & (yi < h) & (xi >= 0) & (xi < w)
        yc = np.clip(yi, 0, h - 1)
        xc = np.clip(xi, 0, w - 1)
        vals = pixels[yc, xc]
        return np.where(inside[..., None], vals, fill)

    top = corner(y0, x0) * (1 - wx) + corner(y0, x0 + 1) * wx
    bottom = corner(y0 + 1, x0) * (1 - wx) + corner(y0 + 1, x0 + 1) * wx
    return top * (1 - wy) + bottom * wy


def resize_bilinear(frame: ImageFrame, target: tuple[int, int]) -> ImageFrame:
    """Resize to (height, width) with half-pixel-center bilinear sampling."""
    th, tw = int(target[0]), int(target[1])
    if th < 1 or tw < 1:
        raise ContractError(f"resize target must be >= 1, got {(th, tw)}")
    if (th, tw) == (frame.height, frame.width):
        return ImageFrame(frame.pixels.copy())
    ys = (np.arange(th, dtype=np.float64) + 0.5) * (frame.height / th) - 0.5
    xs = (np.arange(tw, dtype=np.float64) + 0.5) * (frame.width / tw) - 0.5
    grid_y, grid_x = np.meshgrid(ys, xs, indexing="ij")
    return ImageFrame(_bilinear_gather(frame.pixels, grid_y, grid_x, fill=None))


def affine_sample(frame: ImageFrame, matrix: np.ndarray, fill: float = 0.0) -> ImageFrame:
    """Resample through an inverse-map 2x2 matrix about the frame center.

    Output pixel p maps to source coordinate center + matrix @ (p - center);
    out-of-frame samples take the fill value.
    """
    cy = (frame.height - 1) / 2.0
    cx = (frame.width - 1) / 2.0
    ys, xs = np.meshgrid(
        np.arange(frame.height, dtype=np.float64) - cy,
        np.arange(frame.width, dtype=np.float64) - cx,
        indexing="ij",
    )
    src_y = matrix[0, 0] * ys + matrix[0, 1] * xs + cy
    src_x = matrix[1, 0] * ys + matrix[1, 1] * xs + cx
    return ImageFrame(_bilinear_gather(frame.pixels, src_y, src_x, fill=fill))


def normalize_frame(frame: ImageFrame, mean, std) -> ImageFrame:
    """Map raw [0, 255] pixels to (v/255 - mean_c) / std_c per channel."""
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (frame.channels,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (frame.channels,))
    if np.any(std == 0):
        raise ContractError("normalize_frame: std must be nonzero for every channel")
    return ImageFrame((frame.pixels / 255.0 - mean) / std)


def standardize_frame(frame: ImageFrame, mean, std) -> ImageFrame:
    """Per-channel (v - mean_c) / std_c for frames already in [0, 1]."""
    mean = np.broadcast_to(np.asarray(mean, dtype=np.float64), (frame.channels,))
    std = np.broadcast_to(np.asarray(std, dtype=np.float64), (frame.channels,))
    if np.any(std == 0):
        raise ContractError("standardize_frame: std must be nonzero for every channel")
    return ImageFrame((frame.pixels - mean) / std)
