"""8-bit raster images and the shared pixel transforms.

Images are row-major, interleaved, 1 (gray) or 3 (RGB) channels. Every
transform is pure: inputs are never mutated, intermediate math runs in
float64, and results are quantized back to uint8 only at the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Intermediate scalar field, shape (h, w), float64.
FloatPlane = np.ndarray

# ITU-R 601 luma weights.
GRAY_WEIGHTS = (0.299, 0.587, 0.114)


class InvalidSigma(ValueError):
    """Blur requested with sigma <= 0."""


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Immutable uint8 image, pixels shaped (h, w, c) with c in {1, 3}."""

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3 or px.shape[2] not in (1, 3):
            raise ValueError(f"expected (h, w, 1|3) pixel array, got shape {px.shape}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise ValueError("image dimensions must be positive")
        px = np.array(px, dtype=np.uint8, order="C")
        px.flags.writeable = False
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    @property
    def data(self) -> bytes:
        """Raw interleaved samples, length width*height*channels."""
        return self.pixels.tobytes()

    def __eq__(self, other) -> bool:
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and bool(
            np.array_equal(self.pixels, other.pixels)
        )

    def __repr__(self) -> str:
        return f"RasterImage({self.width}x{self.height}x{self.channels})"


def to_grayscale(img: RasterImage) -> RasterImage:
    """601-weighted luma. Grayscale input passes through unchanged."""
    if img.channels == 1:
        return img
    rgb = img.pixels.astype(np.float64)
    luma = GRAY_WEIGHTS[0] * rgb[:, :, 0] + GRAY_WEIGHTS[1] * rgb[:, :, 1] + GRAY_WEIGHTS[2] * rgb[:, :, 2]
    return RasterImage(np.clip(np.rint(luma), 0, 255).astype(np.uint8))


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    """1-D Gaussian taps at integer offsets -radius..radius, normalized to sum 1."""
    if sigma <= 0:
        raise InvalidSigma(f"sigma must be positive, got {sigma}")
    if radius < 1:
        raise ValueError(f"radius must be >= 1, got {radius}")
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    return taps / taps.sum()


def blur_plane(plane: FloatPlane, sigma: float, radius: int) -> FloatPlane:
    """Separable Gaussian blur of a float plane, clamp-to-edge borders."""
    taps = gaussian_kernel(sigma, radius)
    padded = np.pad(plane, ((radius, radius), (0, 0)), mode="edge")
    h = plane.shape[0]
    out = np.zeros_like(plane, dtype=np.float64)
    for k, t in enumerate(taps):
        out += t * padded[k : k + h, :]
    padded = np.pad(out, ((0, 0), (radius, radius)), mode="edge")
    w = plane.shape[1]
    out2 = np.zeros_like(plane, dtype=np.float64)
    for k, t in enumerate(taps):
        out2 += t * padded[:, k : k + w]
    return out2


def gaussian_blur(img: RasterImage, sigma: float = 1.4, radius: int = 2) -> RasterImage:
    """Gaussian-blur a 1-channel image; output same dims, quantized to uint8."""
    if img.channels != 1:
        raise ValueError("gaussian_blur expects a 1-channel image")
    out = blur_plane(img.pixels[:, :, 0].astype(np.float64), sigma, radius)
    return RasterImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))


def resize_bilinear(img: RasterImage, out_w: int, out_h: int) -> RasterImage:
    """Bilinear resample with half-pixel-center mapping. Identity at same size."""
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be positive")
    if out_w == img.width and out_h == img.height:
        return img
    src = img.pixels.astype(np.float64)
    h, w = img.height, img.width
    # Half-pixel centers: dst center (i+0.5) maps to src coordinate space.
    sx = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    sy = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    sx = np.clip(sx, 0.0, w - 1.0)
    sy = np.clip(sy, 0.0, h - 1.0)
    x0 = np.floor(sx).astype(np.int64)
    y0 = np.floor(sy).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (sx - x0)[None, :, None]
    fy = (sy - y0)[:, None, None]
    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy) + bot * fy
    return RasterImage(np.clip(np.rint(out), 0, 255).astype(np.uint8))
