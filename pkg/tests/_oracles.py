"""Independent reference implementations used as test oracles.

Everything here is written from first principles, separately from the
package code, so a test that compares the two exercises genuinely
different routes to the same answer.
"""

from __future__ import annotations

import math

import numpy as np

from chrono_shield.cnn import Prediction


def dense_gaussian_blur(plane: np.ndarray, sigma: float, radius: int) -> np.ndarray:
    """Direct 2-D convolution with an explicit (2r+1)^2 Gaussian kernel,
    clamp-to-edge borders. O(n^2 k^2), used only on tiny planes."""
    offsets = np.arange(-radius, radius + 1, dtype=np.float64)
    taps = np.exp(-(offsets**2) / (2.0 * sigma * sigma))
    taps /= taps.sum()
    kernel = np.outer(taps, taps)
    h, w = plane.shape
    out = np.zeros_like(plane, dtype=np.float64)
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    sy = min(max(y + dy, 0), h - 1)
                    sx = min(max(x + dx, 0), w - 1)
                    acc += kernel[dy + radius, dx + radius] * plane[sy, sx]
            out[y, x] = acc
    return out


def bilinear_reference(px: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Scalar-loop bilinear resample, half-pixel centers, edge clamped."""
    h, w, c = px.shape
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * h / out_h - 0.5, 0.0), h - 1.0)
        y0 = int(math.floor(sy))
        y1 = min(y0 + 1, h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * w / out_w - 0.5, 0.0), w - 1.0)
            x0 = int(math.floor(sx))
            x1 = min(x0 + 1, w - 1)
            fx = sx - x0
            for ch in range(c):
                top = px[y0, x0, ch] * (1 - fx) + px[y0, x1, ch] * fx
                bot = px[y1, x0, ch] * (1 - fx) + px[y1, x1, ch] * fx
                out[oy, ox, ch] = top * (1 - fy) + bot * fy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def polygon_membership(verts: np.ndarray, width: int, height: int) -> np.ndarray:
    """Even-odd point-in-polygon at pixel centers (x+0.5, y+0.5), scalar
    ray-casting loop. verts are (k, 2) absolute (x, y) coordinates."""
    bits = np.zeros((height, width), dtype=bool)
    k = len(verts)
    for y in range(height):
        py = y + 0.5
        for x in range(width):
            px = x + 0.5
            inside = False
            for i in range(k):
                x1, y1 = verts[i]
                x2, y2 = verts[(i + 1) % k]
                if (y1 <= py) != (y2 <= py):
                    xint = x1 + (py - y1) / (y2 - y1) * (x2 - x1)
                    if px < xint:
                        inside = not inside
            bits[y, x] = inside
    return bits


def dense_dilate(bits: np.ndarray, k: int) -> np.ndarray:
    """Any true pixel within the (2k+1)^2 window; outside the frame false."""
    h, w = bits.shape
    out = np.zeros_like(bits)
    for y in range(h):
        for x in range(w):
            for dy in range(-k, k + 1):
                for dx in range(-k, k + 1):
                    sy, sx = y + dy, x + dx
                    if 0 <= sy < h and 0 <= sx < w and bits[sy, sx]:
                        out[y, x] = True
    return out


def dense_erode(bits: np.ndarray, k: int) -> np.ndarray:
    """All pixels in the window true; outside the frame counts as true."""
    h, w = bits.shape
    out = np.ones_like(bits)
    for y in range(h):
        for x in range(w):
            for dy in range(-k, k + 1):
                for dx in range(-k, k + 1):
                    sy, sx = y + dy, x + dx
                    if 0 <= sy < h and 0 <= sx < w and not bits[sy, sx]:
                        out[y, x] = False
    return out


def haversine_law_of_cosines(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance via the spherical law of cosines (a different
    formula from the half-angle haversine), R = 6371 km."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    cosc = math.sin(lat1) * math.sin(lat2) + math.cos(lat1) * math.cos(lat2) * math.cos(lon2 - lon1)
    return 6371_000.0 * math.acos(min(1.0, max(-1.0, cosc)))


def png_forward_filter(ftype: int, cur: np.ndarray, prev: np.ndarray, bpp: int) -> np.ndarray:
    """Apply a PNG scanline filter in the forward (encoding) direction."""
    out = np.zeros_like(cur)
    for i in range(len(cur)):
        a = int(cur[i - bpp]) if i >= bpp else 0
        b = int(prev[i])
        c = int(prev[i - bpp]) if i >= bpp else 0
        if ftype == 0:
            pred = 0
        elif ftype == 1:
            pred = a
        elif ftype == 2:
            pred = b
        elif ftype == 3:
            pred = (a + b) // 2
        elif ftype == 4:
            p = a + b - c
            pa, pb, pc = abs(p - a), abs(p - b), abs(p - c)
            pred = a if (pa <= pb and pa <= pc) else (b if pb <= pc else c)
        else:
            raise ValueError(ftype)
        out[i] = (int(cur[i]) - pred) % 256
    return out


def mk_pred(label: int, confidence: float, num_classes: int = 16) -> Prediction:
    """A Prediction with the stated top confidence and a flat remainder."""
    dist = np.full(num_classes, (1.0 - confidence) / max(num_classes - 1, 1))
    dist[label] = confidence
    return Prediction(label=label, confidence=confidence, distribution=dist)
