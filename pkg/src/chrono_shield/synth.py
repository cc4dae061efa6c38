"""Procedural sign imagery at desk scale.

Sixteen sign archetypes (shape + palette + glyph) rendered over randomized
backgrounds with nuisance jitter: position +-15% of the frame, scale
0.6-0.9 of the frame, rotation +-10 degrees, brightness +-20%. Rendering
is analytic (membership tests at pixel centers), so the same geometry also
yields exact ground-truth region masks for the mask-fidelity probes.
Everything is deterministic under the config seed.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from datetime import date

import numpy as np

from .attack import InvalidConfig
from .codecs import save_image
from .dataset import LabeledImageSet
from .raster import RasterImage

CLASS_NAMES = [
    "stop",
    "yield",
    "pedestrian_crossing",
    "merge",
    "signal_ahead",
    "curve_left",
    "curve_right",
    "lane_ends",
    "stop_ahead",
    "yield_ahead",
    "school",
    "speed_limit_25",
    "speed_limit_35",
    "keep_right",
    "turn_right",
    "railroad",
]

_COLORS = {
    "red": (178, 24, 43),
    "yellow": (240, 200, 60),
    "orange": (230, 120, 30),
    "white": (235, 235, 235),
    "black": (25, 25, 25),
}


@dataclass(frozen=True)
class SynthConfig:
    per_class: int = 100
    test_per_class: int = 4
    side: int = 64
    seed: int = 0


# ---------------------------------------------------------------------------
# Canonical geometry (unit circumradius, y grows downward)


def _regular_ngon(n: int, phase_deg: float) -> np.ndarray:
    ang = np.radians(phase_deg + 360.0 * np.arange(n) / n)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


_SHAPES: dict[str, np.ndarray | None] = {
    "octagon": _regular_ngon(8, 22.5),  # flat top
    "diamond": _regular_ngon(4, 0.0),  # vertices on axes
    "square": _regular_ngon(4, 45.0),
    "inv_triangle": _regular_ngon(3, 90.0),  # apex points down
    "tall_rect": np.array([(0.62, -0.95), (0.62, 0.95), (-0.62, 0.95), (-0.62, -0.95)]),
    "pentagon": np.array([(0.0, -1.0), (0.95, -0.15), (0.75, 1.0), (-0.75, 1.0), (-0.95, -0.15)]),
    "circle": None,
}

# Inradius / circumradius, used to pick frame sizes for the probes.
_INRADIUS_FRAC = {
    "octagon": float(np.cos(np.pi / 8)),
    "diamond": float(np.cos(np.pi / 4)),
    "inv_triangle": 0.5,
    "circle": 1.0,
}


def _in_convex(px: np.ndarray, py: np.ndarray, verts: np.ndarray, scale: float = 1.0) -> np.ndarray:
    v = verts * scale
    n = len(v)
    # Winding sign so vertex order does not matter.
    area2 = 0.0
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        area2 += x1 * y2 - x2 * y1
    sign = 1.0 if area2 >= 0 else -1.0
    inside = np.ones(px.shape, dtype=bool)
    for i in range(n):
        x1, y1 = v[i]
        x2, y2 = v[(i + 1) % n]
        inside &= sign * ((x2 - x1) * (py - y1) - (y2 - y1) * (px - x1)) >= 0
    return inside


def _in_shape(px: np.ndarray, py: np.ndarray, shape: str, scale: float = 1.0) -> np.ndarray:
    if shape == "circle":
        return px * px + py * py <= scale * scale
    return _in_convex(px, py, _SHAPES[shape], scale)


def _in_bar(px, py, cx, cy, angle_deg, halflen, halfwidth):
    a = np.radians(angle_deg)
    dx = px - cx
    dy = py - cy
    along = dx * np.cos(a) + dy * np.sin(a)
    across = -dx * np.sin(a) + dy * np.cos(a)
    return (np.abs(along) <= halflen) & (np.abs(across) <= halfwidth)


def _in_dot(px, py, cx, cy, r):
    return (px - cx) ** 2 + (py - cy) ** 2 <= r * r


# (shape, fill, ring color or None, ring inner scale, glyph list)
# Glyphs are (kind, color, args...) evaluated in canonical sign coords.
_ARCHETYPES: dict[str, tuple] = {
    "stop": ("octagon", "red", "white", 0.86, [("bar", "white", 0.0, 0.0, 0.0, 0.62, 0.17)]),
    "yield": ("inv_triangle", "white", "red", 0.55, []),
    "pedestrian_crossing": (
        "diamond",
        "yellow",
        "black",
        0.85,
        [("dot", "black", 0.0, -0.33, 0.14), ("bar", "black", 0.0, 0.12, 90.0, 0.27, 0.10)],
    ),
    "merge": (
        "diamond",
        "yellow",
        "black",
        0.85,
        [("bar", "black", -0.17, -0.05, 62.0, 0.38, 0.09), ("bar", "black", 0.17, -0.05, 118.0, 0.38, 0.09)],
    ),
    "signal_ahead": (
        "diamond",
        "yellow",
        "black",
        0.85,
        [("dot", "black", 0.0, -0.34, 0.13), ("dot", "black", 0.0, 0.0, 0.13), ("dot", "black", 0.0, 0.34, 0.13)],
    ),
    "curve_left": ("diamond", "yellow", "black", 0.85, [("bar", "black", 0.0, 0.0, 130.0, 0.42, 0.11)]),
    "curve_right": ("diamond", "yellow", "black", 0.85, [("bar", "black", 0.0, 0.0, 50.0, 0.42, 0.11)]),
    "lane_ends": ("diamond", "orange", "black", 0.85, [("bar", "black", 0.0, 0.0, 90.0, 0.45, 0.11)]),
    "stop_ahead": ("diamond", "yellow", "black", 0.85, [("mini", "red", "octagon", 0.42)]),
    "yield_ahead": ("diamond", "yellow", "black", 0.85, [("mini", "red", "inv_triangle", 0.48)]),
    "school": ("pentagon", "yellow", "black", 0.86, [("bar", "black", 0.0, 0.45, 0.0, 0.55, 0.13)]),
    "speed_limit_25": (
        "tall_rect",
        "white",
        "black",
        0.82,
        [("bar", "black", 0.0, -0.33, 0.0, 0.38, 0.12), ("bar", "black", 0.0, 0.18, 0.0, 0.38, 0.12)],
    ),
    "speed_limit_35": (
        "tall_rect",
        "white",
        "black",
        0.82,
        [
            ("bar", "black", 0.0, -0.45, 0.0, 0.38, 0.09),
            ("bar", "black", 0.0, 0.0, 0.0, 0.38, 0.09),
            ("bar", "black", 0.0, 0.45, 0.0, 0.38, 0.09),
        ],
    ),
    "keep_right": (
        "square",
        "white",
        "black",
        0.85,
        [("tri", "black", ((-0.18, -0.42), (-0.18, 0.42), (0.5, 0.0)))],
    ),
    "turn_right": (
        "square",
        "white",
        "black",
        0.85,
        [("bar", "black", -0.05, 0.18, 0.0, 0.38, 0.10), ("bar", "black", 0.28, -0.1, 90.0, 0.38, 0.10)],
    ),
    "railroad": ("circle", "yellow", "black", 0.87, [("bar", "black", 0.0, 0.0, 45.0, 0.52, 0.11), ("bar", "black", 0.0, 0.0, 135.0, 0.52, 0.11)]),
}


def _jitter_color(color: tuple[int, int, int], rng: np.random.Generator) -> np.ndarray:
    c = np.asarray(color, dtype=np.float64) + rng.uniform(-8, 8, size=3)
    return np.clip(c, 0, 255)


def _background(side: int, rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(60, 110)
    sx = rng.uniform(-0.25, 0.25)
    sy = rng.uniform(-0.25, 0.25)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    plane = base + sx * (xx - side / 2) + sy * (yy - side / 2)
    plane = plane[:, :, None] + rng.uniform(-6, 6, size=(side, side, 3))
    tint = rng.uniform(-10, 10, size=3)
    return np.clip(plane + tint, 0, 255)


def render_sign(label: int, side: int, rng: np.random.Generator) -> RasterImage:
    """One randomized frame of the given class."""
    name = CLASS_NAMES[label]
    shape, fill, ring, ring_inner, glyphs = _ARCHETYPES[name]

    canvas = _background(side, rng)

    # Nuisance parameters.
    scale_frac = rng.uniform(0.6, 0.9)
    radius = scale_frac * side / 2.0
    cx = side / 2.0 + rng.uniform(-0.15, 0.15) * side
    cy = side / 2.0 + rng.uniform(-0.15, 0.15) * side
    theta = np.radians(rng.uniform(-10.0, 10.0))
    brightness = rng.uniform(0.8, 1.2)

    yy, xx = np.mgrid[0:side, 0:side]
    # Pixel centers into canonical sign coordinates.
    dx = (xx + 0.5 - cx) / radius
    dy = (yy + 0.5 - cy) / radius
    px = np.cos(theta) * dx + np.sin(theta) * dy
    py = -np.sin(theta) * dx + np.cos(theta) * dy

    outer = _in_shape(px, py, shape, 1.0)
    fill_color = _jitter_color(_COLORS[fill], rng)
    if ring is not None:
        inner = _in_shape(px, py, shape, ring_inner)
        ring_color = _jitter_color(_COLORS[ring], rng)
        canvas[outer & ~inner] = ring_color
        canvas[inner] = fill_color
    else:
        canvas[outer] = fill_color

    for glyph in glyphs:
        kind, color = glyph[0], glyph[1]
        gcol = _jitter_color(_COLORS[color], rng)
        if kind == "bar":
            _, _, gx, gy, ang, hl, hw = glyph
            sel = _in_bar(px, py, gx, gy, ang, hl, hw)
        elif kind == "dot":
            _, _, gx, gy, r = glyph
            sel = _in_dot(px, py, gx, gy, r)
        elif kind == "mini":
            _, _, mini_shape, mini_scale = glyph
            sel = _in_shape(px, py, mini_shape, mini_scale)
        elif kind == "tri":
            sel = _in_convex(px, py, np.asarray(glyph[2], dtype=np.float64))
        else:
            raise ValueError(f"unknown glyph kind {kind!r}")
        canvas[sel] = gcol

    out = np.clip(np.rint(canvas * brightness), 0, 255).astype(np.uint8)
    return RasterImage(out)


def synth_dataset(config: SynthConfig = SynthConfig()) -> LabeledImageSet:
    """Train/test corpus over all 16 classes, deterministic under the seed."""
    if config.per_class < 1:
        raise InvalidConfig(f"per_class must be >= 1, got {config.per_class}")
    if config.test_per_class < 0:
        raise InvalidConfig(f"test_per_class must be >= 0, got {config.test_per_class}")
    if config.side < 16:
        raise InvalidConfig(f"side must be >= 16, got {config.side}")
    rng = np.random.default_rng(config.seed)
    ds = LabeledImageSet(class_names=list(CLASS_NAMES))
    for label in range(len(CLASS_NAMES)):
        for _ in range(config.per_class):
            ds.items.append((render_sign(label, config.side, rng), label, "train"))
    for label in range(len(CLASS_NAMES)):
        for _ in range(config.test_per_class):
            ds.items.append((render_sign(label, config.side, rng), label, "test"))
    ds.validate()
    return ds


# ---------------------------------------------------------------------------
# History archives for the defense protocol

_ARCHIVE_DATES = (date(2016, 10, 12), date(2019, 7, 3), date(2020, 11, 21))


def make_history_archive(
    labels: list[int],
    root,
    side: int = 64,
    renders_per_sign: int = 3,
    seed: int = 0,
) -> list[tuple[float, float, float]]:
    """Write an archive of clean re-renders for a row of physical signs.

    labels[i] is the class of sign i. Each sign gets renders_per_sign past
    frames (distinct nuisance draws, fixed past dates) at a fabricated
    location spaced ~111 m apart so the 25 m radius matching is unambiguous.
    Returns the (lat, lon, heading) per sign for later queries.
    """
    os.makedirs(root, exist_ok=True)
    rows = []
    coords = []
    for i, label in enumerate(labels):
        lat = 40.0 + 0.001 * i
        lon = -74.0
        heading = 90.0
        coords.append((lat, lon, heading))
        for j in range(renders_per_sign):
            if j < len(_ARCHIVE_DATES):
                when = _ARCHIVE_DATES[j]
            else:
                base = _ARCHIVE_DATES[-1]
                when = date(base.year - (j - len(_ARCHIVE_DATES) + 1) * 2, base.month, base.day)
            rng = np.random.default_rng([seed, i, j])
            img = render_sign(label, side, rng)
            rel = f"sign{i:04d}_{when.isoformat()}.png"
            save_image(img, os.path.join(root, rel))
            rows.append(
                {"path": rel, "date": when.isoformat(), "lat": lat, "lon": lon, "heading": heading}
            )
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(rows, fh, indent=1)
    return coords


# ---------------------------------------------------------------------------
# Mask-fidelity probes

PROBE_SHAPES = ("octagon", "inv_triangle", "diamond", "circle")


def render_shape_probe(
    shape: str,
    rng: np.random.Generator,
    min_inradius: float = 24.0,
    max_inradius: float = 40.0,
) -> tuple[RasterImage, np.ndarray]:
    """A single bright convex shape over a non-uniform background.

    Contrast between the shape fill and the brightest background pixel is
    at least 80 gray levels. Returns (image, ground-truth bits).
    """
    if shape not in PROBE_SHAPES:
        raise ValueError(f"unknown probe shape {shape!r}")
    inradius = rng.uniform(min_inradius, max_inradius)
    circum = inradius / _INRADIUS_FRAC[shape]
    side = int(np.ceil(rng.uniform(2.6, 3.4) * circum))
    side = max(side, int(2 * circum) + 16)

    base = rng.uniform(40, 90)
    sx = rng.uniform(-0.2, 0.2)
    sy = rng.uniform(-0.2, 0.2)
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    bg = base + sx * (xx - side / 2) + sy * (yy - side / 2) + rng.uniform(-5, 5, size=(side, side))
    bg_max = float(bg.max())
    fill = rng.uniform(min(bg_max + 80.0, 245.0), 250.0)

    slack = side / 2.0 - circum - 4.0
    cx = side / 2.0 + rng.uniform(-slack, slack)
    cy = side / 2.0 + rng.uniform(-slack, slack)
    theta = np.radians(rng.uniform(-10.0, 10.0))
    dx = (xx + 0.5 - cx) / circum
    dy = (yy + 0.5 - cy) / circum
    px = np.cos(theta) * dx + np.sin(theta) * dy
    py = -np.sin(theta) * dx + np.cos(theta) * dy
    truth = _in_shape(px, py, shape, 1.0)

    canvas = np.repeat(bg[:, :, None], 3, axis=2)
    canvas[truth] = fill
    img = RasterImage(np.clip(np.rint(canvas), 0, 255).astype(np.uint8))
    return img, truth
