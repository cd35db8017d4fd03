"""Annotation and zoom-frame utilities.

All functions are pure: they return new images and never touch the input
buffer.  Resampling is nearest-neighbour so that crops are bit-exact across
platforms, and a ``ZoomFrame`` carries the exact rational scale needed to map
crop pixels back to the original image.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import EmptyIntersection, OutOfBounds
from .scene import BoundingBox, PixelCoord, RasterImage

MIN_CROP_EDGE = 320
DEFAULT_MARGIN = 0.5
TICK_LEN = 6
FONT_SCALE = 2

ANNOTATION_COLORS: dict[str, tuple[int, int, int]] = {
    "tick": (0, 0, 0),
    "bbox": (255, 0, 0),
    "point": (0, 90, 255),
    "label": (255, 255, 255),
    "window": (255, 200, 0),
}

# 3x5 bitmap glyphs, one string per row.
_GLYPHS = {
    "0": ("111", "101", "101", "101", "111"),
    "1": ("010", "110", "010", "010", "111"),
    "2": ("111", "001", "111", "100", "111"),
    "3": ("111", "001", "111", "001", "111"),
    "4": ("101", "101", "111", "001", "001"),
    "5": ("111", "100", "111", "001", "111"),
    "6": ("111", "100", "111", "101", "111"),
    "7": ("111", "001", "001", "001", "001"),
    "8": ("111", "101", "111", "101", "111"),
    "9": ("111", "101", "111", "001", "111"),
    "-": ("000", "000", "111", "000", "000"),
}
_GLYPH_MASKS = {
    ch: np.array([[c == "1" for c in row] for row in rows], dtype=bool) for ch, rows in _GLYPHS.items()
}


@dataclass(frozen=True)
class ZoomFrame:
    source_box: BoundingBox  # inclusive pixel range of the crop in the original image
    scale: Fraction
    crop: RasterImage

    @property
    def origin(self) -> PixelCoord:
        return self.source_box.min

    def to_zoom(self, p) -> PixelCoord:
        """Original-image pixel -> first crop pixel that samples it."""
        qx = math.ceil((p[0] - self.source_box.x0) * self.scale)
        qy = math.ceil((p[1] - self.source_box.y0) * self.scale)
        return PixelCoord(min(max(qx, 0), self.crop.width - 1), min(max(qy, 0), self.crop.height - 1))

    def from_zoom(self, q) -> PixelCoord:
        """Crop pixel -> original-image pixel it was sampled from."""
        return PixelCoord(
            self.source_box.x0 + math.floor(Fraction(q[0]) / self.scale),
            self.source_box.y0 + math.floor(Fraction(q[1]) / self.scale),
        )

    def box_to_zoom(self, box: BoundingBox) -> BoundingBox:
        a = self.to_zoom(box.min)
        b = self.to_zoom(box.max)
        return BoundingBox(a.x, a.y, max(b.x, a.x + 1), max(b.y, a.y + 1))


@dataclass(frozen=True)
class Annotation:
    kind: str  # tick_grid | bbox | point | labeled_point
    geometry: tuple
    label: str = ""
    color: tuple[int, int, int] | None = None
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# low level painting


def _fill_rect(px: np.ndarray, x0: int, y0: int, x1: int, y1: int, color) -> None:
    h, w = px.shape[:2]
    x0, y0 = max(x0, 0), max(y0, 0)
    x1, y1 = min(x1, w - 1), min(y1, h - 1)
    if x0 <= x1 and y0 <= y1:
        px[y0 : y1 + 1, x0 : x1 + 1] = color


def _draw_text(px: np.ndarray, text: str, x: int, y: int, color, scale: int = FONT_SCALE) -> None:
    h, w = px.shape[:2]
    for i, ch in enumerate(text):
        glyph = _GLYPH_MASKS.get(ch)
        if glyph is None:
            continue
        big = np.kron(glyph, np.ones((scale, scale), dtype=bool))
        gx = x + i * 4 * scale
        gh, gw = big.shape
        sx0, sy0 = max(gx, 0), max(y, 0)
        sx1, sy1 = min(gx + gw, w), min(y + gh, h)
        if sx0 >= sx1 or sy0 >= sy1:
            continue
        sub = big[sy0 - y : sy1 - y, sx0 - gx : sx1 - gx]
        region = px[sy0:sy1, sx0:sx1]
        region[sub] = color


def text_width(text: str, scale: int = FONT_SCALE) -> int:
    return len(text) * 4 * scale - scale


def _draw_disk(px: np.ndarray, cx: int, cy: int, r: int, color) -> None:
    h, w = px.shape[:2]
    y0, y1 = max(cy - r, 0), min(cy + r, h - 1)
    x0, x1 = max(cx - r, 0), min(cx + r, w - 1)
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    mask = (xs - cx) ** 2 + (ys - cy) ** 2 <= r * r
    px[y0 : y1 + 1, x0 : x1 + 1][mask] = color


def _draw_box(px: np.ndarray, box: BoundingBox, color, thickness: int = 2) -> None:
    t = thickness - 1
    _fill_rect(px, box.x0, box.y0, box.x1, box.y0 + t, color)
    _fill_rect(px, box.x0, box.y1 - t, box.x1, box.y1, color)
    _fill_rect(px, box.x0, box.y0, box.x0 + t, box.y1, color)
    _fill_rect(px, box.x1 - t, box.y0, box.x1, box.y1, color)


# --------------------------------------------------------------------------
# public operations


def tick_positions(length: int, spacing: int) -> list[int]:
    return list(range(0, length, spacing))


def overlay_ticks(img: RasterImage, spacing: int, frame: ZoomFrame | None = None) -> RasterImage:
    """Tick marks and numeric labels every ``spacing`` pixels along the top and left edges.

    When ``frame`` is given, ``img`` is that frame's crop and labels carry the
    original-image coordinates.
    """
    if spacing < 10:
        raise ValueError("tick spacing must be >= 10 px")
    px = img.pixels.copy()
    color = ANNOTATION_COLORS["tick"]
    if frame is None:
        xs = [(v, v) for v in tick_positions(img.width, spacing)]
        ys = [(v, v) for v in tick_positions(img.height, spacing)]
    else:
        sb = frame.source_box
        first_x = -(-sb.x0 // spacing) * spacing
        first_y = -(-sb.y0 // spacing) * spacing
        xs = [(frame.to_zoom((v, sb.y0)).x, v) for v in range(first_x, sb.x1 + 1, spacing)]
        ys = [(frame.to_zoom((sb.x0, v)).y, v) for v in range(first_y, sb.y1 + 1, spacing)]
    for pos, value in xs:
        _fill_rect(px, pos, 0, pos, TICK_LEN - 1, color)
        _draw_text(px, str(value), pos + 2, TICK_LEN, color)
    for pos, value in ys:
        _fill_rect(px, 0, pos, TICK_LEN - 1, pos, color)
        _draw_text(px, str(value), TICK_LEN + 1, pos + 2, color)
    return RasterImage(px)


def expand_box(box: BoundingBox, margin_frac: float, width: int, height: int) -> BoundingBox:
    mx = int(round(margin_frac * box.width))
    my = int(round(margin_frac * box.height))
    x0, y0 = max(box.x0 - mx, 0), max(box.y0 - my, 0)
    x1, y1 = min(box.x1 + mx, width - 1), min(box.y1 + my, height - 1)
    if x0 >= x1 or y0 >= y1:
        raise EmptyIntersection(f"box {box.as_list()} does not intersect {width}x{height} image")
    return BoundingBox(x0, y0, x1, y1)


def frame_geometry(
    box: BoundingBox, margin_frac: float, width: int, height: int, min_edge: int = MIN_CROP_EDGE
) -> tuple[BoundingBox, Fraction]:
    """Source box and exact zoom factor of a crop, without touching pixels."""
    if not 0 <= margin_frac <= 2:
        raise ValueError("margin_frac must lie in [0, 2]")
    if box.x1 < 0 or box.y1 < 0 or box.x0 > width - 1 or box.y0 > height - 1:
        raise EmptyIntersection(f"box {box.as_list()} does not intersect {width}x{height} image")
    src = expand_box(box, margin_frac, width, height)
    # source_box is an inclusive pixel range
    short = min(src.width + 1, src.height + 1)
    return src, (Fraction(min_edge, short) if short < min_edge else Fraction(1))


def crop_with_margin(
    img: RasterImage, box: BoundingBox, margin_frac: float = DEFAULT_MARGIN, min_edge: int = MIN_CROP_EDGE
) -> ZoomFrame:
    src, scale = frame_geometry(box, margin_frac, img.width, img.height, min_edge)
    out_w = math.floor((src.width + 1) * scale)
    out_h = math.floor((src.height + 1) * scale)
    # floor(q / scale) in exact integer arithmetic
    cols = src.x0 + (np.arange(out_w) * scale.denominator) // scale.numerator
    rows = src.y0 + (np.arange(out_h) * scale.denominator) // scale.numerator
    crop = img.pixels[rows[:, None], cols[None, :]]
    return ZoomFrame(src, scale, RasterImage(np.ascontiguousarray(crop)))


def draw_annotations(img: RasterImage, items: Sequence[Annotation]) -> RasterImage:
    px = img.pixels.copy()
    w, h = img.width, img.height
    for item in items:
        color = item.color or ANNOTATION_COLORS.get(item.kind, ANNOTATION_COLORS["point"])
        if item.kind == "bbox":
            box = item.geometry if isinstance(item.geometry, BoundingBox) else BoundingBox(*item.geometry)
            if box.x0 < 0 or box.y0 < 0 or box.x1 >= w or box.y1 >= h:
                raise OutOfBounds(f"bbox {box.as_list()} outside {w}x{h}")
            _draw_box(px, box, color)
            if item.label:
                _draw_text(px, item.label, box.x0 + 3, box.y0 + 3, color)
        elif item.kind in ("point", "labeled_point"):
            x, y = item.geometry
            if not (0 <= x < w and 0 <= y < h):
                raise OutOfBounds(f"point {(x, y)} outside {w}x{h}")
            radius = int(item.extra.get("radius", 4 if item.kind == "point" else 9))
            _draw_disk(px, int(x), int(y), radius, color)
            if item.kind == "labeled_point":
                tw = text_width(item.label)
                _draw_text(px, item.label, int(x) - tw // 2, int(y) - 5, ANNOTATION_COLORS["label"])
        elif item.kind == "tick_grid":
            (spacing,) = item.geometry
            px = overlay_ticks(RasterImage(px), int(spacing)).pixels.copy()
        else:
            raise ValueError(f"unknown annotation kind {item.kind!r}")
    return RasterImage(px)


def point_window(img: RasterImage, point, size: int = 200) -> BoundingBox:
    """Fixed-size window centred on ``point``, shifted to stay inside the image."""
    half = size // 2
    x0 = min(max(int(point[0]) - half, 0), max(img.width - 1 - size, 0))
    y0 = min(max(int(point[1]) - half, 0), max(img.height - 1 - size, 0))
    return BoundingBox(x0, y0, min(x0 + size, img.width - 1), min(y0 + size, img.height - 1))
