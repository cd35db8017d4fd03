from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmteam.errors import EmptyIntersection, OutOfBounds
from vlmteam.imaging import (
    ANNOTATION_COLORS,
    MIN_CROP_EDGE,
    Annotation,
    crop_with_margin,
    ZoomFrame,
    draw_annotations,
    frame_geometry,
    overlay_ticks,
    tick_positions,
)
from vlmteam.scene import BoundingBox, RasterImage
from vlmteam.sim import gen_toy_env, render

# generated once by overlay_ticks on the seed-3 toy environment and frozen
GOLDEN_TICKS_SHA256 = "789f5fe2890ae02d17eb40e998939ccc322455d1fa94559251097b7a0f9d930a"


def _noise(w=640, h=480, seed=0):
    rng = np.random.default_rng(seed)
    return RasterImage(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def test_tick_label_positions():
    assert tick_positions(640, 50) == list(range(0, 601, 50))
    assert tick_positions(640, 640) == [0]


def test_ticks_golden_and_pure():
    img, _ = render(gen_toy_env(3))
    before = img.sha256()
    out = overlay_ticks(img, 50)
    assert out.sha256() == GOLDEN_TICKS_SHA256
    assert img.sha256() == before
    with pytest.raises(ValueError):
        overlay_ticks(img, 5)


def test_crop_identity_on_full_image():
    img = _noise(400, 330)
    f = crop_with_margin(img, BoundingBox(0, 0, 399, 329), 0.0)
    assert f.scale == 1
    assert f.crop.sha256() == img.sha256()


def test_crop_margin_arithmetic_and_clamp():
    img = _noise()
    f = crop_with_margin(img, BoundingBox(270, 190, 370, 290), 0.5)
    assert f.source_box.as_list() == [220, 140, 420, 340]
    left = crop_with_margin(img, BoundingBox(-30, 100, 40, 160), 0.5)
    assert left.source_box.x0 == 0
    with pytest.raises(EmptyIntersection):
        crop_with_margin(img, BoundingBox(700, 10, 760, 50), 0.5)


def test_crop_dimensions_follow_scale():
    img = _noise()
    f = crop_with_margin(img, BoundingBox(100, 100, 140, 180), 0.25)
    w, h = f.source_box.width + 1, f.source_box.height + 1
    assert min(f.crop.width, f.crop.height) >= MIN_CROP_EDGE - 1
    assert f.crop.width == int(w * f.scale) and f.crop.height == int(h * f.scale)
    assert isinstance(f.scale, Fraction)


@settings(max_examples=300, deadline=None)
@given(
    x0=st.integers(0, 600), y0=st.integers(0, 440), w=st.integers(1, 200), h=st.integers(1, 200),
    margin=st.floats(0, 2), u=st.floats(0, 1), v=st.floats(0, 1),
)
def test_zoom_round_trip_property(x0, y0, w, h, margin, u, v):
    src, scale = frame_geometry(BoundingBox(x0, y0, min(x0 + w, 639), min(y0 + h, 479)), margin, 640, 480)
    crop = RasterImage(np.zeros((int((src.height + 1) * scale), int((src.width + 1) * scale), 3), dtype=np.uint8))
    f = ZoomFrame(src, scale, crop)
    sb = f.source_box
    p = (sb.x0 + round(u * sb.width), sb.y0 + round(v * sb.height))
    back = f.from_zoom(f.to_zoom(p))
    assert abs(back[0] - p[0]) <= 1 and abs(back[1] - p[1]) <= 1


def test_frame_geometry_matches_crop():
    img = _noise()
    for box in [BoundingBox(5, 5, 20, 30), BoundingBox(300, 100, 500, 450)]:
        f = crop_with_margin(img, box, 0.3)
        assert (f.source_box, f.scale) == frame_geometry(box, 0.3, 640, 480)


def test_crop_samples_the_right_pixels():
    img = _noise(seed=4)
    f = crop_with_margin(img, BoundingBox(300, 200, 330, 220), 0.5)
    for q in [(0, 0), (17, 40), (f.crop.width - 1, f.crop.height - 1)]:
        src = f.from_zoom(q)
        assert (f.crop.pixels[q[1], q[0]] == img.pixels[src[1], src[0]]).all()


def test_draw_bbox_edges():
    img = RasterImage(np.zeros((100, 100, 3), dtype=np.uint8))
    out = draw_annotations(img, [Annotation("bbox", (10, 20, 60, 70))])
    c = np.array(ANNOTATION_COLORS["bbox"], dtype=np.uint8)
    for x, y in [(10, 40), (11, 40), (60, 40), (59, 40), (30, 20), (30, 21), (30, 70), (30, 69)]:
        assert (out.pixels[y, x] == c).all()
    assert not (out.pixels[45, 35] == c).all()


def test_draw_labeled_points_and_identity():
    img = RasterImage(np.zeros((200, 300, 3), dtype=np.uint8))
    pts = [Annotation("labeled_point", (25 + 28 * i, 100), str(i)) for i in range(10)]
    out = draw_annotations(img, pts)
    c = np.array(ANNOTATION_COLORS["point"], dtype=np.uint8)
    for i in range(10):
        # disk ring just outside the glyph
        assert (out.pixels[100 + 8, 25 + 28 * i] == c).all()
    assert draw_annotations(img, []).sha256() == img.sha256()
    with pytest.raises(OutOfBounds):
        draw_annotations(img, [Annotation("point", (300, 10))])


def test_annotations_drawn_in_order():
    img = RasterImage(np.zeros((50, 50, 3), dtype=np.uint8))
    a = Annotation("point", (25, 25), color=(255, 0, 0))
    b = Annotation("point", (25, 25), color=(0, 0, 255))
    assert tuple(draw_annotations(img, [a, b]).pixels[25, 25]) == (0, 0, 255)
    assert tuple(draw_annotations(img, [b, a]).pixels[25, 25]) == (255, 0, 0)


def test_zoomed_ticks_use_original_coordinates():
    img = _noise()
    f = crop_with_margin(img, BoundingBox(270, 190, 370, 290), 0.5)
    out = overlay_ticks(f.crop, 50, f)
    # the tick for x=250 sits at the crop column that samples original column 250
    col = f.to_zoom((250, f.source_box.y0)).x
    assert (out.pixels[0, col] == np.array(ANNOTATION_COLORS["tick"], dtype=np.uint8)).all()
