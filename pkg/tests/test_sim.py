import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmteam.actuation import ActionPrimitive
from vlmteam.errors import NotACircle, UnknownBinding
from vlmteam.scene import PALETTE, GoalSpec, PixelCoord, Scene, SceneObject, footprint_mask, object_bbox
from vlmteam.sim import (
    TOY_RADIUS,
    TOY_TARGET_ID,
    DeviationClass,
    SimState,
    classify_deviation,
    deviation_class,
    execute_actions,
    gen_toy_env,
    goal_check,
    render,
)


def prim(kind, x, y, target="", **params):
    return ActionPrimitive(kind, PixelCoord(x, y), (float(x), float(y), 0.0), params, target)


def zone_scene(obj, goal_kind="place_in_region"):
    zone = SceneObject("zone", "region", "green", PixelCoord(200, 240), (40.0, 40.0))
    return Scene(640, 480, [zone, obj], GoalSpec(goal_kind, {obj.id: "zone"}))


# ---------------------------------------------------------------- rendering


def test_render_center_pixel_has_object_color(circle_scene):
    img, _ = render(circle_scene)
    assert tuple(img.pixels[240, 320]) == PALETTE["red"]


def test_render_is_deterministic(lid_scene):
    a, da = render(SimState(lid_scene.copy()))
    b, db = render(SimState(lid_scene.copy()))
    assert a.sha256() == b.sha256()
    assert np.array_equal(da.depth, db.depth)


def test_lid_occludes_box_interior(lid_scene):
    img, depth = render(lid_scene)
    lid = lid_scene.get("lid")
    box_mask = footprint_mask(lid_scene.get("box"), 640, 480)
    lid_mask = footprint_mask(lid, 640, 480)
    covered = box_mask & lid_mask
    assert covered.any()
    assert np.all(img.pixels[covered] == PALETTE[lid.color])
    # the lid is the tallest thing there, so depth reads its top surface
    assert np.all(depth.depth[covered] <= depth.depth[240, 100])


def test_open_box_shows_box_color(lid_scene):
    scene = lid_scene.copy()
    scene.objects = [o for o in scene.objects if o.id != "lid"]
    img, _ = render(scene)
    assert tuple(img.pixels[250, 430]) == PALETTE[scene.get("box").color]


# ---------------------------------------------------------------- execution


def test_pick_and_place_moves_center(circle_scene):
    st0 = SimState(circle_scene.copy())
    st1, log = execute_actions(st0, [prim("pick", 320, 240, "ball"), prim("place", 100, 120, "ball")])
    assert all(e.ok for e in log)
    assert st1.scene.get("ball").center == (100, 120)
    assert st1.held is None
    assert st1.step_count == 2
    # the input state is left alone
    assert st0.scene.get("ball").center == (320, 240)


def test_pick_empty_table_is_logged(circle_scene):
    st0 = SimState(circle_scene.copy())
    st1, log = execute_actions(st0, [prim("pick", 20, 20, "ball")])
    assert not log[0].ok and log[0].code == "pick_missed"
    assert st1.scene.objects == st0.scene.objects
    assert st1.held is None


def test_pick_from_closed_box_is_blocked(lid_scene):
    scene = lid_scene.copy()
    # put the banana inside the closed box first
    scene.objects = [
        SceneObject(o.id, o.kind, o.color, PixelCoord(430, 250), o.size, o.rotation, o.height) if o.id == "banana" else o
        for o in scene.objects
    ]
    _, log = execute_actions(SimState(scene), [prim("pick", 430, 250, "banana")])
    assert log[0].code == "blocked_by_lid" and log[0].detail == "box"
    st2, log2 = execute_actions(
        SimState(scene), [prim("pick", 430, 250, "lid"), prim("place", 560, 400, "lid"), prim("pick", 430, 250, "banana")]
    )
    assert [e.ok for e in log2] == [True, True, True]
    assert st2.held == "banana"


def test_place_into_closed_box_is_blocked(lid_scene):
    st1, log = execute_actions(SimState(lid_scene.copy()), [prim("pick", 190, 300, "banana"), prim("place", 430, 250, "box")])
    assert log[0].ok
    assert log[1].code == "blocked_by_lid"
    assert st1.held == "banana"


def test_failures_do_not_stop_execution(circle_scene):
    actions = [prim("pick", 5, 5), prim("pick", 320, 240, "ball"), prim("place", 400, 300, "ball")]
    st1, log = execute_actions(SimState(circle_scene.copy()), actions)
    assert [e.ok for e in log] == [False, True, True]
    assert st1.scene.get("ball").center == (400, 300)


def test_held_object_tracks_gripper(circle_scene):
    st1, _ = execute_actions(SimState(circle_scene.copy()), [prim("pick", 320, 240, "ball"), prim("move_to", 300, 200)])
    assert st1.scene.get("ball").center == (300, 200)


def test_push_translates_object(square_scene):
    push = prim("push", 250, 240, "block", end=[400, 240])
    st1, log = execute_actions(SimState(square_scene.copy()), [push])
    assert log[0].ok
    # contact at x=270, then the block moves the remaining 130 px
    assert st1.scene.get("block").center == (450, 240)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["pick", "place", "push", "move_to", "pen_down", "pen_up"]),
                          st.integers(0, 639), st.integers(0, 479)), max_size=8))
def test_object_count_is_conserved(lid_scene, steps):
    actions = [prim(k, x, y, end=[639 - x, 479 - y]) if k == "push" else prim(k, x, y) for k, x, y in steps]
    st0 = SimState(lid_scene.copy())
    st1, log = execute_actions(st0, actions)
    assert len(st1.scene.objects) == len(st0.scene.objects)
    assert sorted(st1.scene.ids()) == sorted(st0.scene.ids())
    assert len(log) == len(actions) == st1.step_count
    # pure function of (scene, actions)
    st2, log2 = execute_actions(SimState(lid_scene.copy()), actions)
    assert st2.scene.objects == st1.scene.objects
    assert [e.to_dict() for e in log2] == [e.to_dict() for e in log]


# ---------------------------------------------------------------- goals


def test_fully_inside_region_succeeds():
    obj = SceneObject("cube", "rectangle", "red", PixelCoord(200, 240), (10.0, 10.0))
    ok, report = goal_check(SimState(zone_scene(obj)))
    assert ok and report["checks"][0]["fraction"] == 1.0


def test_exactly_half_inside_succeeds():
    # a rotated star sitting on the zone's top edge with exactly half its pixels inside
    star = SceneObject("s", "star", "red", PixelCoord(200, 199), 10.0, 37.0)
    scene = zone_scene(star)
    mask = footprint_mask(star, 640, 480)
    zone = footprint_mask(scene.get("zone"), 640, 480)
    assert 2 * int((mask & zone).sum()) == int(mask.sum())
    ok, report = goal_check(SimState(scene))
    assert ok and report["checks"][0]["fraction"] == 0.5


def test_just_under_half_fails():
    star = SceneObject("s", "star", "red", PixelCoord(200, 198), 10.0, 37.0)
    ok, report = goal_check(SimState(zone_scene(star)))
    assert not ok and report["checks"][0]["fraction"] < 0.5


def test_held_object_is_not_placed():
    obj = SceneObject("cube", "rectangle", "red", PixelCoord(200, 240), (10.0, 10.0))
    ok, _ = goal_check(SimState(zone_scene(obj), held="cube"))
    assert not ok


def test_star_trace_without_pen_fails():
    obj = SceneObject("pad", "rectangle", "white", PixelCoord(320, 240), (60.0, 60.0))
    scene = Scene(640, 480, [obj], GoalSpec("trajectory_trace", {"pad": "star"}, 10.0))
    ok, report = goal_check(SimState(scene))
    assert not ok
    assert report["checks"][0]["hausdorff"] is None


def test_ordering_goal():
    a = SceneObject("a", "circle", "red", PixelCoord(100, 240), 20.0)
    b = SceneObject("b", "circle", "blue", PixelCoord(300, 240), 20.0)
    scene = Scene(640, 480, [a, b], GoalSpec("ordering", {"a": "b"}))
    assert goal_check(SimState(scene))[0]
    assert not goal_check(SimState(scene), GoalSpec("ordering", {"b": "a"}))[0]


def test_unknown_binding():
    obj = SceneObject("cube", "rectangle", "red", PixelCoord(200, 240), (10.0, 10.0))
    with pytest.raises(UnknownBinding):
        goal_check(SimState(zone_scene(obj)), GoalSpec("place_in_region", {"ghost": "zone"}))


# ---------------------------------------------------------------- deviation


@pytest.mark.parametrize(
    "d,expected",
    [
        (49, DeviationClass.ACTIONABLE),
        (0, DeviationClass.ACTIONABLE),
        (50, DeviationClass.CLOSE_WITHIN_3R),
        (150, DeviationClass.CLOSE_WITHIN_3R),
        (151, DeviationClass.CLOSE_WITHIN_4R),
        (200, DeviationClass.CLOSE_WITHIN_4R),
        (201, DeviationClass.FAR),
    ],
)
def test_deviation_examples(circle_scene, d, expected):
    ball = circle_scene.get("ball")
    assert classify_deviation((320 + d, 240), ball) is expected


def test_deviation_needs_a_circle(square_scene):
    with pytest.raises(NotACircle):
        classify_deviation((0, 0), square_scene.get("block"))


@given(st.floats(0, 1000, allow_nan=False), st.floats(0.5, 200, allow_nan=False))
def test_deviation_classes_nest(d, r):
    c = deviation_class(d, r)
    if c.within(1):
        assert c.within(3)
    if c.within(3):
        assert c.within(4)
    assert c.within(1) == (d < r)
    assert c.within(3) == (d <= 3 * r)
    assert c.within(4) == (d <= 4 * r)


# ---------------------------------------------------------------- toy environment


def test_toy_env_is_deterministic():
    assert gen_toy_env(1) == gen_toy_env(1)
    assert gen_toy_env(1) != gen_toy_env(2)


def test_toy_env_has_one_target_circle():
    for seed in range(20):
        scene = gen_toy_env(seed)
        circles = [o for o in scene.objects if o.kind == "circle"]
        assert [o.id for o in circles] == [TOY_TARGET_ID]
        assert circles[0].half_extents == (TOY_RADIUS, TOY_RADIUS)
        assert 4 <= len(scene.objects) - 1 <= 8


def test_toy_env_has_no_overlaps():
    # frozen expectation: zero intersecting pairs over 100 seeds, by a pairwise footprint scan
    overlaps = 0
    for seed in range(100):
        scene = gen_toy_env(seed)
        masks = [footprint_mask(o, scene.width, scene.height) for o in scene.objects]
        for i in range(len(masks)):
            for j in range(i + 1, len(masks)):
                overlaps += int((masks[i] & masks[j]).any())
        boxes = [object_bbox(scene, o.id) for o in scene.objects]
        assert all(b.x0 >= 0 and b.y0 >= 0 and b.x1 < scene.width and b.y1 < scene.height for b in boxes)
    assert overlaps == 0


def test_toy_target_radius_is_exact():
    scene = gen_toy_env(7)
    mask = footprint_mask(scene.get(TOY_TARGET_ID), scene.width, scene.height)
    ys, xs = np.nonzero(mask)
    assert (xs.max() - xs.min()) == 2 * TOY_RADIUS
    assert math.isclose(mask.sum(), math.pi * TOY_RADIUS**2, rel_tol=0.01)
