import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import box_iou, contraction_errors
from vlmteam import OracleConfig, ScriptedOracle, data_path, load_scene
from vlmteam.agents import Agent
from vlmteam.backends.base import BackendReply
from vlmteam.errors import GroundingExhausted, PointOutsideBox
from vlmteam.grounder import (
    GroundingConfig,
    GroundingTeam,
    PivotConfig,
    Verdict,
    box_view,
    checker_verdict,
    ground_all,
    ground_target,
    pivot_ground,
    select_action_point,
)
from vlmteam.payloads import render_reply
from vlmteam.planner import Plan, Subgoal, Target, TargetList
from vlmteam.scene import BoundingBox, GoalSpec, PixelCoord, Scene, SceneObject, object_bbox
from vlmteam.sim import render

PICK_BLOCK = Plan([Subgoal(0, "pick", "block")], approved=True)


class ByIntent:
    """Backend answering from per-intent reply queues."""

    def __init__(self, **queues):
        self.queues = {k: list(v) for k, v in queues.items()}

    def chat(self, req):
        return BackendReply(self.queues[req.intent].pop(0))


def _ground(scene, oracle, target="block", plan=PICK_BLOCK, cfg=None):
    env, _ = render(scene)
    cfg = cfg or GroundingConfig()
    team = GroundingTeam.for_target(oracle, target, cfg)
    return ground_target(target, "object_box", env, plan, team, cfg)


def _err(box, truth):
    (ax, ay), (bx, by) = box.center, truth.center
    return math.hypot(ax - bx, ay - by)


def test_convergence_from_140px(square_scene):
    oracle = ScriptedOracle(OracleConfig(square_scene, init_offset_px=140, init_angle_deg=45,
                                         init_size_error=0, contraction=0.5, iou_accept=0.75))
    box, ap, state = _ground(square_scene, oracle)
    truth = object_bbox(square_scene, "block")
    errors = [_err(b, truth) for b, _ in state.history]
    expected = contraction_errors(140, 0.5, 5)
    assert len(errors) == 5
    assert all(abs(a - b) <= 0.5 for a, b in zip(errors, expected))
    assert [v for _, v in state.history][-1] is Verdict.ACCEPT
    assert state.mover_calls == 4 and state.approved
    ious = [box_iou(b.as_list(), truth.as_list()) for b, _ in state.history]
    assert ious == sorted(ious)
    assert ious[-2] < 0.75 <= ious[-1]
    assert box.contains(ap.point, strict=True)


def test_already_perfect_accepts_immediately(square_scene):
    oracle = ScriptedOracle(OracleConfig(square_scene, init_offset_px=0, init_size_error=0))
    box, _, state = _ground(square_scene, oracle)
    assert state.iteration == 1 and state.mover_calls == 0
    assert box == object_bbox(square_scene, "block")


def test_wrong_init_rejected_then_recovers(square_scene):
    scene = square_scene.copy()
    scene.objects.append(SceneObject("decoy", "circle", "blue", PixelCoord(520, 120), 30.0))
    oracle = ScriptedOracle(OracleConfig(scene, forced_wrong_init={"block": 1}))
    _, _, state = _ground(scene, oracle)
    assert state.history[0][1] is Verdict.REJECT
    assert state.history[0][0].iou(object_bbox(scene, "decoy")) > 0
    assert box_iou(state.history[0][0].as_list(), object_bbox(scene, "block").as_list()) == 0
    assert state.reinits == 1 and state.approved


def test_repeated_rejects_exhaust(square_scene):
    oracle = ScriptedOracle(OracleConfig(square_scene, forced_rejects={"block": 3}))
    with pytest.raises(GroundingExhausted) as info:
        _ground(square_scene, oracle)
    assert info.value.state.reinits == 3 and not info.value.state.approved


def test_checker_verdict_fixtures(circle_scene):
    oracle = ScriptedOracle(OracleConfig(circle_scene))
    env, _ = render(circle_scene)
    truth = object_bbox(circle_scene, "ball")
    for box, want in [
        (truth, Verdict.ACCEPT),
        (truth.shifted(45, 20), Verdict.REVISION_NEEDED),
        (BoundingBox(30, 30, 90, 90), Verdict.REJECT),
    ]:
        assert checker_verdict(box_view(env, box), box, "ball", oracle) is want


def test_grasp_point_is_box_center(circle_scene):
    oracle = ScriptedOracle(OracleConfig(circle_scene))
    truth = object_bbox(circle_scene, "ball")
    ap = select_action_point(truth, "grasp", "pick ball", oracle, "ball")
    assert ap.point == (320, 240) and ap.purpose == "grasp"


def test_grasp_outside_then_inside_retries_once():
    box = BoundingBox(100, 100, 200, 200)
    be = ByIntent(action_point=[render_reply("point", {"point": [300, 300]}),
                                render_reply("point", {"point": [150, 150]})])
    ap = select_action_point(box, "grasp", "pick x", be, "x")
    assert ap.retries == 1 and ap.point == (150, 150)
    be = ByIntent(action_point=[render_reply("point", {"point": [100, 150]})] * 2)
    with pytest.raises(PointOutsideBox):
        select_action_point(box, "grasp", "pick x", be, "x")


def test_push_start_left_of_apple():
    scene = load_scene(data_path("push_apple.json"))
    oracle = ScriptedOracle(OracleConfig(scene))
    apple = object_bbox(scene, "apple")
    ap = select_action_point(apple, "push_start", "push apple -> goal area", oracle, "apple")
    assert ap.point.x < apple.x0 and apple.y0 <= ap.point.y <= apple.y1


def test_identical_mover_proposal_gets_nudged():
    scene = Scene(640, 480, [], GoalSpec("place_in_region"))
    env, _ = render(scene)
    same = render_reply("bbox", {"bbox": [100, 100, 200, 200]})
    be = ByIntent(
        init_box=[same],
        check_box=["Revision Needed", "Accept"],
        move_box=[same, same],
        action_point=[render_reply("point", {"point": [150, 150]})],
    )
    cfg = GroundingConfig()
    team = GroundingTeam.for_target(be, "thing", cfg)
    box, _, state = ground_target("thing", "object_box", env, PICK_BLOCK, team, cfg, purpose="grasp")
    assert state.mover_calls == 2
    assert box == BoundingBox(98, 98, 202, 202)
    assert state.history[1][0] != state.history[0][0]


def test_budget_respected_when_never_accepted():
    env, _ = render(Scene(640, 480, [], GoalSpec("place_in_region")))
    moves = [render_reply("bbox", {"bbox": [100 + i, 100, 200 + i, 200]}) for i in range(1, 20)]
    be = ByIntent(init_box=[render_reply("bbox", {"bbox": [100, 100, 200, 200]})],
                  check_box=["Revision Needed"] * 20, move_box=moves)
    cfg = GroundingConfig(max_iters=4)
    team = GroundingTeam.for_target(be, "thing", cfg)
    with pytest.raises(GroundingExhausted) as info:
        ground_target("thing", "object_box", env, PICK_BLOCK, team, cfg, purpose="grasp")
    st_ = info.value.state
    assert st_.checker_calls <= 4 and st_.mover_calls <= 4


def test_point_mode_converges(lid_scene):
    oracle = ScriptedOracle(OracleConfig(lid_scene, init_offset_px=60))
    env, _ = render(lid_scene)
    plan = Plan([Subgoal(0, "place", "banana", "box opening")], approved=True)
    team = GroundingTeam.for_target(oracle, "box opening", GroundingConfig())
    point, ap, state = ground_target("box opening", "area_point", env, plan, team)
    assert state.approved and ap.purpose == "place"
    assert object_bbox(lid_scene, "box").contains(point)


def test_self_check_path_without_checker(square_scene):
    oracle = ScriptedOracle(OracleConfig(square_scene, init_offset_px=60))
    cfg = GroundingConfig(use_checker=False)
    box, _, state = _ground(square_scene, oracle, cfg=cfg)
    assert state.approved_by == "self_check" and state.checker_calls == 0
    assert box.iou(object_bbox(square_scene, "block")) >= 0.5


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_coordinates_stay_in_frame(lid_scene, seed):
    oracle = ScriptedOracle(OracleConfig(lid_scene, init_offset_sigma=200, verdict_noise=0.1, seed=seed))
    env, _ = render(lid_scene)
    plan = Plan([Subgoal(0, "pick", "banana"), Subgoal(1, "place", "banana", "box opening")], approved=True)
    targets = TargetList([Target("banana", "object_box"), Target("box opening", "area_point")])
    for out in ground_all(targets, env, plan, oracle, seed=seed):
        geoms = [g for g, _ in out.state.history] if out.state else []
        for g in geoms:
            pts = [(g.x0, g.y0), (g.x1, g.y1)] if isinstance(g, BoundingBox) else [g]
            assert all(0 <= x < env.width and 0 <= y < env.height for x, y in pts)


def test_concurrent_matches_sequential(lid_scene):
    env, _ = render(lid_scene)
    plan = Plan([Subgoal(0, "remove_lid", "lid", "free table area"), Subgoal(1, "pick", "banana"),
                 Subgoal(2, "place", "banana", "box opening")], approved=True)
    targets = TargetList([Target(n, m) for n, m in [("lid", "object_box"), ("free table area", "area_point"),
                                                     ("banana", "object_box"), ("box opening", "area_point")]])

    def run(fanout):
        oracle = ScriptedOracle(OracleConfig(lid_scene, init_offset_sigma=30, verdict_noise=0.1, seed=3))
        outs = ground_all(targets, env, plan, oracle, GroundingConfig(fanout=fanout), seed=3)
        return [(o.target, o.state.to_dict(), o.action_point.to_dict()) for o in outs]

    assert run(4) == run(1)


# --------------------------------------------------------------------------
# sample-and-select baseline


def test_pivot_counts_and_improvement(circle_scene):
    oracle = ScriptedOracle(OracleConfig(circle_scene, seed=7))
    env, _ = render(circle_scene)
    res = pivot_ground("ball", env, oracle, PivotConfig(seed=7))
    assert len(res.images) == 9 and res.rounds == 9 and res.calls == 10
    truth = (320, 240)
    first = res.samples[0][0]
    initial = float(sum(math.hypot(x - truth[0], y - truth[1]) for x, y in first) / len(first))
    assert math.hypot(res.point[0] - truth[0], res.point[1] - truth[1]) <= initial


def test_pivot_single_choice_collapses_radius(circle_scene):
    env, _ = render(circle_scene)
    pick_first = render_reply("selection", {"selected": [0]})
    be = ByIntent(pivot_select=[pick_first] * 6, pivot_final=[pick_first])
    res = pivot_ground("ball", env, be, PivotConfig(iterations=3, parallel_runs=2, min_radius=10))
    assert all(r == 10 for radii in res.radii for r in radii)
    assert res.point == res.winners[0]
    last = res.samples[0][-1][0]
    assert res.winners[0] == (int(last[0]), int(last[1]))


def test_pivot_config_validation():
    from vlmteam.errors import ValidationError
    with pytest.raises(ValidationError):
        PivotConfig(samples_per_iter=1)
