"""Deterministic 2D tabletop simulator.

Objects are flat shapes on a grey mat.  The simulator paints them, executes
compiled primitives kinematically (no friction, no collisions), and checks
goals against ground-truth footprints.  It also generates the toy scenes and
labeled box fixtures used to study the checker's verdicts.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import directed_hausdorff

from .actuation import ActionPrimitive, spiral_waypoints, star_waypoints
from .errors import NotACircle, PlacementFailure, UnknownBinding
from .scene import (
    CAMERA_HEIGHT_MM,
    MAT_COLOR,
    PALETTE,
    BoundingBox,
    DepthMap,
    GoalSpec,
    PixelCoord,
    RasterImage,
    Scene,
    SceneObject,
    footprint,
    footprint_mask,
    object_bbox,
)

PICKABLE_KINDS = ("circle", "rectangle", "star", "polygon")
CONTAINMENT_FRACTION = 0.5
TOY_RADIUS = 50
TOY_TARGET_ID = "target"
PLACEMENT_ATTEMPTS = 1000
FIXTURE_CLASSES = ("Perfect", "Slightly Off", "Completely Off - Around", "Completely Off - Wrong Object")
EXPECTED_VERDICT = {
    "Perfect": "Accept",
    "Slightly Off": "Revision Needed",
    "Completely Off - Around": "Reject",
    "Completely Off - Wrong Object": "Reject",
}


@dataclass
class SimState:
    scene: Scene
    held: str | None = None
    pen_down: bool = False
    trace: list[PixelCoord] = field(default_factory=list)
    step_count: int = 0
    gripper: PixelCoord | None = None

    def copy(self) -> "SimState":
        return SimState(self.scene.copy(), self.held, self.pen_down, list(self.trace), self.step_count, self.gripper)


@dataclass
class ActionEvent:
    step: int
    kind: str
    target: str
    pixel: tuple[int, int]
    ok: bool
    code: str = "ok"
    detail: str = ""

    def to_dict(self) -> dict:
        return {
            "step": self.step,
            "kind": self.kind,
            "target": self.target,
            "pixel": list(self.pixel),
            "ok": self.ok,
            "code": self.code,
            "detail": self.detail,
        }


# --------------------------------------------------------------------------
# rendering


def paint_order(scene: Scene) -> list[SceneObject]:
    """Regions, then containers, then loose objects, then lids."""
    rank = {"region": 0, "container": 1}

    def key(item):
        i, o = item
        r = 3 if o.lid_of is not None else rank.get(o.kind, 2)
        return (r, i)

    return [o for _, o in sorted(enumerate(scene.objects), key=key)]


def render(state: SimState | Scene) -> tuple[RasterImage, DepthMap]:
    scene = state.scene if isinstance(state, SimState) else state
    px = np.empty((scene.height, scene.width, 3), dtype=np.uint8)
    px[:] = MAT_COLOR
    depth = np.full((scene.height, scene.width), CAMERA_HEIGHT_MM)
    for obj in paint_order(scene):
        x0, y0, mask = footprint(obj)
        h, w = mask.shape
        sx0, sy0 = max(x0, 0), max(y0, 0)
        sx1, sy1 = min(x0 + w, scene.width), min(y0 + h, scene.height)
        if sx0 >= sx1 or sy0 >= sy1:
            continue
        sub = mask[sy0 - y0 : sy1 - y0, sx0 - x0 : sx1 - x0]
        px[sy0:sy1, sx0:sx1][sub] = PALETTE[obj.color]
        region = depth[sy0:sy1, sx0:sx1]
        region[sub] = np.minimum(region[sub], CAMERA_HEIGHT_MM - obj.height)
    return RasterImage(px), DepthMap(depth)


# --------------------------------------------------------------------------
# execution


def _contains(obj: SceneObject, p, fp=None) -> bool:
    x0, y0, mask = fp if fp is not None else footprint(obj)
    u, v = int(p[0]) - x0, int(p[1]) - y0
    return 0 <= v < mask.shape[0] and 0 <= u < mask.shape[1] and bool(mask[v, u])


def _inside(obj: SceneObject, container: SceneObject) -> bool:
    return obj.id != container.id and _contains(container, obj.center)


def _blocking_lid(scene: Scene, obj: SceneObject) -> SceneObject | None:
    """Closed container that currently encloses ``obj``, if any."""
    for c in scene.objects:
        if c.kind == "container" and c.has_lid and _inside(obj, c):
            return c
    return None


def _movable(scene: Scene, exclude: str | None = None) -> list[SceneObject]:
    return [o for o in reversed(paint_order(scene)) if o.kind in PICKABLE_KINDS and o.id != exclude]


def _move_object(scene: Scene, obj_id: str, center) -> None:
    c = PixelCoord(int(round(center[0])), int(round(center[1])))
    scene.objects = [replace(o, center=c) if o.id == obj_id else o for o in scene.objects]


def _set(scene: Scene, obj_id: str, **changes) -> None:
    scene.objects = [replace(o, **changes) if o.id == obj_id else o for o in scene.objects]


def _do_pick(state: SimState, prim: ActionPrimitive) -> tuple[bool, str, str]:
    scene = state.scene
    if state.held is not None:
        return False, "already_holding", state.held
    hits = [o for o in _movable(scene) if _contains(o, prim.pixel)]
    if not hits:
        return False, "pick_missed", ""
    named = [o for o in hits if o.id == prim.target]
    obj = named[0] if named else hits[0]
    if obj.lid_of is None:
        container = _blocking_lid(scene, obj)
        if container is not None:
            return False, "blocked_by_lid", container.id
    state.held = obj.id
    if obj.lid_of is not None:
        _set(scene, obj.lid_of, has_lid=False)
    return True, "ok", obj.id


def _do_place(state: SimState, prim: ActionPrimitive) -> tuple[bool, str, str]:
    scene = state.scene
    if state.held is None:
        return False, "nothing_held", ""
    for c in reversed(paint_order(scene)):
        if c.kind == "container" and c.has_lid and _contains(c, prim.pixel):
            return False, "blocked_by_lid", c.id
    held = state.held
    _move_object(scene, held, prim.pixel)
    state.held = None
    return True, "ok", held


def _segment(a, b) -> np.ndarray:
    n = max(int(math.ceil(math.hypot(b[0] - a[0], b[1] - a[1]))), 1)
    t = np.linspace(0.0, 1.0, n + 1)
    return np.stack([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])], axis=1)


def _do_push(state: SimState, prim: ActionPrimitive) -> tuple[bool, str, str]:
    scene = state.scene
    start = prim.pixel
    end = prim.params.get("end")
    if end is None:
        return False, "bad_push", "missing end point"
    shapes = [(o, footprint(o)) for o in _movable(scene, exclude=state.held)]
    for o, fp in shapes:
        if _contains(o, start, fp):
            return False, "push_start_inside", o.id
    for p in _segment(start, end):
        q = (int(round(p[0])), int(round(p[1])))
        for o, fp in shapes:
            if _contains(o, q, fp):
                dx, dy = end[0] - q[0], end[1] - q[1]
                _move_object(scene, o.id, (o.center.x + dx, o.center.y + dy))
                return True, "ok", o.id
    return False, "push_missed", ""


def execute_actions(state: SimState, actions: list[ActionPrimitive]) -> tuple[SimState, list[ActionEvent]]:
    """Run primitives in order on a copy of ``state``; failures are logged, not raised."""
    st = state.copy()
    log: list[ActionEvent] = []
    for prim in actions:
        st.step_count += 1
        p = (int(prim.pixel.x), int(prim.pixel.y))
        ok, code, detail = True, "ok", ""
        if prim.kind == "pick":
            ok, code, detail = _do_pick(st, prim)
        elif prim.kind == "place":
            ok, code, detail = _do_place(st, prim)
        elif prim.kind == "push":
            ok, code, detail = _do_push(st, prim)
        elif prim.kind == "pen_down":
            st.pen_down = True
            st.trace.append(PixelCoord(*p))
        elif prim.kind == "pen_up":
            st.pen_down = False
        elif prim.kind == "move_to":
            if st.pen_down:
                st.trace.append(PixelCoord(*p))
        elif prim.kind == "rotate_gripper":
            if st.held is not None:
                obj = st.scene.get(st.held)
                _set(st.scene, st.held, rotation=(obj.rotation + float(prim.params.get("degrees", 0))) % 360)
        else:
            ok, code = False, "unknown_primitive"
        st.gripper = PixelCoord(*p)
        if st.held is not None and prim.kind in ("move_to", "rotate_gripper"):
            _move_object(st.scene, st.held, p)
        log.append(ActionEvent(st.step_count, prim.kind, prim.target, p, ok, code, detail))
    return st, log


# --------------------------------------------------------------------------
# goals


def containment(scene: Scene, obj_id: str, region_id: str) -> float:
    """Fraction of ``obj_id``'s footprint lying inside ``region_id``'s footprint."""
    a = footprint_mask(scene.get(obj_id), scene.width, scene.height)
    b = footprint_mask(scene.get(region_id), scene.width, scene.height)
    total = int(a.sum())
    return float((a & b).sum()) / total if total else 0.0


def _dense(points, step: float = 1.0) -> np.ndarray:
    pts = [np.asarray(p, dtype=float) for p in points]
    if len(pts) == 1:
        return np.array(pts)
    out = []
    for a, b in zip(pts, pts[1:]):
        n = max(int(math.ceil(np.hypot(*(b - a)) / step)), 1)
        t = np.linspace(0.0, 1.0, n, endpoint=False)[:, None]
        out.append(a + t * (b - a))
    out.append(pts[-1][None, :])
    return np.concatenate(out)


def reference_path(scene: Scene, obj_id: str, shape: str):
    obj = scene.get(obj_id)
    if shape == "spiral":
        return spiral_waypoints(object_bbox(scene, obj_id)).points
    hx, hy = obj.half_extents
    return star_waypoints((float(obj.center.x), float(obj.center.y)), 0.8 * min(hx, hy)).points


def hausdorff(a, b) -> float:
    u, v = _dense(a), _dense(b)
    return max(directed_hausdorff(u, v)[0], directed_hausdorff(v, u)[0])


def goal_check(state: SimState, goal: GoalSpec | None = None) -> tuple[bool, dict]:
    scene = state.scene
    goal = goal or scene.goal
    ids = set(scene.ids())
    for src, dst in goal.bindings.items():
        if src not in ids:
            raise UnknownBinding(src)
        if goal.kind != "trajectory_trace" and dst not in ids:
            raise UnknownBinding(dst)
    report: dict = {"kind": goal.kind, "checks": []}
    ok = True
    if goal.kind in ("place_in_region", "place_in_container", "push_into_region"):
        for src, dst in goal.bindings.items():
            frac = containment(scene, src, dst)
            passed = frac >= CONTAINMENT_FRACTION and state.held != src
            report["checks"].append({"object": src, "target": dst, "fraction": round(frac, 4), "ok": passed})
            ok &= passed
    elif goal.kind == "ordering":
        for a, b in goal.bindings.items():
            xa, xb = scene.get(a).center.x, scene.get(b).center.x
            passed = xa < xb
            report["checks"].append({"left": a, "right": b, "ok": passed})
            ok &= passed
    elif goal.kind == "trajectory_trace":
        for src, shape in goal.bindings.items():
            if len(state.trace) < 2:
                report["checks"].append({"object": src, "shape": shape, "hausdorff": None, "ok": False})
                ok = False
                continue
            d = hausdorff(list(state.trace), reference_path(scene, src, shape))
            passed = d <= goal.tolerance
            report["checks"].append({"object": src, "shape": shape, "hausdorff": round(d, 3), "ok": passed})
            ok &= passed
    report["success"] = bool(ok)
    return bool(ok), report


# --------------------------------------------------------------------------
# deviation metrics


class DeviationClass(enum.Enum):
    ACTIONABLE = "Actionable"
    CLOSE_WITHIN_3R = "CloseWithin3R"
    CLOSE_WITHIN_4R = "CloseWithin4R"
    FAR = "Far"

    def within(self, k: int) -> bool:
        """Nested membership: is this class inside the ``k``-radius band (k in 1, 3, 4)?"""
        order = [DeviationClass.ACTIONABLE, DeviationClass.CLOSE_WITHIN_3R, DeviationClass.CLOSE_WITHIN_4R]
        limit = {1: 0, 3: 1, 4: 2}[k]
        return self in order[: limit + 1]


def deviation_class(d: float, r: float) -> DeviationClass:
    if d < r:
        return DeviationClass.ACTIONABLE
    if d <= 3 * r:
        return DeviationClass.CLOSE_WITHIN_3R
    if d <= 4 * r:
        return DeviationClass.CLOSE_WITHIN_4R
    return DeviationClass.FAR


def classify_deviation(point, target: SceneObject) -> DeviationClass:
    if target.kind != "circle":
        raise NotACircle(f"{target.id!r} is a {target.kind}")
    d = math.hypot(point[0] - target.center.x, point[1] - target.center.y)
    return deviation_class(d, target.half_extents[0])


# --------------------------------------------------------------------------
# toy environment and verdict fixtures


def gen_toy_env(seed: int, width: int = 640, height: int = 480) -> Scene:
    """Grey mat, one target circle of radius 50 and 4 to 8 non-overlapping distractors."""
    rng = np.random.default_rng(seed)
    colors = list(PALETTE)
    n_distractors = int(rng.integers(4, 9))
    objects: list[SceneObject] = []
    boxes: list[BoundingBox] = []
    attempts = 0
    specs = [("circle", TOY_TARGET_ID)] + [(None, f"obj{i}") for i in range(n_distractors)]
    for kind, oid in specs:
        while True:
            attempts += 1
            if attempts > PLACEMENT_ATTEMPTS:
                raise PlacementFailure(f"could not place {oid!r} after {PLACEMENT_ATTEMPTS} attempts (seed {seed})")
            k = kind or str(rng.choice(["rectangle", "star", "polygon"]))
            color = colors[int(rng.integers(len(colors)))]
            if k == "circle":
                size: float | tuple = float(TOY_RADIUS)
            elif k == "rectangle":
                size = (float(rng.integers(15, 41)), float(rng.integers(15, 41)))
            else:
                size = float(rng.integers(20, 46))
            rotation = float(rng.integers(0, 360)) if k != "circle" else 0.0
            cx = int(rng.integers(60, width - 60))
            cy = int(rng.integers(60, height - 60))
            obj = SceneObject(oid, k, color, PixelCoord(cx, cy), size, rotation)
            try:
                box = object_bbox(Scene(width, height, [obj], GoalSpec("place_in_region")), oid)
            except Exception:
                continue
            if box.x0 < 0 or box.y0 < 0 or box.x1 >= width or box.y1 >= height:
                continue
            padded = BoundingBox(box.x0 - 4, box.y0 - 4, box.x1 + 4, box.y1 + 4)
            if any(padded.intersects(b) for b in boxes):
                continue
            objects.append(obj)
            boxes.append(box)
            break
    return Scene(width, height, objects, GoalSpec("place_in_region", {}), seed)


@dataclass
class LabeledBox:
    scene: Scene
    target: str
    box: BoundingBox
    label: str


def _shifted(box: BoundingBox, dx: float, dy: float) -> BoundingBox:
    return box.shifted(int(round(dx)), int(round(dy)))


def _in_canvas(box: BoundingBox, scene: Scene) -> bool:
    return box.x0 >= 0 and box.y0 >= 0 and box.x1 < scene.width and box.y1 < scene.height


def make_fixture(scene: Scene, label: str, rng: np.random.Generator) -> LabeledBox:
    truth = object_bbox(scene, TOY_TARGET_ID)
    r = scene.get(TOY_TARGET_ID).half_extents[0]
    cx, cy = truth.center
    if label == "Perfect":
        return LabeledBox(scene, TOY_TARGET_ID, truth, label)
    for _ in range(PLACEMENT_ATTEMPTS):
        if label == "Slightly Off":
            d, t = rng.uniform(0.2 * r, 0.9 * r), rng.uniform(0, 2 * math.pi)
            box = _shifted(truth, d * math.cos(t), d * math.sin(t))
            if _in_canvas(box, scene) and 0 < box.iou(truth) < 1:
                return LabeledBox(scene, TOY_TARGET_ID, box, label)
        elif label == "Completely Off - Around":
            d, t = rng.uniform(2 * r, 4 * r), rng.uniform(0, 2 * math.pi)
            box = _shifted(truth, d * math.cos(t), d * math.sin(t))
            bx, by = box.center
            if _in_canvas(box, scene) and box.iou(truth) == 0 and math.hypot(bx - cx, by - cy) <= 4 * r:
                return LabeledBox(scene, TOY_TARGET_ID, box, label)
        elif label == "Completely Off - Wrong Object":
            others = [o.id for o in scene.objects if o.id != TOY_TARGET_ID]
            box = object_bbox(scene, others[int(rng.integers(len(others)))])
            return LabeledBox(scene, TOY_TARGET_ID, box, label)
        else:
            raise ValueError(f"unknown fixture class {label!r}")
    raise PlacementFailure(f"could not build a {label!r} fixture for seed {scene.seed}")


def verdict_fixtures(per_class: int = 25, seed: int = 0) -> list[LabeledBox]:
    """``per_class`` fixtures for each of the four ground-truth classes, one toy scene each."""
    out = []
    for ci, label in enumerate(FIXTURE_CLASSES):
        for i in range(per_class):
            scene_seed = seed * 100_000 + ci * 1000 + i
            rng = np.random.default_rng([seed, ci, i])
            out.append(make_fixture(gen_toy_env(scene_seed), label, rng))
    return out

