"""Compile a verified plan and grounded action points into robot primitives."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, GoalInsideObject, MissingActionPoint, OutOfBounds, ParseError
from .payloads import fenced
from .prompts import SUPERVISOR_COMPILE_ACTIONS
from .scene import BoundingBox, Calibration, DepthMap, PixelCoord

PRIMITIVE_KINDS = ("move_to", "pick", "place", "push", "rotate_gripper", "pen_down", "pen_up")
PUSH_CLEARANCE = 10.0
SPIRAL_PITCH = 15.0
SHAKE_CYCLES = 3
SHAKE_AMPLITUDE_MM = 40.0
DEPTH_WINDOW = 5


@dataclass
class ActionPrimitive:
    kind: str
    pixel: PixelCoord
    world: tuple[float, float, float]
    params: dict = field(default_factory=dict)
    target: str = ""
    subgoal: str = ""  # verb of the plan subgoal this primitive came from

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "subgoal": self.subgoal,
            "target": self.target,
            "pixel": [int(self.pixel.x), int(self.pixel.y)],
            "world": [round(v, 3) for v in self.world],
            "params": self.params,
        }


@dataclass
class Waypoints:
    points: list[tuple[float, float]]
    closed: bool = False

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("waypoints need at least two points")
        for a, b in zip(self.points, self.points[1:]):
            if a == b:
                raise ValueError("consecutive waypoints must differ")

    def __len__(self) -> int:
        return len(self.points)

    def pixels(self) -> list[PixelCoord]:
        return [PixelCoord(int(round(x)), int(round(y))) for x, y in self.points]


def push_start_point(obj_box: BoundingBox, goal, clearance: float = PUSH_CLEARANCE) -> PixelCoord:
    """Start pixel behind the object, on the far side from ``goal``.

    The distance from the box centre is the box's half-extent along the push
    direction plus ``clearance``, so the start is always outside the box.
    """
    cx, cy = obj_box.center
    dx, dy = goal[0] - cx, goal[1] - cy
    if obj_box.contains(goal):
        raise GoalInsideObject(f"goal {tuple(goal)} lies inside {obj_box.as_list()}")
    norm = math.hypot(dx, dy)
    ux, uy = dx / norm, dy / norm
    hw, hh = obj_box.width / 2, obj_box.height / 2
    # distance from centre to the box boundary along (ux, uy)
    tx = hw / abs(ux) if ux else math.inf
    ty = hh / abs(uy) if uy else math.inf
    reach = min(tx, ty) + clearance
    sx, sy = cx - ux * reach, cy - uy * reach
    # round away from the box so rounding never pulls the start back inside
    px = math.floor(sx) if ux > 0 else math.ceil(sx) if ux < 0 else round(sx)
    py = math.floor(sy) if uy > 0 else math.ceil(sy) if uy < 0 else round(sy)
    return PixelCoord(int(px), int(py))


def star_waypoints(center, radius: float) -> Waypoints:
    # strokes shorter than ~5 px are not meaningful on the robot, but tiny
    # radii are still geometrically valid, so only non-positive values fail
    if radius <= 0:
        raise ValueError("star radius must be positive")
    cx, cy = center
    verts = [
        (cx + radius * math.cos(math.radians(-90 + 72 * k)), cy + radius * math.sin(math.radians(-90 + 72 * k)))
        for k in range(5)
    ]
    order = (0, 2, 4, 1, 3, 0)
    return Waypoints([verts[i] for i in order], closed=True)


def spiral_waypoints(box: BoundingBox, pitch: float = SPIRAL_PITCH, step: float = 8.0) -> Waypoints:
    """Archimedean spiral from the box centre outward, clipped to the box."""
    cx, cy = box.center
    limit = math.hypot(box.width, box.height) / 2
    pts: list[tuple[float, float]] = []
    theta = 0.0
    b = pitch / (2 * math.pi)
    while b * theta <= limit:
        r = b * theta
        x = min(max(cx + r * math.cos(theta), box.x0), box.x1)
        y = min(max(cy + r * math.sin(theta), box.y0), box.y1)
        if not pts or (round(x, 6), round(y, 6)) != pts[-1]:
            pts.append((round(x, 6), round(y, 6)))
        # constant arc length steps (approximately)
        theta += step / max(math.hypot(r, b), b)
    return Waypoints(pts)


def shake_waypoints(center, calib: Calibration, cycles: int = SHAKE_CYCLES,
                    amplitude_mm: float = SHAKE_AMPLITUDE_MM) -> Waypoints:
    wx, wy = calib.apply(*center)
    pts = []
    for _ in range(cycles):
        for sign in (1, -1):
            pts.append(calib.inverse(wx + sign * amplitude_mm, wy))
    pts.append((float(center[0]), float(center[1])))
    return Waypoints(pts)


def pixel_to_world(p, calib: Calibration, depth: DepthMap) -> tuple[float, float, float]:
    x, y = int(p[0]), int(p[1])
    if not (0 <= x < depth.width and 0 <= y < depth.height):
        raise OutOfBounds(f"pixel {(x, y)} outside {depth.width}x{depth.height} depth map")
    h = DEPTH_WINDOW // 2
    window = depth.depth[max(y - h, 0) : y + h + 1, max(x - h, 0) : x + h + 1]
    z = float(np.median(window)) - calib.z_offset
    wx, wy = calib.apply(x, y)
    return (wx, wy, z)


def world_to_pixel(world, calib: Calibration) -> tuple[float, float]:
    try:
        return calib.inverse(world[0], world[1])
    except np.linalg.LinAlgError as exc:
        raise CalibrationError(str(exc)) from exc


def expected_primitive_count(plan, waypoint_counts: dict[str, int] | None = None) -> int:
    """Primitive count implied by the plan: pick/place 1, remove_lid 2, trace_path len+2."""
    waypoint_counts = waypoint_counts or {}
    n = 0
    for sg in plan.subgoals:
        if sg.verb == "remove_lid":
            n += 2
        elif sg.verb == "trace_path":
            n += waypoint_counts.get(sg.object_ref, 6) + 2
        elif sg.verb == "shake":
            n += 2 * SHAKE_CYCLES + 1
        else:
            n += 1
    return n


def _prim(kind, pixel, calib, depth, target, **params) -> ActionPrimitive:
    px = PixelCoord(int(round(pixel[0])), int(round(pixel[1])))
    px = PixelCoord(min(max(px.x, 0), depth.width - 1), min(max(px.y, 0), depth.height - 1))
    return ActionPrimitive(kind, px, pixel_to_world(px, calib, depth), params, target)


def expand_actions(actions: list[dict], points: dict, calib: Calibration, depth: DepthMap) -> list[ActionPrimitive]:
    """Resolve symbolic actions (``{"kind", "target", ...}``) against action points."""
    out: list[ActionPrimitive] = []

    def point_of(name):
        ap = points.get(name)
        if ap is None:
            raise MissingActionPoint(name)
        return ap

    for a in actions:
        start_len = len(out)
        kind, target = a["kind"], a["target"]
        ap = point_of(target)
        if kind in ("pick", "place", "move_to"):
            out.append(_prim(kind, ap.point, calib, depth, target))
        elif kind == "rotate_gripper":
            out.append(_prim(kind, ap.point, calib, depth, target, degrees=float(a.get("degrees", 90))))
        elif kind == "push":
            goal_ap = point_of(a.get("goal") or "")
            start = ap.point
            gx, gy = goal_ap.point
            if ap.box is not None:
                cx, cy = ap.box.center
                dx, dy = gx - cx, gy - cy
                norm = math.hypot(dx, dy) or 1.0
                end = (start[0] + dx + PUSH_CLEARANCE * dx / norm, start[1] + dy + PUSH_CLEARANCE * dy / norm)
            else:
                end = (gx, gy)
            prim = _prim("push", start, calib, depth, target)
            endpx = _prim("move_to", end, calib, depth, target)
            if endpx.pixel == prim.pixel:
                raise ParseError("push start and end coincide")
            prim.params = {"end": [endpx.pixel.x, endpx.pixel.y], "end_world": [round(v, 3) for v in endpx.world]}
            out.append(prim)
        elif kind == "trace":
            shape = a.get("shape", "star")
            if shape == "spiral":
                box = ap.box or BoundingBox.from_center(ap.point[0], ap.point[1], 60, 60)
                wps = spiral_waypoints(box)
            else:
                radius = 0.4 * min(ap.box.width, ap.box.height) if ap.box is not None else 30.0
                wps = star_waypoints(ap.point, max(radius, 5.0))
            pix = wps.pixels()
            out.append(_prim("pen_down", pix[0], calib, depth, target, shape=shape))
            out.extend(_prim("move_to", p, calib, depth, target) for p in pix)
            out.append(_prim("pen_up", pix[-1], calib, depth, target))
        elif kind == "shake":
            wps = shake_waypoints(ap.point, calib)
            out.extend(_prim("move_to", p, calib, depth, target) for p in wps.pixels())
        else:
            raise ParseError(f"unknown action kind {kind!r}")
        for prim in out[start_len:]:
            prim.subgoal = a.get("subgoal", "")
    return out


def compile_actions(plan, points: dict, mem, backend_or_agent, calib: Calibration, depth: DepthMap,
                    env=None, inline_context: dict | None = None) -> list[ActionPrimitive]:
    """Ask the supervisor to turn memory into symbolic actions, then resolve them.

    ``mem`` is a :class:`~vlmteam.agents.MemoryAgent`; when it is ``None`` (no
    memory agent) ``inline_context`` is sent instead.
    """
    from .agents import Agent

    if not plan.approved:
        from .errors import NotApproved

        raise NotApproved("cannot compile an unapproved plan")
    for sg in plan.subgoals:
        for ref in (sg.object_ref, sg.target_ref):
            if ref and ref not in points:
                raise MissingActionPoint(ref)
    agent = backend_or_agent if isinstance(backend_or_agent, Agent) else Agent("supervisor", backend_or_agent)
    if mem is not None:
        context = mem.snapshot()
    else:
        context = inline_context or {"plan.subgoals": [sg.to_dict() for sg in plan.subgoals]}
    images = [env] if env is not None else []
    reply = agent.ask(
        SUPERVISOR_COMPILE_ACTIONS,
        {"memory": fenced(context), "env": "[image 1: environment]" if env is not None else "(not attached)"},
        images,
    )
    return expand_actions(reply.body["actions"], points, calib, depth)


def actions_to_json(actions: list[ActionPrimitive]) -> str:
    return json.dumps([a.to_dict() for a in actions], indent=1)
