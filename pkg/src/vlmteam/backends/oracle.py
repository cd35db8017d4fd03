"""Deterministic scripted backend that answers every agent role from ground truth.

The oracle reads the request's ``intent`` and the rendered prompt text, looks
the referenced target up in the current scene, and replies in the same
structured formats a real model must use.  Box estimates start ``δ0`` pixels
off (plus optional Gaussian jitter) and each mover turn shrinks the error by
the factor ``1 - α``, so convergence is predictable.
"""
from __future__ import annotations

import json
import math
import re
import threading
import zlib
from collections import Counter
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ..errors import OracleError, UnknownObject, ValidationError
from ..payloads import APPROVED_TOKEN, render_reply
from ..scene import BoundingBox, PixelCoord, Scene, free_spot, object_bbox
from .base import BackendReply, BackendRequest

PLAN_QUALITIES = ("perfect", "misses_prerequisites")
FREE_AREA = "free table area"
OPENING_SUFFIX = " opening"

_LINE = {
    "target": re.compile(r"^(?:Current target|Object|Area|Target): (.+)$", re.M),
    "bbox": re.compile(r"^(?:Current bounding box|Box after revision|Approved bounding box): (\[[^\]]*\])", re.M),
    "window": re.compile(r"covering original pixels (\[[^\]]*\])"),
    "point": re.compile(r"^(?:Current point|Proposed point): (\[[^\]]*\])", re.M),
    "purpose": re.compile(r"^Purpose: (\w+)", re.M),
    "candidates": re.compile(r"^Candidates \(label: x, y\): (.+)$", re.M),
    "task": re.compile(r"^Task: (.+)$", re.M),
}
_FENCE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


def _stable(text: str) -> int:
    return zlib.crc32(text.encode())


@dataclass
class OracleConfig:
    scene: Scene
    init_offset_px: float = 20.0
    init_offset_sigma: float = 0.0
    init_angle_deg: float | None = None
    init_size_error: float = 0.2
    contraction: float = 0.5
    iou_accept: float = 0.85
    plan_quality: str = "perfect"
    verdict_noise: float = 0.0
    self_check_iou: float = 0.5
    never_approve: bool = False
    forced_rejects: dict[str, int] = field(default_factory=dict)
    forced_wrong_init: dict[str, int] = field(default_factory=dict)
    pivot_select: int = 3
    seed: int = 0
    free_area_radius: float = 40.0

    def __post_init__(self):
        if not 0 < self.iou_accept <= 1:
            raise ValidationError("iou_accept must lie in (0, 1]")
        if self.init_offset_px < 0 or self.init_offset_sigma < 0:
            raise ValidationError("init offsets must be >= 0")
        if not 0 < self.contraction <= 1:
            raise ValidationError("contraction must lie in (0, 1]")
        if not 0 <= self.verdict_noise <= 1:
            raise ValidationError("verdict_noise must lie in [0, 1]")
        if self.plan_quality not in PLAN_QUALITIES:
            raise ValidationError(f"plan_quality must be one of {PLAN_QUALITIES}")


@dataclass
class _TargetState:
    offset: tuple[float, float] = (0.0, 0.0)
    size_error: float = 0.0
    k: int = 0  # mover turns since the last (re)initialisation
    inits: int = 0
    wrong: bool = False


@dataclass(frozen=True)
class _Area:
    center: tuple[float, float]
    radius: float


class ScriptedOracle:
    """Backend emulating all agent roles.  Thread-safe; per-target state is isolated."""

    def __init__(self, config: OracleConfig):
        self.config = config
        self.scene = config.scene.copy()
        self.calls: Counter = Counter()
        self._lock = threading.RLock()
        self._states: dict[str, _TargetState] = {}
        self._counts: Counter = Counter()  # (intent, target) -> calls, never reset
        self._forced_rejects = dict(config.forced_rejects)
        self._forced_wrong = dict(config.forced_wrong_init)

    # ------------------------------------------------------------------
    # plumbing

    def observe(self, scene: Scene) -> None:
        """Adopt a new ground truth (start of an attempt); box estimates restart."""
        with self._lock:
            self.scene = scene.copy()
            self._states.clear()

    def chat(self, req: BackendRequest) -> BackendReply:
        handler = getattr(self, f"_on_{req.intent}", None)
        if handler is None:
            raise OracleError(f"oracle cannot answer intent {req.intent!r}")
        with self._lock:
            self.calls[req.intent] += 1
            text = handler(req)
        return BackendReply(text=text, usage={}, latency_ms=0.0)

    def _rng(self, kind: str, target: str, count: int) -> np.random.Generator:
        return np.random.default_rng([self.config.seed, _stable(kind), _stable(target), count])

    def _tick(self, kind: str, target: str) -> int:
        n = self._counts[(kind, target)]
        self._counts[(kind, target)] += 1
        return n

    @staticmethod
    def _field(req: BackendRequest, name: str, required: bool = True):
        for m in reversed(req.messages):
            if m.role != "user":
                continue
            hit = _LINE[name].search(m.text)
            if hit:
                return hit.group(1).strip()
        if required:
            raise OracleError(f"request text lacks a {name!r} line")
        return None

    @staticmethod
    def _fenced(req: BackendRequest):
        for m in reversed(req.messages):
            if m.role == "user":
                hit = _FENCE.search(m.text)
                if hit:
                    return json.loads(hit.group(1))
        raise OracleError("request text lacks an embedded JSON block")

    @staticmethod
    def _user_texts(req: BackendRequest) -> str:
        return "\n".join(m.text for m in req.messages if m.role == "user")

    # ------------------------------------------------------------------
    # ground truth lookup

    def _object(self, name: str):
        scene = self.scene
        try:
            return scene.get(name)
        except UnknownObject:
            pass
        matches = [o for o in scene.objects if o.descriptor == name]
        if len(matches) == 1:
            return matches[0]
        raise OracleError(f"no ground truth for target {name!r}")

    def _slots(self) -> list[PixelCoord]:
        ids = self._ordering_chain()
        n = max(len(ids), 1)
        y = int(self.scene.height * 0.85)
        return [PixelCoord(int(round(self.scene.width * (i + 1) / (n + 1))), y) for i in range(n)]

    def _area(self, name: str) -> _Area:
        if name == FREE_AREA:
            r = self.config.free_area_radius
            p = free_spot(self.scene, r)
            return _Area((float(p.x), float(p.y)), r)
        m = re.fullmatch(r"slot (\d+)", name)
        if m:
            slots = self._slots()
            i = int(m.group(1))
            if i >= len(slots):
                raise OracleError(f"no ground truth for target {name!r}")
            return _Area((float(slots[i].x), float(slots[i].y)), 20.0)
        base = name[: -len(OPENING_SUFFIX)] if name.endswith(OPENING_SUFFIX) else name
        obj = self._object(base)
        hx, hy = obj.half_extents
        return _Area((float(obj.center.x), float(obj.center.y)), 0.5 * min(hx, hy))

    def _truth_box(self, name: str) -> BoundingBox:
        return object_bbox(self.scene, self._object(name).id)

    def _truth_point(self, name: str) -> tuple[float, float]:
        try:
            box = self._truth_box(name)
        except OracleError:
            return self._area(name).center
        return box.center

    def _wrong_box(self, name: str) -> BoundingBox:
        """Box of the object nearest to ``name`` that is not ``name`` itself."""
        obj = self._object(name)
        others = [o for o in self.scene.objects if o.id != obj.id and o.kind != "region" and o.lid_of != obj.id]
        if not others:
            raise OracleError(f"no other object to confuse {name!r} with")
        others.sort(key=lambda o: (math.hypot(o.center.x - obj.center.x, o.center.y - obj.center.y), o.id))
        return object_bbox(self.scene, others[0].id)

    # ------------------------------------------------------------------
    # plans

    def _ordering_chain(self) -> list[str]:
        goal = self.scene.goal
        after = dict(goal.bindings)
        firsts = [a for a in after if a not in after.values()]
        chain: list[str] = []
        node = firsts[0] if firsts else None
        while node is not None and node not in chain:
            chain.append(node)
            node = after.get(node)
        return chain

    def _plan(self, include_prereq: bool) -> dict:
        goal = self.scene.goal
        subgoals: list[dict] = []
        if not goal.bindings:
            raise OracleError(f"goal {goal.kind!r} has no bindings to plan for")
        if goal.kind == "ordering":
            for i, obj in enumerate(self._ordering_chain()):
                subgoals.append({"verb": "pick", "object": obj, "target": None, "notes": ""})
                subgoals.append({"verb": "place", "object": obj, "target": f"slot {i}", "notes": f"position {i} from the left"})
        for obj, dst in goal.bindings.items():
            if goal.kind == "place_in_container":
                if include_prereq:
                    for lid in self.scene.lids_of(dst):
                        subgoals.append(
                            {"verb": "remove_lid", "object": lid.id, "target": FREE_AREA, "notes": f"uncover {dst}"}
                        )
                subgoals.append({"verb": "pick", "object": obj, "target": None, "notes": ""})
                subgoals.append({"verb": "place", "object": obj, "target": dst + OPENING_SUFFIX, "notes": ""})
            elif goal.kind == "place_in_region":
                subgoals.append({"verb": "pick", "object": obj, "target": None, "notes": ""})
                subgoals.append({"verb": "place", "object": obj, "target": dst, "notes": ""})
            elif goal.kind == "push_into_region":
                subgoals.append({"verb": "push", "object": obj, "target": dst, "notes": "start behind the object"})
            elif goal.kind == "trajectory_trace":
                subgoals.append({"verb": "trace_path", "object": obj, "target": None, "notes": dst})
        return {"subgoals": subgoals}

    def _wants_prereq(self, text: str) -> bool:
        if self.config.plan_quality == "perfect":
            return True
        return "prerequisite" in text or "blocked_by_lid" in text

    def _on_create_plan(self, req):
        return render_reply("plan", self._plan(self._wants_prereq(self._user_texts(req))))

    def _on_revise_plan(self, req):
        return render_reply("plan", self._plan(self._wants_prereq(self._user_texts(req))))

    def _on_verify_plan(self, req):
        plan = self._fenced(req)
        if self.config.never_approve:
            return "Step 1 still looks risky; please double-check the approach path before continuing."
        issues = []
        removed: set[str] = set()
        for sg in plan.get("subgoals", []):
            if sg["verb"] == "remove_lid":
                try:
                    lid = self._object(sg["object"])
                    removed.add(lid.lid_of or "")
                except OracleError:
                    pass
            target = sg.get("target") or ""
            if sg["verb"] == "place" and target.endswith(OPENING_SUFFIX):
                container = target[: -len(OPENING_SUFFIX)]
                try:
                    c = self._object(container)
                except OracleError:
                    continue
                if c.has_lid and c.id not in removed:
                    issues.append(
                        f"Missing prerequisite: {c.id} is closed by a lid, so the lid has to be removed "
                        f"before {sg['object']} can go inside."
                    )
        return "\n".join(issues) if issues else APPROVED_TOKEN

    def _on_extract_targets(self, req):
        from ..planner import infer_mode

        plan = self._fenced(req)
        names: list[str] = []
        for sg in plan.get("subgoals", []):
            for ref in (sg.get("object"), sg.get("target")):
                if ref and ref not in names:
                    names.append(ref)
        return render_reply("target_list", {"targets": [{"name": n, "mode": infer_mode(n)} for n in names]})

    def _on_compile_actions(self, req):
        memory = self._fenced(req)
        subgoals = memory.get("plan.subgoals")
        if not subgoals:
            raise OracleError("memory has no plan.subgoals entry")
        actions = []
        for sg in subgoals:
            verb, obj, dst = sg["verb"], sg["object"], sg.get("target")
            if verb == "remove_lid":
                actions.append({"kind": "pick", "target": obj, "subgoal": verb})
                actions.append({"kind": "place", "target": dst or FREE_AREA, "subgoal": verb})
            elif verb == "pick":
                actions.append({"kind": "pick", "target": obj, "subgoal": verb})
            elif verb == "place":
                actions.append({"kind": "place", "target": dst or obj, "subgoal": verb})
            elif verb == "push":
                actions.append({"kind": "push", "target": obj, "goal": dst, "subgoal": verb})
            elif verb == "trace_path":
                actions.append({"kind": "trace", "target": obj, "shape": sg.get("notes") or "star", "subgoal": verb})
            elif verb == "rotate":
                actions.append({"kind": "rotate_gripper", "target": obj, "degrees": 90, "subgoal": verb})
            elif verb == "shake":
                actions.append({"kind": "shake", "target": obj, "subgoal": verb})
            elif verb == "move_gripper":
                actions.append({"kind": "move_to", "target": dst or obj, "subgoal": verb})
        return render_reply("action_list", {"actions": actions})

    # ------------------------------------------------------------------
    # boxes

    def _new_state(self, target: str) -> _TargetState:
        cfg = self.config
        prev = self._states.get(target)
        inits = prev.inits + 1 if prev else 1
        rng = self._rng("init", target, inits)
        angle = math.radians(cfg.init_angle_deg) if cfg.init_angle_deg is not None else rng.uniform(0, 2 * math.pi)
        jitter = rng.normal(0.0, cfg.init_offset_sigma, size=2) if cfg.init_offset_sigma else (0.0, 0.0)
        # a re-initialisation follows a Reject, and the manager is told its
        # earlier guess missed; model that feedback as one contraction step
        # per earlier attempt
        scale = (1 - cfg.contraction) ** (inits - 1)
        offset = (
            scale * (cfg.init_offset_px * math.cos(angle) + float(jitter[0])),
            scale * (cfg.init_offset_px * math.sin(angle) + float(jitter[1])),
        )
        wrong = False
        if self._forced_wrong.get(target, 0) > 0:
            self._forced_wrong[target] -= 1
            wrong = True
        st = _TargetState(offset, cfg.init_size_error, 0, inits, wrong)
        self._states[target] = st
        return st

    def _state(self, target: str) -> _TargetState:
        st = self._states.get(target)
        return st if st is not None else self._new_state(target)

    def _box_at(self, target: str, st: _TargetState) -> BoundingBox:
        truth = self._wrong_box(target) if st.wrong else self._truth_box(target)
        shrink = (1 - self.config.contraction) ** st.k
        cx, cy = truth.center
        ox, oy = st.offset[0] * shrink, st.offset[1] * shrink
        w = truth.width * (1 + st.size_error * shrink)
        h = truth.height * (1 + st.size_error * shrink)
        want = math.hypot(ox, oy)
        tx, ty = cx + ox, cy + oy
        best = None
        xs0 = {math.floor(tx - w / 2), math.ceil(tx - w / 2)}
        xs1 = {math.floor(tx + w / 2), math.ceil(tx + w / 2)}
        ys0 = {math.floor(ty - h / 2), math.ceil(ty - h / 2)}
        ys1 = {math.floor(ty + h / 2), math.ceil(ty + h / 2)}
        for x0, x1, y0, y1 in product(sorted(xs0), sorted(xs1), sorted(ys0), sorted(ys1)):
            if x1 <= x0 or y1 <= y0:
                continue
            err = math.hypot((x0 + x1) / 2 - cx, (y0 + y1) / 2 - cy)
            key = (abs(err - want), abs((x1 - x0) - w) + abs((y1 - y0) - h), x0, y0, x1, y1)
            if best is None or key < best[0]:
                best = (key, BoundingBox(x0, y0, x1, y1))
        box = best[1]
        return self._fit(box)

    def _fit(self, box: BoundingBox) -> BoundingBox:
        W, H = self.scene.width, self.scene.height
        dx = -box.x0 if box.x0 < 0 else min(0, W - 1 - box.x1)
        dy = -box.y0 if box.y0 < 0 else min(0, H - 1 - box.y1)
        return box.shifted(dx, dy).clamped(W, H)

    def _nudge(self, target: str, current: BoundingBox, kind: str) -> BoundingBox:
        rng = self._rng(kind, target, self._tick(kind, target))
        for _ in range(16):
            dx, dy = (int(v) for v in rng.integers(-6, 7, size=2))
            cand = self._fit(current.shifted(dx, dy))
            if cand != current:
                return cand
        return self._fit(BoundingBox(current.x0 - 1, current.y0 - 1, current.x1 + 1, current.y1 + 1))

    def _on_init_box(self, req):
        target = self._field(req, "target")
        st = self._new_state(target)
        return render_reply("bbox", {"bbox": self._box_at(target, st).as_list()})

    def _mover_step(self, req, target: str) -> tuple[BoundingBox, BoundingBox]:
        st = self._state(target)
        current = BoundingBox.from_list(json.loads(self._field(req, "bbox")))
        window_raw = self._field(req, "window", required=False)
        truth = self._truth_box(target)
        visible = True
        if window_raw:
            visible = BoundingBox.from_list(json.loads(window_raw)).intersects(truth)
        if st.wrong or not visible:
            return current, self._nudge(target, current, "nudge")
        st.k += 1
        proposal = self._box_at(target, st)
        return current, proposal

    def _on_move_box(self, req):
        target = self._field(req, "target")
        _, proposal = self._mover_step(req, target)
        return render_reply("bbox", {"bbox": proposal.as_list()})

    def _on_self_check_box(self, req):
        target = self._field(req, "target")
        current = BoundingBox.from_list(json.loads(self._field(req, "bbox")))
        if current.iou(self._truth_box(target)) >= self.config.self_check_iou:
            return render_reply("bbox", {"bbox": current.as_list(), "done": True})
        _, proposal = self._mover_step(req, target)
        return render_reply("bbox", {"bbox": proposal.as_list(), "done": False})

    def _noisy(self, verdict: str, target: str, count: int) -> str:
        p = self.config.verdict_noise
        if p <= 0:
            return verdict
        rng = self._rng("noise", target, count)
        if rng.random() >= p:
            return verdict
        if verdict == "Accept" or verdict == "Reject":
            return "Revision Needed"
        return "Accept" if rng.random() < 0.5 else "Reject"

    def box_verdict(self, box: BoundingBox, target: str) -> str:
        iou = box.iou(self._truth_box(target))
        if iou >= self.config.iou_accept:
            return "Accept"
        if iou == 0:
            return "Reject"
        return "Revision Needed"

    def _on_check_box(self, req):
        target = self._field(req, "target")
        box = BoundingBox.from_list(json.loads(self._field(req, "bbox")))
        count = self._tick("check", target)
        if self._forced_rejects.get(target, 0) > 0:
            self._forced_rejects[target] -= 1
            return "Reject"
        return self._noisy(self.box_verdict(box, target), target, count)

    # ------------------------------------------------------------------
    # points

    def _point_at(self, target: str, st: _TargetState) -> PixelCoord:
        area = self._area(target)
        shrink = (1 - self.config.contraction) ** st.k
        x = area.center[0] + st.offset[0] * shrink
        y = area.center[1] + st.offset[1] * shrink
        return PixelCoord(
            min(max(int(round(x)), 0), self.scene.width - 1), min(max(int(round(y)), 0), self.scene.height - 1)
        )

    def _point_score(self, point, target: str) -> tuple[float, float, float]:
        area = self._area(target)
        d = math.hypot(point[0] - area.center[0], point[1] - area.center[1])
        return max(0.0, 1.0 - d / (2 * area.radius)), d, area.radius

    def _on_init_point(self, req):
        target = self._field(req, "target")
        st = self._new_state(target)
        st.wrong = False
        return render_reply("point", {"point": list(self._point_at(target, st))})

    def _next_point(self, req, target: str) -> list[int]:
        st = self._state(target)
        current = PixelCoord(*json.loads(self._field(req, "point")))
        st.k += 1
        p = self._point_at(target, st)
        if p == current:
            rng = self._rng("nudge", target, self._tick("nudge", target))
            dx, dy = (int(v) for v in rng.choice([-1, 1], size=2))
            p = PixelCoord(min(max(p.x + dx, 0), self.scene.width - 1), min(max(p.y + dy, 0), self.scene.height - 1))
        return list(p)

    def _on_move_point(self, req):
        target = self._field(req, "target")
        return render_reply("point", {"point": self._next_point(req, target)})

    def _on_self_check_point(self, req):
        target = self._field(req, "target")
        current = json.loads(self._field(req, "point"))
        score, _, _ = self._point_score(current, target)
        if score >= self.config.self_check_iou:
            return render_reply("point", {"point": current, "done": True})
        return render_reply("point", {"point": self._next_point(req, target), "done": False})

    def point_verdict(self, point, target: str) -> str:
        score, d, r = self._point_score(point, target)
        if score >= self.config.iou_accept:
            return "Accept"
        if d >= 2 * r:
            return "Reject"
        return "Revision Needed"

    def _on_check_point(self, req):
        target = self._field(req, "target")
        point = json.loads(self._field(req, "point"))
        count = self._tick("check", target)
        if self._forced_rejects.get(target, 0) > 0:
            self._forced_rejects[target] -= 1
            return "Reject"
        return self._noisy(self.point_verdict(point, target), target, count)

    # ------------------------------------------------------------------
    # action points

    def _push_goal(self, target: str) -> tuple[float, float]:
        obj = self._object(target)
        dst = self.scene.goal.bindings.get(obj.id)
        if dst is None:
            raise OracleError(f"no push goal bound to {target!r}")
        return self._truth_point(dst)

    def _on_action_point(self, req):
        from ..actuation import push_start_point

        target = self._field(req, "target")
        box = BoundingBox.from_list(json.loads(self._field(req, "bbox")))
        purpose = self._field(req, "purpose", required=False) or "grasp"
        if purpose == "push_start":
            p = push_start_point(box, self._push_goal(target), 10)
        else:
            cx, cy = box.center
            p = PixelCoord(int(math.floor(cx)), int(math.floor(cy)))
        return render_reply("point", {"point": [int(p[0]), int(p[1])]})

    def _on_direct_point(self, req):
        from ..actuation import push_start_point

        target = self._field(req, "target")
        purpose = self._field(req, "purpose", required=False) or "grasp"
        if purpose == "push_start":
            truth = push_start_point(self._truth_box(target), self._push_goal(target), 10)
        else:
            truth = self._truth_point(target)
        cfg = self.config
        rng = self._rng("direct", target, self._tick("direct", target))
        angle = math.radians(cfg.init_angle_deg) if cfg.init_angle_deg is not None else rng.uniform(0, 2 * math.pi)
        jitter = rng.normal(0.0, cfg.init_offset_sigma, size=2) if cfg.init_offset_sigma else (0.0, 0.0)
        x = truth[0] + cfg.init_offset_px * math.cos(angle) + float(jitter[0])
        y = truth[1] + cfg.init_offset_px * math.sin(angle) + float(jitter[1])
        x = min(max(int(round(x)), 0), self.scene.width - 1)
        y = min(max(int(round(y)), 0), self.scene.height - 1)
        return render_reply("point", {"point": [x, y]})

    # ------------------------------------------------------------------
    # point selection baseline

    def _ranked_candidates(self, req) -> list[int]:
        target = self._field(req, "target")
        truth = self._truth_point(target)
        cands = json.loads(self._field(req, "candidates"))
        ranked = sorted(
            ((math.hypot(x - truth[0], y - truth[1]), int(label)) for label, (x, y) in cands.items()),
        )
        return [label for _, label in ranked]

    def _on_pivot_select(self, req):
        return render_reply("selection", {"selected": self._ranked_candidates(req)[: self.config.pivot_select]})

    def _on_pivot_final(self, req):
        return render_reply("selection", {"selected": self._ranked_candidates(req)[:1]})
