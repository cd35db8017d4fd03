"""Turning target descriptors into pixel geometry.

The grounding team works per target: the manager makes a rough guess on the
full environment image, the checker judges the guess on a zoomed crop, the
mover revises it until the checker accepts, and the manager finally picks the
pixel to act on.  Open areas skip boxes and are grounded as single points.
A sample-and-select point baseline (``pivot_ground``) is included for
comparison.
"""
from __future__ import annotations

import enum
import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .agents import Agent
from .errors import EmptyIntersection, GroundingExhausted, ParseError, PointOutsideBox, ValidationError
from .imaging import (
    Annotation,
    ZoomFrame,
    crop_with_margin,
    draw_annotations,
    overlay_ticks,
    point_window,
)
from .prompts import (
    CHECKER_VERIFY_BOX,
    CHECKER_VERIFY_POINT,
    MANAGER_ACTION_POINT,
    MANAGER_INIT_BOX,
    MANAGER_INIT_POINT,
    MOVER_REVISE_BOX,
    MOVER_REVISE_POINT,
    MOVER_SELF_CHECK,
    MOVER_SELF_CHECK_POINT,
    PIVOT_FINAL,
    PIVOT_SELECT,
    SUPERVISOR_DIRECT_POINT,
)
from .scene import BoundingBox, PixelCoord, RasterImage

logger = logging.getLogger(__name__)

DEFAULT_MAX_ITERS = 10
MAX_REINITS = 2
POINT_WINDOW = 200
MIN_NUDGE = 2
TICK_SPACING = 50
PURPOSES = ("grasp", "place", "push_start", "trace")


class Verdict(enum.Enum):
    ACCEPT = "Accept"
    REVISION_NEEDED = "Revision Needed"
    REJECT = "Reject"

    @classmethod
    def parse(cls, text: str) -> "Verdict":
        return cls(text)


@dataclass
class GroundingState:
    target: str
    mode: str
    current_box: BoundingBox | None = None
    current_point: PixelCoord | None = None
    history: list[tuple[object, Verdict]] = field(default_factory=list)
    approved: bool = False
    approved_by: str | None = None  # checker | self_check | manager | supervisor
    reinits: int = 0
    mover_calls: int = 0
    checker_calls: int = 0
    images: list[RasterImage] = field(default_factory=list, repr=False)

    @property
    def iteration(self) -> int:
        return len(self.history)

    @property
    def geometry(self):
        return self.current_box if self.mode == "object_box" else self.current_point

    def to_dict(self) -> dict:
        def geom(g):
            return g.as_list() if isinstance(g, BoundingBox) else [int(g[0]), int(g[1])]

        return {
            "target": self.target,
            "mode": self.mode,
            "box": self.current_box.as_list() if self.current_box is not None else None,
            "point": list(self.current_point) if self.current_point is not None else None,
            "iterations": self.iteration,
            "mover_calls": self.mover_calls,
            "checker_calls": self.checker_calls,
            "reinits": self.reinits,
            "approved": self.approved,
            "approved_by": self.approved_by,
            "history": [{"proposal": geom(p), "verdict": v.value} for p, v in self.history],
        }


@dataclass
class ActionPoint:
    target: str
    point: PixelCoord
    purpose: str
    box: BoundingBox | None = None
    retries: int = 0

    def __post_init__(self):
        if self.purpose not in PURPOSES:
            raise ValidationError(f"unknown purpose {self.purpose!r}")

    def to_dict(self) -> dict:
        return {
            "target": self.target,
            "point": [int(self.point[0]), int(self.point[1])],
            "purpose": self.purpose,
            "box": self.box.as_list() if self.box is not None else None,
        }


@dataclass
class GroundingConfig:
    max_iters: int = DEFAULT_MAX_ITERS
    max_reinits: int = MAX_REINITS
    margin: float = 0.5
    use_checker: bool = True
    use_mover: bool = True
    fanout: int = 4

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


@dataclass
class GroundingTeam:
    """The agent instances working on one target."""

    manager: Agent
    mover: Agent | None
    checker: Agent | None

    @classmethod
    def for_target(cls, backend, target: str, cfg: GroundingConfig, seed: int = 0) -> "GroundingTeam":
        return cls(
            Agent("ground_manager", backend, channel=f"ground_manager/{target}", seed=seed),
            Agent("mover", backend, channel=f"mover/{target}", seed=seed) if cfg.use_mover else None,
            Agent("checker", backend, channel=f"checker/{target}", seed=seed) if cfg.use_checker else None,
        )

    def agents(self) -> list[Agent]:
        return [a for a in (self.manager, self.mover, self.checker) if a is not None]


def slug(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_") or "target"


def purpose_for(plan, target: str) -> str:
    """Purpose of the first subgoal that mentions ``target``."""
    for sg in plan.subgoals:
        if sg.object_ref == target:
            if sg.verb == "push":
                return "push_start"
            if sg.verb == "trace_path":
                return "trace"
            if sg.verb == "place":
                continue
            return "grasp"
        if sg.target_ref == target:
            return "place"
    return "grasp"


# --------------------------------------------------------------------------
# views


def _fmt(values) -> str:
    return json.dumps([int(v) for v in values])


def box_view(env: RasterImage, box: BoundingBox, margin: float = 0.5) -> ZoomFrame:
    """Zoomed crop around ``box`` with the box drawn and original-frame ticks."""
    shown = box.clamped(env.width, env.height)
    marked = draw_annotations(env, [Annotation("bbox", shown)])
    frame = crop_with_margin(marked, shown, margin)
    return ZoomFrame(frame.source_box, frame.scale, overlay_ticks(frame.crop, TICK_SPACING, frame))


def point_view(env: RasterImage, point, size: int = POINT_WINDOW) -> ZoomFrame:
    marked = draw_annotations(env, [Annotation("point", (int(point[0]), int(point[1])), extra={"radius": 4})])
    frame = crop_with_margin(marked, point_window(env, point, size), 0.0)
    return ZoomFrame(frame.source_box, frame.scale, overlay_ticks(frame.crop, TICK_SPACING, frame))


def _fit_box(values, env: RasterImage) -> BoundingBox:
    box = BoundingBox.from_list(values)
    if box.x1 < 0 or box.y1 < 0 or box.x0 > env.width - 1 or box.y0 > env.height - 1:
        raise ParseError(f"box {box.as_list()} lies outside the {env.width}x{env.height} image")
    try:
        return box.clamped(env.width, env.height)
    except ValidationError as exc:
        raise ParseError(str(exc)) from exc


def _fit_point(values, env: RasterImage) -> PixelCoord:
    x, y = int(values[0]), int(values[1])
    if not (0 <= x < env.width and 0 <= y < env.height):
        raise ParseError(f"point {(x, y)} lies outside the {env.width}x{env.height} image")
    return PixelCoord(x, y)


def _box_validator(env):
    return lambda payload: _fit_box(payload.body["bbox"], env)


def _point_validator(env):
    return lambda payload: _fit_point(payload.body["point"], env)


# --------------------------------------------------------------------------
# single calls


def checker_verdict(frame: ZoomFrame, box: BoundingBox, target: str, checker, before: BoundingBox | None = None) -> Verdict:
    """One checker call on an already annotated zoom frame."""
    agent = checker if isinstance(checker, Agent) else Agent("checker", checker, channel=f"checker/{target}")
    reply = agent.ask(
        CHECKER_VERIFY_BOX,
        {
            "target": target,
            "before": _fmt(before.as_list()) if before is not None else "(initial estimate)",
            "after": _fmt(box.as_list()),
            "window": _fmt(frame.source_box.as_list()),
            "crop": "[image 1: zoomed view]",
        },
        [frame.crop],
    )
    return Verdict.parse(reply.body)


def point_verdict(frame: ZoomFrame, point, target: str, checker) -> Verdict:
    reply = checker.ask(
        CHECKER_VERIFY_POINT,
        {
            "target": target,
            "point": _fmt(point),
            "window": _fmt(frame.source_box.as_list()),
            "crop": "[image 1: zoomed view]",
        },
        [frame.crop],
    )
    return Verdict.parse(reply.body)


def select_action_point(
    box: BoundingBox,
    purpose: str,
    plan_context: str,
    manager,
    target: str,
    env: RasterImage | None = None,
    margin: float = 0.5,
) -> ActionPoint:
    """Ask the manager for the pixel to act on inside an approved box.

    Grasp points must lie strictly inside the box; an outside reply gets one
    re-ask and then raises :class:`PointOutsideBox`.
    """
    agent = manager if isinstance(manager, Agent) else Agent("ground_manager", manager, channel=f"ground_manager/{target}")
    images = [box_view(env, box, margin).crop] if env is not None else []
    ctx = {
        "crop": "[image 1: zoomed view]" if images else "(not attached)",
        "plan_context": plan_context,
        "target": target,
        "bbox": _fmt(box.as_list()),
        "purpose": purpose,
        "context": "",
    }
    for attempt in range(2):
        reply = agent.ask(MANAGER_ACTION_POINT, ctx, images)
        p = PixelCoord(*reply.body["point"])
        if purpose != "grasp" or box.contains(p, strict=True):
            return ActionPoint(target, p, purpose, box, retries=attempt)
        ctx = {**ctx, "context": f"The point {list(p)} is not inside the box; pick a point strictly inside it.\n"}
    raise PointOutsideBox(f"{target}: grasp point {list(p)} outside {box.as_list()}")


def direct_point(target: str, purpose: str, env: RasterImage, plan, supervisor, env_note: str = "[image 1: environment]") -> ActionPoint:
    """Grounding without a grounding team: the supervisor names the pixel directly."""
    reply = supervisor.ask(
        SUPERVISOR_DIRECT_POINT,
        {"env": env_note, "plan": plan.render(), "target": target, "purpose": purpose},
        [env],
        validate=_point_validator(env),
    )
    return ActionPoint(target, PixelCoord(*reply.body["point"]), purpose, None, reply.retries)


# --------------------------------------------------------------------------
# the loop


def _nudge_toward(box: BoundingBox, frame: ZoomFrame, env: RasterImage) -> BoundingBox:
    cx, cy = frame.source_box.center
    bx, by = box.center
    dx = int(math.copysign(MIN_NUDGE, cx - bx)) if cx != bx else 0
    dy = int(math.copysign(MIN_NUDGE, cy - by)) if cy != by else 0
    if dx == 0 and dy == 0:
        grown = BoundingBox(box.x0 - MIN_NUDGE, box.y0 - MIN_NUDGE, box.x1 + MIN_NUDGE, box.y1 + MIN_NUDGE)
        return grown.clamped(env.width, env.height)
    return box.shifted(dx, dy).clamped(env.width, env.height)


def _init(state: GroundingState, team: GroundingTeam, env, plan, env_note, note: str = ""):
    ctx = {"env": env_note, "plan": plan.render(), "target": state.target, "context": note}
    if state.mode == "object_box":
        reply = team.manager.ask(MANAGER_INIT_BOX, ctx, [env], validate=_box_validator(env))
        state.current_box = _fit_box(reply.body["bbox"], env)
    else:
        reply = team.manager.ask(MANAGER_INIT_POINT, ctx, [env], validate=_point_validator(env))
        state.current_point = _fit_point(reply.body["point"], env)


def _view(state: GroundingState, env, margin) -> ZoomFrame:
    if state.mode == "object_box":
        return box_view(env, state.current_box, margin)
    return point_view(env, state.current_point)


def _mover_ctx(state: GroundingState, frame: ZoomFrame, note: str = "") -> dict:
    ctx = {
        "target": state.target,
        "window": _fmt(frame.source_box.as_list()),
        "crop": "[image 1: zoomed view]",
        "context": note,
    }
    if state.mode == "object_box":
        ctx["bbox"] = _fmt(state.current_box.as_list())
    else:
        ctx["point"] = _fmt(state.current_point)
    return ctx


def _move(state: GroundingState, team: GroundingTeam, frame: ZoomFrame, env, self_check: bool = False):
    """One mover turn.  Returns ``(proposal, done)``; never returns the current geometry."""
    boxed = state.mode == "object_box"
    if boxed:
        spec = MOVER_SELF_CHECK if self_check else MOVER_REVISE_BOX
        validate = _box_validator(env)
    else:
        spec = MOVER_SELF_CHECK_POINT if self_check else MOVER_REVISE_POINT
        validate = _point_validator(env)
    current = state.current_box if boxed else state.current_point
    note = "" if self_check else "The checker asked for a revision.\n"
    for attempt in range(2):
        reply = team.mover.ask(spec, _mover_ctx(state, frame, note), [frame.crop], validate=validate)
        state.mover_calls += 1
        done = bool(reply.body.get("done", False))
        proposal = _fit_box(reply.body["bbox"], env) if boxed else _fit_point(reply.body["point"], env)
        if done or proposal != current:
            return proposal, done
        note = "Your last proposal was identical to the current one. Make a clear adjustment.\n"
    logger.info("%s: mover repeated itself; applying a minimum nudge", state.target)
    if boxed:
        return _nudge_toward(current, frame, env), False
    cx, cy = frame.source_box.center
    dx = int(math.copysign(MIN_NUDGE, cx - current[0])) if cx != current[0] else MIN_NUDGE
    dy = int(math.copysign(MIN_NUDGE, cy - current[1])) if cy != current[1] else 0
    return _fit_point((min(max(current[0] + dx, 0), env.width - 1), min(max(current[1] + dy, 0), env.height - 1)), env), False


def _verdict(state: GroundingState, team: GroundingTeam, frame: ZoomFrame, before) -> Verdict:
    state.checker_calls += 1
    if state.mode == "object_box":
        return checker_verdict(frame, state.current_box, state.target, team.checker, before)
    return point_verdict(frame, state.current_point, state.target, team.checker)


def _refine_with_checker(state, team, env, plan, env_note, cfg: GroundingConfig) -> None:
    before = None
    while True:
        if state.checker_calls >= cfg.max_iters:
            raise GroundingExhausted(state.target, state, "max_iters reached")
        frame = _view(state, env, cfg.margin)
        state.images.append(frame.crop)
        verdict = _verdict(state, team, frame, before)
        state.history.append((state.geometry, verdict))
        if verdict is Verdict.ACCEPT:
            state.approved, state.approved_by = True, "checker"
            return
        if verdict is Verdict.REJECT:
            state.reinits += 1
            if state.reinits > cfg.max_reinits:
                raise GroundingExhausted(state.target, state, "rejected too often")
            rejected = state.geometry
            shown = rejected.as_list() if isinstance(rejected, BoundingBox) else list(rejected)
            _init(state, team, env, plan, env_note,
                  f"An earlier estimate {_fmt(shown)} missed the target entirely. Look again.\n")
            before = None
            continue
        if team.mover is None:
            # no mover: the checker can only confirm or reject the manager's guess
            raise GroundingExhausted(state.target, state, "revision requested but no mover available")
        if state.mover_calls >= cfg.max_iters:
            raise GroundingExhausted(state.target, state, "max_iters reached")
        before = state.current_box
        proposal, _ = _move(state, team, frame, env)
        if state.mode == "object_box":
            state.current_box = proposal
        else:
            state.current_point = proposal


def _refine_self_check(state, team, env, cfg: GroundingConfig) -> None:
    while state.mover_calls < cfg.max_iters:
        frame = _view(state, env, cfg.margin)
        state.images.append(frame.crop)
        proposal, done = _move(state, team, frame, env, self_check=True)
        state.history.append((proposal, Verdict.ACCEPT if done else Verdict.REVISION_NEEDED))
        if state.mode == "object_box":
            state.current_box = proposal
        else:
            state.current_point = proposal
        if done:
            state.approved, state.approved_by = True, "self_check"
            return
    raise GroundingExhausted(state.target, state, "max_iters reached without self-approval")


def ground_target(
    target: str,
    mode: str,
    env: RasterImage,
    plan,
    team: GroundingTeam,
    cfg: GroundingConfig | None = None,
    purpose: str | None = None,
    env_note: str = "[image 1: environment]",
) -> tuple[object, ActionPoint, GroundingState]:
    """Ground one target; returns ``(box or point, action point, final state)``."""
    cfg = cfg or GroundingConfig()
    state = GroundingState(target, mode)
    _init(state, team, env, plan, env_note)
    if team.checker is not None:
        _refine_with_checker(state, team, env, plan, env_note, cfg)
    elif team.mover is not None:
        _refine_self_check(state, team, env, cfg)
    else:
        state.images.append(_view(state, env, cfg.margin).crop)
        state.approved, state.approved_by = True, "manager"
    purpose = purpose or purpose_for(plan, target)
    if mode == "object_box":
        ap = select_action_point(state.current_box, purpose, _plan_context(plan, target), team.manager, target, env, cfg.margin)
    else:
        ap = ActionPoint(target, state.current_point, purpose)
    return state.geometry, ap, state


def _plan_context(plan, target: str) -> str:
    steps = [f"{sg.verb} {sg.object_ref}" + (f" -> {sg.target_ref}" if sg.target_ref else "")
             for sg in plan.subgoals if target in sg.refs]
    return "; ".join(steps) or "(not referenced)"


@dataclass
class GroundingOutcome:
    target: str
    geometry: object = None
    action_point: ActionPoint | None = None
    state: GroundingState | None = None
    team: GroundingTeam | None = None
    error: Exception | None = None


def ground_all(targets, env, plan, backend, cfg: GroundingConfig | None = None, seed: int = 0,
               env_note: str = "[image 1: environment]") -> list[GroundingOutcome]:
    """Ground every target, up to ``cfg.fanout`` at a time; results keep target order.

    Failures are captured per target rather than raised.
    """
    cfg = cfg or GroundingConfig()

    def one(t):
        team = GroundingTeam.for_target(backend, t.name, cfg, seed)
        try:
            geom, ap, state = ground_target(t.name, t.mode, env, plan, team, cfg, env_note=env_note)
            return GroundingOutcome(t.name, geom, ap, state, team)
        except GroundingExhausted as exc:
            return GroundingOutcome(t.name, None, None, exc.state, team, exc)
        except Exception as exc:  # parse exhaustion, point outside box, ...
            return GroundingOutcome(t.name, None, None, None, team, exc)

    targets = list(targets)
    if cfg.fanout <= 1 or len(targets) <= 1:
        return [one(t) for t in targets]
    with ThreadPoolExecutor(max_workers=cfg.fanout) as pool:
        return list(pool.map(one, targets))


# --------------------------------------------------------------------------
# sample-and-select baseline


@dataclass
class PivotConfig:
    samples_per_iter: int = 10
    iterations: int = 3
    parallel_runs: int = 3
    min_radius: float = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.samples_per_iter < 2 or self.iterations < 1 or self.parallel_runs < 1:
            raise ValidationError("need samples_per_iter >= 2, iterations >= 1, parallel_runs >= 1")


@dataclass
class PivotResult:
    point: PixelCoord
    rounds: int  # annotation + selection rounds across all runs
    calls: int  # total backend calls including the final selection
    winners: list[PixelCoord] = field(default_factory=list)
    samples: list[list[np.ndarray]] = field(default_factory=list, repr=False)  # [run][iteration] -> (N, 2)
    radii: list[list[float]] = field(default_factory=list)
    images: list[RasterImage] = field(default_factory=list, repr=False)


def _sample_disk(rng, center, radius, n, width, height) -> np.ndarray:
    out = []
    while len(out) < n:
        r = radius * math.sqrt(rng.random())
        t = rng.uniform(0, 2 * math.pi)
        x, y = center[0] + r * math.cos(t), center[1] + r * math.sin(t)
        xi, yi = int(round(x)), int(round(y))
        if 0 <= xi < width and 0 <= yi < height:
            out.append((xi, yi))
    return np.array(out, dtype=float)


def _labeled(env: RasterImage, pts) -> RasterImage:
    return draw_annotations(
        env, [Annotation("labeled_point", (int(x), int(y)), str(i)) for i, (x, y) in enumerate(pts)]
    )


def _candidates(pts) -> str:
    return json.dumps({str(i): [int(x), int(y)] for i, (x, y) in enumerate(pts)})


def _selection_validator(n: int):
    def check(payload):
        bad = [v for v in payload.body["selected"] if not 0 <= v < n]
        if bad:
            raise ParseError(f"unknown candidate labels {bad}")

    return check


def pivot_ground(target: str, env: RasterImage, backend, cfg: PivotConfig | None = None) -> PivotResult:
    cfg = cfg or PivotConfig()
    W, H = env.width, env.height
    result = PivotResult(PixelCoord(0, 0), 0, 0)
    for run in range(cfg.parallel_runs):
        rng = np.random.default_rng([cfg.seed, run])
        agent = Agent("ground_manager", backend, channel=f"pivot/{slug(target)}/run{run}", seed=cfg.seed)
        mean = ((W - 1) / 2, (H - 1) / 2)
        radius = math.hypot(W, H) / 2
        run_samples, run_radii = [], []
        for _ in range(cfg.iterations):
            pts = _sample_disk(rng, mean, radius, cfg.samples_per_iter, W, H)
            img = _labeled(env, pts)
            result.images.append(img)
            reply = agent.ask(
                PIVOT_SELECT,
                {"target": target, "crop": "[image 1: annotated]", "candidates": _candidates(pts)},
                [img],
                validate=_selection_validator(len(pts)),
            )
            chosen = pts[sorted(set(reply.body["selected"]))]
            mean = tuple(chosen.mean(axis=0))
            spread = float(np.max(np.hypot(chosen[:, 0] - mean[0], chosen[:, 1] - mean[1])))
            radius = max(2 * spread, cfg.min_radius)
            run_samples.append(pts)
            run_radii.append(radius)
            result.rounds += 1
            result.calls += 1
        result.samples.append(run_samples)
        result.radii.append(run_radii)
        result.winners.append(PixelCoord(int(round(mean[0])), int(round(mean[1]))))
    final = Agent("ground_manager", backend, channel=f"pivot/{slug(target)}/final", seed=cfg.seed)
    img = _labeled(env, result.winners)
    reply = final.ask(
        PIVOT_FINAL,
        {"target": target, "crop": "[image 1: annotated]", "candidates": _candidates(result.winners)},
        [img],
        validate=_selection_validator(len(result.winners)),
    )
    result.calls += 1
    result.point = result.winners[reply.body["selected"][0]]
    return result
