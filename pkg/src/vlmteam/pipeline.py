"""One full pass of the team: plan, extract targets, ground, compile, execute."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .actuation import ActionPrimitive, compile_actions
from .agents import Agent, MemoryAgent
from .backends.base import observe
from .errors import UnknownSetting, VLMTeamError
from .grounder import GroundingConfig, GroundingOutcome, direct_point, ground_all, purpose_for
from .planner import DEFAULT_PLAN_ITERS, Plan, TargetList, TaskPrompt, extract_targets, plan_loop
from .scene import Calibration, RasterImage, Scene
from .sim import ActionEvent, SimState, execute_actions, goal_check, render

logger = logging.getLogger(__name__)

ROLES = ("supervisor", "verification", "ground_manager", "mover", "checker", "memory")


@dataclass(frozen=True)
class AblationSetting:
    id: int
    verification: bool = True
    ground_manager: bool = True
    checker: bool = True
    mover: bool = True
    memory: bool = True

    def disabled(self) -> list[str]:
        return [r for r in ("verification", "ground_manager", "checker", "mover", "memory") if not getattr(self, r)]


ABLATION_SETTINGS: dict[int, AblationSetting] = {
    0: AblationSetting(0),
    1: AblationSetting(1, verification=False),
    2: AblationSetting(2, checker=False),
    3: AblationSetting(3, verification=False, checker=False),
    4: AblationSetting(4, checker=False, mover=False),
    5: AblationSetting(5, verification=False, checker=False, mover=False),
    6: AblationSetting(6, ground_manager=False, checker=False, mover=False),
    7: AblationSetting(7, verification=False, ground_manager=False, checker=False, mover=False),
    8: AblationSetting(8, memory=False),
}


def get_setting(setting_id) -> AblationSetting:
    try:
        return ABLATION_SETTINGS[int(setting_id)]
    except (KeyError, ValueError, TypeError):
        raise UnknownSetting(f"ablation setting must be 0..8, got {setting_id!r}") from None


@dataclass
class PipelineConfig:
    setting: AblationSetting = field(default_factory=lambda: ABLATION_SETTINGS[0])
    plan_iters: int = DEFAULT_PLAN_ITERS
    grounding_iters: int = 10
    parse_retries: int = 3
    fanout: int = 4
    margin: float = 0.5
    calibration: Calibration = field(default_factory=lambda: Calibration.scaled(0.5))
    seed: int = 0


def apply_ablation(setting, base: PipelineConfig | None = None) -> PipelineConfig:
    """Pipeline configuration with the agents of ``setting`` switched off."""
    s = setting if isinstance(setting, AblationSetting) else get_setting(setting)
    base = base or PipelineConfig()
    return PipelineConfig(
        setting=s,
        plan_iters=base.plan_iters,
        grounding_iters=base.grounding_iters,
        parse_retries=base.parse_retries,
        fanout=base.fanout,
        margin=base.margin,
        calibration=base.calibration,
        seed=base.seed,
    )


@dataclass
class PipelineResult:
    success: bool
    failure_stage: str | None = None
    failure_detail: str = ""
    plan: Plan | None = None
    targets: TargetList | None = None
    grounding: list[GroundingOutcome] = field(default_factory=list)
    direct_points: dict = field(default_factory=dict)
    actions: list[ActionPrimitive] = field(default_factory=list)
    events: list[ActionEvent] = field(default_factory=list)
    goal_report: dict = field(default_factory=dict)
    final_state: SimState | None = None
    env: RasterImage | None = None
    agents: list[Agent] = field(default_factory=list)
    memory: MemoryAgent | None = None

    def call_counts(self) -> dict[str, int]:
        counts = {r: 0 for r in ROLES}
        for a in self.agents:
            counts[a.role] += len(a.transcript)
        if self.memory is not None:
            counts["memory"] = len(self.memory)
        return counts

    def points(self) -> dict:
        out = {o.target: o.action_point for o in self.grounding if o.action_point is not None}
        out.update(self.direct_points)
        return out


def _fail(res: PipelineResult, stage: str, exc) -> PipelineResult:
    res.success, res.failure_stage, res.failure_detail = False, stage, f"{type(exc).__name__}: {exc}"
    logger.info("pipeline failed at %s: %s", stage, res.failure_detail)
    return res


def run_pipeline(
    task: TaskPrompt,
    state: SimState | Scene,
    backend,
    cfg: PipelineConfig | None = None,
    context: str = "",
) -> PipelineResult:
    cfg = cfg or PipelineConfig()
    s = cfg.setting
    state = state if isinstance(state, SimState) else SimState(state.copy())
    observe(backend, state.scene)
    env, depth = render(state)
    res = PipelineResult(False, env=env, final_state=state)

    def agent(role, channel=None):
        a = Agent(role, backend, channel=channel, seed=cfg.seed, max_parse_retries=cfg.parse_retries)
        res.agents.append(a)
        return a

    sup = agent("supervisor")
    ver = agent("verification") if s.verification else None
    mem = MemoryAgent() if s.memory else None
    res.memory = mem

    try:
        res.plan = plan_loop(task, env, sup, ver, mem, cfg.plan_iters, context)
        res.targets = extract_targets(res.plan, sup, mem)
    except VLMTeamError as exc:
        return _fail(res, "plan", exc)

    if s.ground_manager:
        gcfg = GroundingConfig(
            max_iters=cfg.grounding_iters, margin=cfg.margin, use_checker=s.checker, use_mover=s.mover, fanout=cfg.fanout
        )
        res.grounding = ground_all(res.targets, env, res.plan, backend, gcfg, seed=cfg.seed, env_note=task.env_note)
        for o in res.grounding:
            if o.team is not None:
                res.agents.extend(o.team.agents())
        failed = [o for o in res.grounding if o.error is not None]
        if failed:
            return _fail(res, "grounding", failed[0].error)
    else:
        try:
            for t in res.targets:
                res.direct_points[t.name] = direct_point(
                    t.name, purpose_for(res.plan, t.name), env, res.plan, sup, task.env_note
                )
        except VLMTeamError as exc:
            return _fail(res, "grounding", exc)

    points = res.points()
    inline = {"plan.subgoals": res.plan.body()["subgoals"], "targets.list": res.targets.to_list()}
    for name, ap in points.items():
        inline[f"grounding.{name}.point"] = list(ap.to_dict()["point"])
        if mem is not None:
            if ap.box is not None:
                mem.store("grounding", f"{name}.bbox", ap.box.as_list(), "ground_manager")
            mem.store("grounding", f"{name}.point", ap.to_dict()["point"], "ground_manager")
    if mem is not None:
        mem.complete("grounding")

    try:
        res.actions = compile_actions(res.plan, points, mem, sup, cfg.calibration, depth, env, inline)
    except VLMTeamError as exc:
        return _fail(res, "execution", exc)
    if mem is not None:
        mem.store("actions", "list", [a.to_dict() for a in res.actions], "supervisor")
        mem.complete("actions")

    final, events = execute_actions(state, res.actions)
    res.final_state, res.events = final, events
    ok, report = goal_check(final)
    res.goal_report = report
    if not ok:
        codes = [e.code for e in events if not e.ok]
        return _fail(res, "execution", VLMTeamError(f"goal not reached; action failures: {codes or 'none'}"))
    res.success = True
    return res
