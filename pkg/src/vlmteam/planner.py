"""Plan refinement between the supervisor and the verification agent, and
extraction of the grounding target list from an approved plan."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from .agents import Agent, MemoryAgent
from .errors import NotApproved, PlanNotApproved, ValidationError
from .payloads import SUBGOAL_VERBS, TARGET_MODES, fenced
from .prompts import SUPERVISOR_CREATE_PLAN, SUPERVISOR_EXTRACT_TARGETS, SUPERVISOR_REVISE_PLAN, VERIFY_PLAN
from .scene import RasterImage

logger = logging.getLogger(__name__)

DEFAULT_PLAN_ITERS = 5
AREA_WORDS = ("opening", "area", "space", "spot", "slot", "between", "empty", "free")


@dataclass
class TaskPrompt:
    text: str
    images: tuple[RasterImage, ...] = ()
    env_note: str = "[image 1: environment]"


@dataclass
class Subgoal:
    index: int
    verb: str
    object_ref: str
    target_ref: str | None = None
    notes: str = ""

    def __post_init__(self):
        if self.verb not in SUBGOAL_VERBS:
            raise ValidationError(f"unknown subgoal verb {self.verb!r}")

    def to_dict(self) -> dict:
        return {"verb": self.verb, "object": self.object_ref, "target": self.target_ref, "notes": self.notes}

    @property
    def refs(self) -> list[str]:
        return [r for r in (self.object_ref, self.target_ref) if r]


@dataclass
class Plan:
    subgoals: list[Subgoal]
    revision: int = 0
    approved: bool = False
    # "verification" when the verifier said APPROVED, "ablation" when the
    # verifier was switched off and the first plan was taken as-is
    approved_by: str | None = None
    concerns: list[str] = field(default_factory=list)

    def __post_init__(self):
        if [sg.index for sg in self.subgoals] != list(range(len(self.subgoals))):
            raise ValidationError("subgoal indices must run 0, 1, 2, ...")

    @classmethod
    def from_body(cls, body: dict, revision: int = 0) -> "Plan":
        subgoals = [
            Subgoal(i, sg["verb"], sg["object"], sg.get("target"), sg.get("notes", ""))
            for i, sg in enumerate(body["subgoals"])
        ]
        return cls(subgoals, revision)

    def body(self) -> dict:
        return {"subgoals": [sg.to_dict() for sg in self.subgoals]}

    def to_dict(self) -> dict:
        return {
            **self.body(),
            "revision": self.revision,
            "approved": self.approved,
            "approved_by": self.approved_by,
            "concerns": list(self.concerns),
        }

    def render(self) -> str:
        return fenced(self.body())

    def refs(self) -> list[str]:
        out: list[str] = []
        for sg in self.subgoals:
            for r in sg.refs:
                if r not in out:
                    out.append(r)
        return out


@dataclass
class Target:
    name: str
    mode: str

    def __post_init__(self):
        if self.mode not in TARGET_MODES:
            raise ValidationError(f"unknown target mode {self.mode!r}")


@dataclass
class TargetList:
    targets: list[Target]

    def __post_init__(self):
        names = [t.name for t in self.targets]
        if len(set(names)) != len(names):
            raise ValidationError("target names must be unique")

    def __len__(self) -> int:
        return len(self.targets)

    def __iter__(self):
        return iter(self.targets)

    def names(self) -> list[str]:
        return [t.name for t in self.targets]

    def mode_of(self, name: str) -> str:
        for t in self.targets:
            if t.name == name:
                return t.mode
        raise KeyError(name)

    def to_list(self) -> list[dict]:
        return [{"name": t.name, "mode": t.mode} for t in self.targets]


def infer_mode(name: str) -> str:
    """Open areas and container openings are grounded as points, everything else as boxes."""
    words = name.lower().replace("-", " ").replace("_", " ").split()
    return "area_point" if any(w in AREA_WORDS for w in words) else "object_box"


def _agent(backend_or_agent, role: str, seed: int = 0) -> Agent:
    if isinstance(backend_or_agent, Agent):
        return backend_or_agent
    return Agent(role, backend_or_agent, seed=seed)


def plan_loop(
    task: TaskPrompt,
    env: RasterImage,
    supervisor,
    verifier,
    mem: MemoryAgent | None = None,
    max_iters: int = DEFAULT_PLAN_ITERS,
    context: str = "",
) -> Plan:
    """Draft a plan and revise it until the verifier approves.

    ``supervisor`` and ``verifier`` are agents (or backends).  Passing
    ``verifier=None`` skips verification: the first draft is returned marked
    approved by ablation.  ``context`` carries extra information for the first
    draft, e.g. a failure report from a previous attempt.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    sup = _agent(supervisor, "supervisor")
    images = [env, *task.images]
    base = {"task": task.text, "env": task.env_note}
    draft = sup.ask(SUPERVISOR_CREATE_PLAN, {**base, "context": context + "\n" if context else ""}, images)
    plan = Plan.from_body(draft.body)

    if verifier is None:
        plan.approved, plan.approved_by = True, "ablation"
    else:
        ver = _agent(verifier, "verification")
        feedback = ""
        for round_ in range(max_iters):
            reply = ver.ask(VERIFY_PLAN, {**base, "plan": plan.render()}, images)
            if reply.kind == "approval":
                plan.approved, plan.approved_by = True, "verification"
                break
            feedback = reply.body
            plan.concerns.append(feedback)
            logger.info("plan revision %d requested: %s", plan.revision + 1, feedback)
            if round_ == max_iters - 1:
                raise PlanNotApproved(feedback)
            revised = sup.ask(SUPERVISOR_REVISE_PLAN, {**base, "plan": plan.render(), "feedback": feedback}, images)
            concerns = plan.concerns
            plan = Plan.from_body(revised.body, plan.revision + 1)
            plan.concerns = concerns

    if mem is not None:
        mem.store("plan", "subgoals", plan.body()["subgoals"], "supervisor")
        if plan.concerns:
            mem.store("plan", "concerns", list(plan.concerns), "verification")
        mem.complete("plan")
    return plan


def _normalize_targets(plan: Plan, entries: list[dict]) -> TargetList:
    """Reconcile the supervisor's list with the plan: every plan reference
    exactly once, in plan order; unknown extras dropped."""
    given = {}
    for e in entries:
        given.setdefault(e["name"], e.get("mode"))
    out = []
    for name in plan.refs():
        mode = given.get(name)
        if mode is None:
            if name not in given:
                logger.warning("target %r missing from extracted list; added", name)
            mode = infer_mode(name)
        out.append(Target(name, mode))
    dropped = set(given) - set(plan.refs())
    if dropped:
        logger.warning("dropping targets not referenced by the plan: %s", sorted(dropped))
    return TargetList(out)


def extract_targets(plan: Plan, supervisor, mem: MemoryAgent | None = None) -> TargetList:
    if not plan.approved:
        raise NotApproved("targets can only be extracted from an approved plan")
    sup = _agent(supervisor, "supervisor")
    reply = sup.ask(SUPERVISOR_EXTRACT_TARGETS, {"plan": plan.render()})
    targets = _normalize_targets(plan, reply.body["targets"])
    if mem is not None:
        mem.store("targets", "list", targets.to_list(), "supervisor")
        mem.complete("targets")
    return targets
