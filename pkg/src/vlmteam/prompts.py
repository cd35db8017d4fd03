"""Prompt specifications for every agent call in the pipeline.

Each ``AgentSpec`` pairs a role with the template for one kind of request.
Scope levels control what an agent may see: task-level agents get the task,
the whole plan and the environment image; subgoal-level agents get the plan
and the environment; target-level agents get only their target descriptor,
the current geometry and a zoomed crop.
"""
from __future__ import annotations

from dataclasses import dataclass

from .payloads import FORMAT_HINTS

SCOPES = ("task_level", "subgoal_level", "target_level")


@dataclass(frozen=True)
class AgentSpec:
    role: str
    intent: str
    scope: str
    system_template: str
    prompt_template: str
    payload_kind: str
    max_parse_retries: int = 3

    def with_retries(self, n: int) -> "AgentSpec":
        return AgentSpec(
            self.role, self.intent, self.scope, self.system_template, self.prompt_template, self.payload_kind, n
        )


_SUPERVISOR_SYSTEM = (
    "Role: supervisor of a robot manipulation team. You own the task-level plan and hand "
    "grounding and control details to other agents.\nReply format: {format}"
)
_VERIFIER_SYSTEM = (
    "Role: plan verifier for a robot manipulation team. You only judge whether the plan is "
    "logical and executable in the pictured environment.\nReply format: {format}"
)
_MANAGER_SYSTEM = (
    "Role: grounding manager. You see the environment and the verified plan. You give rough "
    "locations for targets, two workers refine them on zoomed views, and you pick the final "
    "point of action. All coordinates are original-image pixels (x right, y down).\nReply format: {format}"
)
_MOVER_SYSTEM = (
    "Role: bounding-box mover. You adjust the location and size of one box so it fits its object "
    "tightly. Every revision must change the box noticeably. Coordinates are original-image pixels; "
    "the tick labels on the zoomed view are in that frame.\nReply format: {format}"
)
_CHECKER_SYSTEM = (
    "Role: bounding-box checker. Decide whether a proposed box (or point) is finished, needs more "
    "revision, or misses the target entirely.\n"
    "- Accept: covers the target closely with little extra space.\n"
    "- Revision Needed: touches or covers part of the target but is imprecise.\n"
    "- Reject: does not touch the target at all.\n"
    "Reply format: {format}"
)

SUPERVISOR_CREATE_PLAN = AgentSpec(
    role="supervisor",
    intent="create_plan",
    scope="task_level",
    system_template=_SUPERVISOR_SYSTEM,
    prompt_template=(
        "Task: {task}\n"
        "Environment: {env}\n"
        "{context}"
        "Write a high-level plan as an ordered list of subgoals. Name each object or area with a "
        "short descriptor (an object id such as 'banana', '<container> opening', or 'free table area')."
    ),
    payload_kind="plan",
)

SUPERVISOR_REVISE_PLAN = AgentSpec(
    role="supervisor",
    intent="revise_plan",
    scope="task_level",
    system_template=_SUPERVISOR_SYSTEM,
    prompt_template=(
        "Task: {task}\n"
        "Environment: {env}\n"
        "Current plan:\n{plan}\n"
        "The verifier raised these issues with the current plan:\n{feedback}\n"
        "Revise the plan so that every issue is addressed."
    ),
    payload_kind="plan",
)

SUPERVISOR_EXTRACT_TARGETS = AgentSpec(
    role="supervisor",
    intent="extract_targets",
    scope="task_level",
    system_template=_SUPERVISOR_SYSTEM,
    prompt_template=(
        "Verified plan:\n{plan}\n"
        "List every object and area the plan refers to, each exactly once, in plan order. "
        "Use mode 'area_point' for open areas or container openings and 'object_box' for objects."
    ),
    payload_kind="target_list",
)

SUPERVISOR_COMPILE_ACTIONS = AgentSpec(
    role="supervisor",
    intent="compile_actions",
    scope="task_level",
    system_template=_SUPERVISOR_SYSTEM,
    prompt_template=(
        "System memory (task-relevant facts collected so far):\n{memory}\n"
        "Environment: {env}\n"
        "Turn this into the final sequence of low-level actions, following the plan subgoals in order. "
        "Refer to targets by the names used in memory."
    ),
    payload_kind="action_list",
)

SUPERVISOR_DIRECT_POINT = AgentSpec(
    role="supervisor",
    intent="direct_point",
    scope="task_level",
    system_template=_SUPERVISOR_SYSTEM,
    prompt_template=(
        "Environment: {env}\n"
        "Plan:\n{plan}\n"
        "Target: {target}\n"
        "Purpose: {purpose}\n"
        "Give the pixel where the robot should act on this target."
    ),
    payload_kind="point",
)

VERIFY_PLAN = AgentSpec(
    role="verification",
    intent="verify_plan",
    scope="task_level",
    system_template=_VERIFIER_SYSTEM,
    prompt_template=(
        "Task: {task}\n"
        "Environment: {env}\n"
        "Plan under review:\n{plan}\n"
        "Check the plan for: 1. collision avoidance, 2. physical constraints, 3. missing prerequisite steps. "
        "Reply APPROVED if there is nothing to fix, otherwise describe each issue."
    ),
    payload_kind="feedback",
)

MANAGER_INIT_BOX = AgentSpec(
    role="ground_manager",
    intent="init_box",
    scope="subgoal_level",
    system_template=_MANAGER_SYSTEM,
    prompt_template=(
        "Environment: {env}\n"
        "Verified plan:\n{plan}\n"
        "Current target: {target}\n"
        "{context}"
        "Give an approximate bounding box for the target."
    ),
    payload_kind="bbox",
)

MANAGER_INIT_POINT = AgentSpec(
    role="ground_manager",
    intent="init_point",
    scope="subgoal_level",
    system_template=_MANAGER_SYSTEM,
    prompt_template=(
        "Environment: {env}\n"
        "Verified plan:\n{plan}\n"
        "Current target: {target}\n"
        "{context}"
        "This target is an area, not an object. Give an approximate point inside it."
    ),
    payload_kind="point",
)

MANAGER_ACTION_POINT = AgentSpec(
    role="ground_manager",
    intent="action_point",
    scope="subgoal_level",
    system_template=_MANAGER_SYSTEM,
    prompt_template=(
        "Zoomed view of the approved box: {crop}\n"
        "Plan context: {plan_context}\n"
        "Current target: {target}\n"
        "Approved bounding box: {bbox}\n"
        "Purpose: {purpose}\n"
        "{context}"
        "Give the point of action for this purpose."
    ),
    payload_kind="point",
)

MOVER_REVISE_BOX = AgentSpec(
    role="mover",
    intent="move_box",
    scope="target_level",
    system_template=_MOVER_SYSTEM,
    prompt_template=(
        "Object: {target}\n"
        "Current bounding box: {bbox}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "{context}"
        "Propose a revised bounding box."
    ),
    payload_kind="bbox",
)

MOVER_SELF_CHECK = AgentSpec(
    role="mover",
    intent="self_check_box",
    scope="target_level",
    system_template=_MOVER_SYSTEM,
    prompt_template=(
        "Object: {target}\n"
        "Current bounding box: {bbox}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "{context}"
        "No separate checker is available. Propose a revised box, and set \"done\": true "
        "(returning the current box) if it already fits the object."
    ),
    payload_kind="bbox",
)

MOVER_REVISE_POINT = AgentSpec(
    role="mover",
    intent="move_point",
    scope="target_level",
    system_template=_MOVER_SYSTEM,
    prompt_template=(
        "Area: {target}\n"
        "Current point: {point}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "{context}"
        "Propose a revised point that lies well inside the area."
    ),
    payload_kind="point",
)

MOVER_SELF_CHECK_POINT = AgentSpec(
    role="mover",
    intent="self_check_point",
    scope="target_level",
    system_template=_MOVER_SYSTEM,
    prompt_template=(
        "Area: {target}\n"
        "Current point: {point}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "{context}"
        "No separate checker is available. Propose a revised point, and set \"done\": true "
        "(returning the current point) if it already lies well inside the area."
    ),
    payload_kind="point",
)

CHECKER_VERIFY_BOX = AgentSpec(
    role="checker",
    intent="check_box",
    scope="target_level",
    system_template=_CHECKER_SYSTEM,
    prompt_template=(
        "Object: {target}\n"
        "Box before revision: {before}\n"
        "Box after revision: {after}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "Is the revised box acceptable, and if so is it final?"
    ),
    payload_kind="verdict",
)

CHECKER_VERIFY_POINT = AgentSpec(
    role="checker",
    intent="check_point",
    scope="target_level",
    system_template=_CHECKER_SYSTEM,
    prompt_template=(
        "Area: {target}\n"
        "Proposed point: {point}\n"
        "Zoomed view covering original pixels {window}: {crop}\n"
        "Does the marked point lie well inside the area?"
    ),
    payload_kind="verdict",
)

PIVOT_SELECT = AgentSpec(
    role="ground_manager",
    intent="pivot_select",
    scope="subgoal_level",
    system_template=(
        "Role: visual point selector. Numbered candidate points are drawn on the image; pick the "
        "ones most likely to lie on the target.\nReply format: {format}"
    ),
    prompt_template=(
        "Target: {target}\n"
        "Annotated image: {crop}\n"
        "Candidates (label: x, y): {candidates}\n"
        "Select the most promising candidates."
    ),
    payload_kind="selection",
)

PIVOT_FINAL = AgentSpec(
    role="ground_manager",
    intent="pivot_final",
    scope="subgoal_level",
    system_template=PIVOT_SELECT.system_template,
    prompt_template=(
        "Target: {target}\n"
        "Annotated image: {crop}\n"
        "Candidates (label: x, y): {candidates}\n"
        "Select the single best candidate."
    ),
    payload_kind="selection",
)


def format_hint(spec: AgentSpec) -> str:
    return FORMAT_HINTS[spec.payload_kind]
