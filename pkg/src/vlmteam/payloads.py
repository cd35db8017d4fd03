"""Structured reply formats shared by every agent and every backend.

Multi-field replies travel inside one fenced JSON block.  Two roles use bare
tokens instead: the plan verifier answers ``APPROVED`` or free-text feedback,
and the box checker answers exactly one of ``Accept``, ``Revision Needed`` or
``Reject``.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field

from .errors import ParseError

PAYLOAD_KINDS = (
    "plan",
    "feedback",
    "approval",
    "bbox",
    "point",
    "verdict",
    "action_list",
    "target_list",
    "selection",
)
SUBGOAL_VERBS = (
    "pick",
    "place",
    "push",
    "rotate",
    "move_gripper",
    "remove_lid",
    "trace_path",
    "shake",
)
ACTION_KINDS = ("pick", "place", "push", "trace", "rotate_gripper", "move_to", "shake")
VERDICT_STRINGS = ("Accept", "Revision Needed", "Reject")
APPROVED_TOKEN = "APPROVED"
TARGET_MODES = ("object_box", "area_point")

_FENCE = re.compile(r"```(?:json)?\s*\n?(.*?)```", re.DOTALL)


@dataclass
class ParsedPayload:
    kind: str
    body: object
    retries: int = 0
    raw: str = field(default="", repr=False)


def fenced(obj) -> str:
    return "```json\n" + json.dumps(obj, sort_keys=True) + "\n```"


def _fenced_json(text: str):
    blocks = _FENCE.findall(text)
    if len(blocks) != 1:
        raise ParseError(f"expected exactly one fenced JSON block, found {len(blocks)}")
    try:
        return json.loads(blocks[0])
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON in fenced block: {exc}") from exc


def _int_list(values, n: int, what: str) -> list[int]:
    if not isinstance(values, list) or len(values) != n:
        raise ParseError(f"{what} must be a list of {n} numbers")
    try:
        return [int(round(float(v))) for v in values]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"{what} must contain numbers") from exc


def _parse_plan(text: str) -> dict:
    data = _fenced_json(text)
    subgoals = data.get("subgoals") if isinstance(data, dict) else None
    if not isinstance(subgoals, list) or not subgoals:
        raise ParseError("plan needs a non-empty 'subgoals' list")
    out = []
    for raw in subgoals:
        if not isinstance(raw, dict):
            raise ParseError("each subgoal must be an object")
        verb = raw.get("verb")
        if verb not in SUBGOAL_VERBS:
            raise ParseError(f"unknown subgoal verb {verb!r}")
        obj = raw.get("object")
        if not isinstance(obj, str) or not obj:
            raise ParseError("subgoal needs an 'object' descriptor")
        target = raw.get("target")
        if target is not None and not isinstance(target, str):
            raise ParseError("subgoal 'target' must be a string")
        out.append({"verb": verb, "object": obj, "target": target, "notes": str(raw.get("notes", ""))})
    return {"subgoals": out}


def _parse_bbox(text: str) -> dict:
    data = _fenced_json(text)
    if not isinstance(data, dict) or "bbox" not in data:
        raise ParseError("reply needs a 'bbox' field")
    x0, y0, x1, y1 = _int_list(data["bbox"], 4, "bbox")
    if not (x0 < x1 and y0 < y1):
        raise ParseError(f"degenerate bbox {[x0, y0, x1, y1]}")
    body = {"bbox": [x0, y0, x1, y1]}
    if "done" in data:
        if not isinstance(data["done"], bool):
            raise ParseError("'done' must be a boolean")
        body["done"] = data["done"]
    return body


def _parse_point(text: str) -> dict:
    data = _fenced_json(text)
    if not isinstance(data, dict) or "point" not in data:
        raise ParseError("reply needs a 'point' field")
    body = {"point": _int_list(data["point"], 2, "point")}
    if "done" in data:
        if not isinstance(data["done"], bool):
            raise ParseError("'done' must be a boolean")
        body["done"] = data["done"]
    return body


def _parse_verdict(text: str) -> str:
    t = text.strip()
    if t not in VERDICT_STRINGS:
        raise ParseError(f"verdict must be one of {VERDICT_STRINGS}, got {t[:40]!r}")
    return t


def _parse_actions(text: str) -> dict:
    data = _fenced_json(text)
    actions = data.get("actions") if isinstance(data, dict) else None
    if not isinstance(actions, list) or not actions:
        raise ParseError("reply needs a non-empty 'actions' list")
    for a in actions:
        if not isinstance(a, dict) or a.get("kind") not in ACTION_KINDS:
            raise ParseError(f"bad action entry {a!r}")
        if not isinstance(a.get("target"), str):
            raise ParseError(f"action {a!r} needs a 'target'")
    return {"actions": actions}


def _parse_targets(text: str) -> dict:
    data = _fenced_json(text)
    targets = data.get("targets") if isinstance(data, dict) else None
    if not isinstance(targets, list) or not targets:
        raise ParseError("reply needs a non-empty 'targets' list")
    out = []
    for t in targets:
        if isinstance(t, str):
            t = {"name": t}
        if not isinstance(t, dict) or not isinstance(t.get("name"), str):
            raise ParseError(f"bad target entry {t!r}")
        entry = {"name": t["name"]}
        if t.get("mode") is not None:
            if t["mode"] not in TARGET_MODES:
                raise ParseError(f"unknown target mode {t['mode']!r}")
            entry["mode"] = t["mode"]
        out.append(entry)
    return {"targets": out}


def _parse_selection(text: str) -> dict:
    data = _fenced_json(text)
    sel = data.get("selected") if isinstance(data, dict) else None
    if not isinstance(sel, list) or not sel or not all(isinstance(v, int) for v in sel):
        raise ParseError("reply needs a non-empty integer 'selected' list")
    return {"selected": sel}


def parse_reply(kind: str, text: str) -> ParsedPayload:
    """Parse ``text`` as the payload ``kind``.

    ``kind="feedback"`` (the verifier's channel) yields an ``approval`` payload
    when the reply is exactly the approval token.
    """
    if kind in ("feedback", "approval"):
        t = text.strip()
        if t == APPROVED_TOKEN:
            return ParsedPayload("approval", APPROVED_TOKEN, raw=text)
        if not t:
            raise ParseError("empty verification feedback")
        return ParsedPayload("feedback", t, raw=text)
    parsers = {
        "plan": _parse_plan,
        "bbox": _parse_bbox,
        "point": _parse_point,
        "verdict": _parse_verdict,
        "action_list": _parse_actions,
        "target_list": _parse_targets,
        "selection": _parse_selection,
    }
    if kind not in parsers:
        raise ValueError(f"unknown payload kind {kind!r}")
    return ParsedPayload(kind, parsers[kind](text), raw=text)


def render_reply(kind: str, body) -> str:
    """Inverse of :func:`parse_reply`: the canonical reply text for ``body``."""
    if kind in ("verdict", "feedback", "approval"):
        return str(body)
    return fenced(body)


FORMAT_HINTS = {
    "plan": 'one fenced ```json block: {"subgoals": [{"verb": ..., "object": ..., "target": ..., "notes": ...}]} '
    f"with verb in {list(SUBGOAL_VERBS)}",
    "feedback": f"either exactly {APPROVED_TOKEN} or plain-text feedback describing each issue",
    "bbox": 'one fenced ```json block: {"bbox": [x0, y0, x1, y1]} in original-image pixels',
    "point": 'one fenced ```json block: {"point": [x, y]} in original-image pixels',
    "verdict": "exactly one of: Accept, Revision Needed, Reject (nothing else)",
    "action_list": 'one fenced ```json block: {"actions": [{"kind": ..., "target": ...}]} '
    f"with kind in {list(ACTION_KINDS)}",
    "target_list": 'one fenced ```json block: {"targets": [{"name": ..., "mode": "object_box" | "area_point"}]}',
    "selection": 'one fenced ```json block: {"selected": [label, ...]}',
}
