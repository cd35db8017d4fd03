"""Agent runtime: prompt rendering, per-agent transcripts, reply parsing with
re-asks, and the structured system memory kept by the memory agent."""
from __future__ import annotations

import json
import logging
import string
import time
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .backends.base import BackendRequest, Message
from .errors import ParseError, ParseExhausted, StageOrderViolation, ValidationError
from .payloads import ParsedPayload, parse_reply
from .prompts import AgentSpec, format_hint
from .scene import RasterImage

logger = logging.getLogger(__name__)

STAGES = ("plan", "targets", "grounding", "actions")


@dataclass
class Exchange:
    request: BackendRequest
    prompt_text: str
    reply_text: str
    payload: ParsedPayload
    retries: int = 0
    timestamp: float = field(default=0.0, compare=False)

    @property
    def request_text(self) -> str:
        return self.prompt_text

    @property
    def images(self) -> tuple[RasterImage, ...]:
        for m in self.request.messages:
            if m.role == "user" and m.text == self.prompt_text:
                return m.images
        return ()


@dataclass
class AgentTranscript:
    role: str
    channel: str = ""
    exchanges: list[Exchange] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.exchanges)

    def append(self, ex: Exchange) -> None:
        self.exchanges.append(ex)

    def records(self, run_id: str = "") -> list[dict]:
        out = []
        for i, ex in enumerate(self.exchanges):
            out.append(
                {
                    "run_id": run_id,
                    "agent_role": self.role,
                    "channel": self.channel or self.role,
                    "ordinal": i,
                    "request_text": ex.request_text,
                    "image_refs": [img.sha256()[:16] for img in ex.images],
                    "reply_text": ex.reply_text,
                    "parsed_kind": ex.payload.kind,
                }
            )
        return out


def placeholders(template: str) -> set[str]:
    return {name for _, name, _, _ in string.Formatter().parse(template) if name}


def render(template: str, context: dict) -> str:
    missing = placeholders(template) - set(context)
    if missing:
        raise ValidationError(f"unresolved template placeholders: {sorted(missing)}")
    return template.format_map(context)


def build_request(
    spec: AgentSpec,
    context: dict,
    images: Sequence[RasterImage],
    transcript: AgentTranscript,
    seed: int = 0,
    channel: str | None = None,
) -> BackendRequest:
    ctx = {"context": "", **context}
    system = render(spec.system_template, {"format": format_hint(spec), **ctx})
    messages = [Message("system", system)]
    for ex in transcript.exchanges:
        messages.append(Message("user", ex.request_text))
        messages.append(Message("assistant", ex.reply_text))
    messages.append(Message("user", render(spec.prompt_template, ctx), tuple(images)))
    return BackendRequest(
        agent_role=spec.role,
        messages=tuple(messages),
        temperature=0.0,
        seed=seed,
        channel=channel or transcript.channel or spec.role,
        intent=spec.intent,
    )


def invoke_agent(
    spec: AgentSpec,
    context: dict,
    images: Sequence[RasterImage],
    backend,
    transcript: AgentTranscript,
    seed: int = 0,
    channel: str | None = None,
    validate=None,
) -> ParsedPayload:
    """Render, send, parse; re-ask with a format reminder on malformed replies.

    ``validate`` may raise :class:`ParseError` for replies that parse but are
    unusable (e.g. a grasp point outside the box); those count as retries too.
    """
    req = build_request(spec, context, images, transcript, seed=seed, channel=channel)
    prompt_text = req.user_text
    last_error = None
    for attempt in range(spec.max_parse_retries + 1):
        reply = backend.chat(req)
        try:
            payload = parse_reply(spec.payload_kind, reply.text)
            if validate is not None:
                validate(payload)
        except ParseError as exc:
            last_error = str(exc)
            logger.debug("%s: unusable reply (%s)", req.channel, exc)
            reminder = (
                f"Your previous reply could not be used: {exc}. "
                f"Answer again using exactly this format: {format_hint(spec)}"
            )
            req = BackendRequest(
                agent_role=req.agent_role,
                messages=req.messages + (Message("assistant", reply.text), Message("user", reminder)),
                temperature=req.temperature,
                seed=req.seed,
                channel=req.channel,
                intent=req.intent,
            )
            continue
        payload.retries = attempt
        transcript.append(Exchange(req, prompt_text, reply.text, payload, attempt, time.time()))
        return payload
    raise ParseExhausted(spec.role, spec.max_parse_retries + 1, last_error)


class Agent:
    """One agent instance: a role, a backend handle and its own transcript."""

    def __init__(self, role: str, backend, channel: str | None = None, seed: int = 0, max_parse_retries: int = 3):
        self.role = role
        self.backend = backend
        self.seed = seed
        self.max_parse_retries = max_parse_retries
        self.transcript = AgentTranscript(role, channel or role)

    def ask(self, spec: AgentSpec, context: dict, images: Sequence[RasterImage] = (), validate=None) -> ParsedPayload:
        if spec.role != self.role:
            raise ValueError(f"{self.role} agent cannot run a {spec.role} prompt")
        if spec.max_parse_retries != self.max_parse_retries:
            spec = spec.with_retries(self.max_parse_retries)
        return invoke_agent(spec, context, images, self.backend, self.transcript, seed=self.seed, validate=validate)


# --------------------------------------------------------------------------
# system memory


@dataclass
class MemoryEntry:
    stage: str
    key: str
    value: object
    source_role: str


@dataclass
class SystemMemory:
    entries: list[MemoryEntry] = field(default_factory=list)
    completed: list[str] = field(default_factory=list)
    superseded: list[tuple[str, str]] = field(default_factory=list)

    def get(self, stage: str, key: str, default=None):
        for e in self.entries:
            if e.stage == stage and e.key == key:
                return e.value
        return default


def _check_stage(mem: SystemMemory, stage: str) -> None:
    if stage not in STAGES:
        raise ValueError(f"unknown memory stage {stage!r}")
    for earlier in STAGES[: STAGES.index(stage)]:
        if earlier not in mem.completed:
            raise StageOrderViolation(f"cannot write {stage!r} before {earlier!r} completes")


def memory_update(mem: SystemMemory, stage: str, key: str, value, source_role: str) -> SystemMemory:
    _check_stage(mem, stage)
    for e in mem.entries:
        if e.stage == stage and e.key == key:
            logger.info("memory: %s.%s superseded (was %r)", stage, key, e.value)
            mem.superseded.append((stage, key))
            e.value = value
            e.source_role = source_role
            return mem
    mem.entries.append(MemoryEntry(stage, key, value, source_role))
    return mem


def complete_stage(mem: SystemMemory, stage: str) -> SystemMemory:
    _check_stage(mem, stage)
    if stage not in mem.completed:
        mem.completed.append(stage)
    return mem


def memory_snapshot(mem: SystemMemory, stages: Iterable[str]) -> dict:
    wanted = set(stages)
    out = {}
    for stage in STAGES:
        if stage not in wanted:
            continue
        for e in mem.entries:
            if e.stage == stage:
                out[f"{stage}.{e.key}"] = e.value
    return out


class MemoryAgent:
    """Keeps the system memory; every write is logged in its own transcript.

    Entries are stored as structured values directly; no model call is made.
    """

    role = "memory"

    def __init__(self, mem: SystemMemory | None = None):
        self.memory = mem or SystemMemory()
        self.writes: list[dict] = []

    def __len__(self) -> int:
        return len(self.writes)

    def store(self, stage: str, key: str, value, source_role: str) -> None:
        memory_update(self.memory, stage, key, value, source_role)
        self.writes.append({"stage": stage, "key": key, "source_role": source_role})

    def complete(self, stage: str) -> None:
        complete_stage(self.memory, stage)

    def snapshot(self, stages: Iterable[str] = STAGES) -> dict:
        return memory_snapshot(self.memory, stages)

    def render(self, stages: Iterable[str] = STAGES) -> str:
        return json.dumps(self.snapshot(stages), indent=1, sort_keys=False)

    def records(self, run_id: str = "") -> list[dict]:
        return [
            {
                "run_id": run_id,
                "agent_role": "memory",
                "channel": "memory",
                "ordinal": i,
                "request_text": f"store {w['stage']}.{w['key']} from {w['source_role']}",
                "image_refs": [],
                "reply_text": "stored",
                "parsed_kind": "memory",
            }
            for i, w in enumerate(self.writes)
        ]
