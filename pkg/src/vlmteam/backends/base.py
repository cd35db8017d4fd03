"""Request/reply types common to every chat backend."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Protocol

from ..errors import ValidationError
from ..scene import RasterImage

AGENT_ROLES = ("supervisor", "verification", "ground_manager", "mover", "checker", "memory")
MESSAGE_ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class Message:
    role: str
    text: str
    images: tuple[RasterImage, ...] = ()


@dataclass(frozen=True)
class BackendRequest:
    agent_role: str
    messages: tuple[Message, ...]
    temperature: float = 0.0
    seed: int = 0
    # Agent instance the request belongs to, e.g. "mover/banana"; replay
    # ordinals are counted per channel so concurrent targets stay matchable.
    channel: str = ""
    # What the caller is asking for ("create_plan", "check_box", ...).  Only
    # the scripted oracle reads it; wire backends ignore it.
    intent: str = ""

    def __post_init__(self):
        if self.agent_role not in AGENT_ROLES:
            raise ValidationError(f"unknown agent role {self.agent_role!r}")
        if not self.messages:
            raise ValidationError("request needs at least one message")
        if self.messages[0].role != "system":
            raise ValidationError("first message must be the system message")
        for m in self.messages:
            if m.role not in MESSAGE_ROLES:
                raise ValidationError(f"unknown message role {m.role!r}")
        if not self.channel:
            object.__setattr__(self, "channel", self.agent_role)

    @property
    def user_text(self) -> str:
        """Text of the last user message (the current prompt)."""
        for m in reversed(self.messages):
            if m.role == "user":
                return m.text
        return ""

    @property
    def all_images(self) -> list[RasterImage]:
        return [img for m in self.messages for img in m.images]

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(f"{self.agent_role}|{self.channel}|{self.temperature}|{self.seed}".encode())
        for m in self.messages:
            h.update(f"\x00{m.role}\x00{m.text}".encode())
            for img in m.images:
                h.update(img.sha256().encode())
        return h.hexdigest()


@dataclass(frozen=True)
class BackendReply:
    text: str
    usage: dict = field(default_factory=dict)
    latency_ms: float = 0.0


class Backend(Protocol):
    def chat(self, req: BackendRequest) -> BackendReply: ...


def chat(backend: Backend, req: BackendRequest) -> BackendReply:
    return backend.chat(req)


def observe(backend, scene) -> None:
    """Tell a ground-truth-aware backend (the oracle) about the current world state."""
    hook = getattr(backend, "observe", None)
    if hook is not None:
        hook(scene)
