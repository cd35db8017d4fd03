"""Record/replay cassettes for chat backends.

A cassette is JSONL, one exchange per line::

    {"ordinal": 0, "agent_role": "checker", "channel": "checker/banana",
     "request_sha256": "...", "reply_text": "Accept"}

Replies are matched by ``(channel, ordinal)``, where the ordinal counts
requests on that channel.  A digest mismatch (an edited prompt) is logged
but the recorded reply is still served.
"""
from __future__ import annotations

import json
import logging
import threading
from collections import defaultdict
from pathlib import Path

from ..errors import ReplayMiss, VLMTeamError
from .base import BackendReply, BackendRequest

logger = logging.getLogger(__name__)


class IOFailure(VLMTeamError):
    pass


class RecordingBackend:
    def __init__(self, inner, cassette):
        self.inner = inner
        self.path = Path(cassette)
        self._lock = threading.Lock()
        self._ordinals: dict[str, int] = defaultdict(int)
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")
        except OSError as exc:
            raise IOFailure(f"cannot write cassette {self.path}: {exc}") from exc

    def observe(self, scene) -> None:
        hook = getattr(self.inner, "observe", None)
        if hook is not None:
            hook(scene)

    def chat(self, req: BackendRequest) -> BackendReply:
        with self._lock:
            ordinal = self._ordinals[req.channel]
            self._ordinals[req.channel] += 1
        reply = self.inner.chat(req)
        line = {
            "ordinal": ordinal,
            "agent_role": req.agent_role,
            "channel": req.channel,
            "request_sha256": req.digest(),
            "reply_text": reply.text,
        }
        with self._lock:
            try:
                with self.path.open("a") as fh:
                    fh.write(json.dumps(line, sort_keys=True) + "\n")
            except OSError as exc:
                raise IOFailure(f"cannot append to {self.path}: {exc}") from exc
        return reply


class ReplayBackend:
    def __init__(self, cassette):
        self.path = Path(cassette)
        self._lock = threading.Lock()
        self._ordinals: dict[str, int] = defaultdict(int)
        self._entries: dict[tuple[str, int], dict] = {}
        self.mismatches: list[tuple[str, int]] = []
        try:
            lines = self.path.read_text().splitlines() if self.path.exists() else []
        except OSError as exc:
            raise IOFailure(f"cannot read cassette {self.path}: {exc}") from exc
        for raw in lines:
            if raw.strip():
                e = json.loads(raw)
                channel = e.get("channel") or e["agent_role"]
                self._entries[(channel, int(e["ordinal"]))] = e

    def __len__(self) -> int:
        return len(self._entries)

    def chat(self, req: BackendRequest) -> BackendReply:
        with self._lock:
            ordinal = self._ordinals[req.channel]
            self._ordinals[req.channel] += 1
        entry = self._entries.get((req.channel, ordinal))
        if entry is None:
            raise ReplayMiss(f"no recorded reply for {req.channel!r} #{ordinal}")
        if entry["request_sha256"] != req.digest():
            logger.warning("cassette digest mismatch for %s #%d; serving recorded reply", req.channel, ordinal)
            self.mismatches.append((req.channel, ordinal))
        return BackendReply(text=entry["reply_text"])


def record_replay(cassette, inner=None, mode: str | None = None):
    """Wrap ``inner`` to record into ``cassette``, or replay it when ``inner`` is None."""
    mode = mode or ("record" if inner is not None else "replay")
    if mode == "record":
        if inner is None:
            raise ValueError("record mode needs an inner backend")
        return RecordingBackend(inner, cassette)
    if mode == "replay":
        return ReplayBackend(cassette)
    raise ValueError(f"unknown cassette mode {mode!r}")
