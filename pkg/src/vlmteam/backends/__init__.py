"""Chat backends: live HTTP, record/replay cassettes and the scripted oracle."""
from .base import AGENT_ROLES, Backend, BackendReply, BackendRequest, Message, chat, observe
from .http import HttpBackend
from .oracle import OracleConfig, ScriptedOracle
from .replay import IOFailure, RecordingBackend, ReplayBackend, record_replay

__all__ = [
    "AGENT_ROLES",
    "Backend",
    "BackendReply",
    "BackendRequest",
    "HttpBackend",
    "IOFailure",
    "Message",
    "OracleConfig",
    "RecordingBackend",
    "ReplayBackend",
    "ScriptedOracle",
    "chat",
    "observe",
    "record_replay",
]
