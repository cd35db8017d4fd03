"""Multi-agent vision-language planning for tabletop and navigation tasks.

A supervisor drafts a plan that a verifier audits, a grounding team turns
every referenced object or area into pixel coordinates, and the supervisor
compiles the result into robot primitives.  Everything runs against
pluggable chat backends, including a deterministic scripted oracle and a 2D
simulator for offline verification.
"""
from importlib.resources import files

from .backends import HttpBackend, OracleConfig, RecordingBackend, ReplayBackend, ScriptedOracle, record_replay
from .errors import VLMTeamError
from .pipeline import ABLATION_SETTINGS, AblationSetting, PipelineConfig, apply_ablation, run_pipeline
from .planner import Plan, Subgoal, TargetList, TaskPrompt, extract_targets, plan_loop
from .scene import BoundingBox, PixelCoord, RasterImage, Scene, load_scene, object_bbox

__version__ = "0.1.0"


def data_path(name: str):
    """Path of a bundled data file (scenes, the home map)."""
    return files(__package__) / "data" / name


__all__ = [
    "ABLATION_SETTINGS",
    "AblationSetting",
    "BoundingBox",
    "HttpBackend",
    "OracleConfig",
    "PipelineConfig",
    "PixelCoord",
    "Plan",
    "RasterImage",
    "RecordingBackend",
    "ReplayBackend",
    "Scene",
    "ScriptedOracle",
    "Subgoal",
    "TargetList",
    "TaskPrompt",
    "VLMTeamError",
    "apply_ablation",
    "data_path",
    "extract_targets",
    "load_scene",
    "object_bbox",
    "plan_loop",
    "record_replay",
    "run_pipeline",
]
