"""Evaluation protocols, ablation batches and the checker confusion matrix."""
from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .agents import Agent
from .backends.base import observe
from .errors import UnlabeledFixture, ValidationError
from .grounder import box_view, checker_verdict
from .pipeline import ROLES, AblationSetting, PipelineConfig, PipelineResult, apply_ablation, run_pipeline
from .planner import TaskPrompt
from .scene import Scene
from .sim import EXPECTED_VERDICT, FIXTURE_CLASSES, LabeledBox, SimState, render

PROTOCOL_MODES = ("open_loop", "closed_loop")
VERDICT_COLUMNS = ("Accept", "Revision Needed", "Reject")


@dataclass(frozen=True)
class ProtocolSpec:
    mode: str = "open_loop"
    runs: int = 1
    max_replans: int = 0

    def __post_init__(self):
        if self.mode not in PROTOCOL_MODES:
            raise ValidationError(f"protocol mode must be one of {PROTOCOL_MODES}")
        if self.mode == "open_loop" and self.max_replans != 0:
            raise ValidationError("open-loop runs cannot replan")
        if self.runs < 1 or self.max_replans < 0:
            raise ValidationError("runs must be >= 1 and max_replans >= 0")

    @classmethod
    def closed_loop(cls, runs: int = 1, max_replans: int = 3) -> "ProtocolSpec":
        return cls("closed_loop", runs, max_replans)


@dataclass
class RunResult:
    task_id: str
    seed: int
    setting: int
    success: bool
    failure_stage: str | None = None
    replans_used: int = 0
    call_counts: dict[str, int] = field(default_factory=dict)
    wall_time: float = 0.0
    attempts: list[PipelineResult] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        if self.success and self.failure_stage is not None:
            raise ValidationError("a successful run has no failure stage")

    def to_row(self) -> dict:
        row = {
            "task_id": self.task_id,
            "setting": self.setting,
            "seed": self.seed,
            "success": int(self.success),
            "failure_stage": self.failure_stage or "",
            "replans_used": self.replans_used,
        }
        row.update({f"calls_{r}": self.call_counts.get(r, 0) for r in ROLES})
        row["wall_time_s"] = round(self.wall_time, 4)
        return row


def failure_report(res: PipelineResult) -> str:
    lines = [f"A previous attempt failed during the {res.failure_stage} stage: {res.failure_detail}"]
    if res.events:
        lines.append("Simulator event log:")
        lines.extend(json.dumps(e.to_dict(), sort_keys=True) for e in res.events)
    return "\n".join(lines)


def run_episode(
    task: TaskPrompt,
    scene: Scene,
    backend,
    cfg: PipelineConfig,
    proto: ProtocolSpec,
    seed: int = 0,
    task_id: str = "task",
) -> RunResult:
    """One run under ``proto``: a single attempt, or attempts until success or the replan cap."""
    t0 = time.perf_counter()
    state = SimState(scene.copy())
    attempts: list[PipelineResult] = []
    context = ""
    max_attempts = 1 + (proto.max_replans if proto.mode == "closed_loop" else 0)
    for _ in range(max_attempts):
        res = run_pipeline(task, state, backend, cfg, context)
        attempts.append(res)
        if res.success:
            break
        # the world keeps whatever the failed attempt did; the gripper lets go
        state = res.final_state.copy() if res.final_state is not None else state
        state.held, state.pen_down = None, False
        context = failure_report(res)
    last = attempts[-1]
    counts = {r: 0 for r in ROLES}
    for a in attempts:
        for role, n in a.call_counts().items():
            counts[role] += n
    return RunResult(
        task_id=task_id,
        seed=seed,
        setting=cfg.setting.id,
        success=last.success,
        failure_stage=None if last.success else last.failure_stage,
        replans_used=len(attempts) - 1,
        call_counts=counts,
        wall_time=time.perf_counter() - t0,
        attempts=attempts,
    )


def run_protocol(
    task: TaskPrompt,
    scene: Scene,
    backend_factory,
    setting: AblationSetting | int,
    proto: ProtocolSpec,
    seed: int = 0,
    base: PipelineConfig | None = None,
    task_id: str = "task",
) -> list[RunResult]:
    """``proto.runs`` runs with seeds ``seed, seed+1, ...``; each gets a fresh backend from ``backend_factory(seed)``."""
    out = []
    for i in range(proto.runs):
        run_seed = seed + i
        cfg = apply_ablation(setting, base)
        cfg.seed = run_seed
        out.append(run_episode(task, scene, backend_factory(run_seed), cfg, proto, run_seed, task_id))
    return out


def success_rate(results: list[RunResult]) -> float:
    return sum(r.success for r in results) / len(results) if results else 0.0


def write_results_csv(results: list[RunResult], path) -> None:
    rows = [r.to_row() for r in results]
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)


def summary_markdown(results: list[RunResult]) -> str:
    from .pipeline import ABLATION_SETTINGS

    by_setting: dict[int, list[RunResult]] = {}
    for r in results:
        by_setting.setdefault(r.setting, []).append(r)
    lines = [
        "| Setting | Verification | Manager | Checker | Mover | Memory | Runs | Success rate |",
        "|---|---|---|---|---|---|---|---|",
    ]
    for sid in sorted(by_setting):
        s = ABLATION_SETTINGS[sid]
        flags = ["on" if getattr(s, f) else "off" for f in ("verification", "ground_manager", "checker", "mover", "memory")]
        rs = by_setting[sid]
        lines.append(f"| {sid} | " + " | ".join(flags) + f" | {len(rs)} | {100 * success_rate(rs):.0f}% |")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# checker confusion matrix


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # (4, 3): rows ground-truth classes, columns verdicts
    rows: tuple[str, ...] = FIXTURE_CLASSES
    cols: tuple[str, ...] = VERDICT_COLUMNS

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(sum(self.counts[i, self.cols.index(EXPECTED_VERDICT[c])] for i, c in enumerate(self.rows)))

    @property
    def accuracy(self) -> float:
        return self.correct / self.total if self.total else 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["ground_truth", *self.cols])
        for name, row in zip(self.rows, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = ["| Ground truth | " + " | ".join(self.cols) + " |", "|---|" + "---|" * len(self.cols)]
        for name, row in zip(self.rows, self.counts):
            lines.append(f"| {name} | " + " | ".join(str(int(v)) for v in row) + " |")
        lines.append(f"\nAccuracy: {100 * self.accuracy:.0f}% ({self.correct}/{self.total})")
        return "\n".join(lines) + "\n"


def confusion_matrix(fixtures: list[LabeledBox], backend, margin: float = 0.5) -> ConfusionMatrix:
    counts = np.zeros((len(FIXTURE_CLASSES), len(VERDICT_COLUMNS)), dtype=int)
    for i, fx in enumerate(fixtures):
        if fx.label not in FIXTURE_CLASSES:
            raise UnlabeledFixture(f"fixture {i} has label {fx.label!r}")
        observe(backend, fx.scene)
        env, _ = render(fx.scene)
        frame = box_view(env, fx.box, margin)
        checker = Agent("checker", backend, channel=f"checker/fixture{i}")
        verdict = checker_verdict(frame, fx.box, fx.target, checker)
        counts[FIXTURE_CLASSES.index(fx.label), VERDICT_COLUMNS.index(verdict.value)] += 1
    return ConfusionMatrix(counts)
