"""Command-line entry points.

    vlmteam run --config run.toml [--seed N] [--ablation ID]
    vlmteam eval --config eval.toml
    vlmteam replay --dir runs/lid
    vlmteam render --scene scene.json --ticks 50
    vlmteam confusion [--per-class 25] [--noise 0.0]
    vlmteam nav [--map home_map.json]

Exit codes: 0 success, 1 task failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import shutil
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import data_path
from .backends import HttpBackend, OracleConfig, RecordingBackend, ReplayBackend, ScriptedOracle
from .errors import ConfigError, UnknownSetting, VLMTeamError
from .evaluation import (
    ProtocolSpec,
    RunResult,
    confusion_matrix,
    run_episode,
    run_protocol,
    summary_markdown,
    write_results_csv,
)
from .grounder import slug
from .imaging import overlay_ticks
from .nav import approach_point, load_map, plan_path, render_path
from .pipeline import PipelineConfig, apply_ablation, get_setting
from .planner import TaskPrompt
from .scene import Calibration, RasterImage, Scene, load_scene
from .sim import render, verdict_fixtures

logger = logging.getLogger("vlmteam")

BACKEND_KINDS = ("oracle", "http", "replay")
EXIT_OK, EXIT_TASK_FAILURE, EXIT_CONFIG = 0, 1, 2
_ORACLE_KEYS = {f.name for f in dataclasses.fields(OracleConfig)} - {"scene"}


# --------------------------------------------------------------------------
# configuration


@dataclasses.dataclass
class RunConfig:
    scene_path: Path
    scene: Scene
    task: TaskPrompt
    backend: dict
    caps: dict
    ablation: int
    protocol: ProtocolSpec
    seed: int
    artifact_dir: Path
    task_id: str
    eval: dict
    raw: dict
    base: Path = Path(".")


def _resolve(path: str, base: Path) -> Path:
    p = Path(path)
    if not p.is_absolute():
        cand = base / p
        if cand.exists():
            return cand
        bundled = Path(str(data_path(p.name)))
        if bundled.exists():
            return bundled
        return cand
    return p


def parse_config(raw: dict, base: Path) -> RunConfig:
    try:
        task_raw = raw["task"]
        scene_path = _resolve(task_raw["scene"], base)
        if not scene_path.exists():
            raise ConfigError(f"scene file not found: {scene_path}")
        scene = load_scene(scene_path)
        image_paths = [_resolve(img, base) for img in task_raw.get("images", [])]
        for ip in image_paths:
            if not ip.exists():
                raise ConfigError(f"prompt image not found: {ip}")
        images = [RasterImage.load_png(ip) for ip in image_paths]
        task = TaskPrompt(str(task_raw["text"]), tuple(images))
        backend = dict(raw.get("backend", {}))
        kind = backend.get("kind")
        if kind not in BACKEND_KINDS:
            raise ConfigError(f"backend.kind must be one of {BACKEND_KINDS}, got {kind!r}")
        others = [k for k in BACKEND_KINDS if k != kind and k in backend]
        if others:
            raise ConfigError(f"backend.kind is {kind!r} but blocks for {others} are also present")
        secrets = {"api_key", "token", "secret"} & set(backend.get("http", {}))
        if secrets:
            raise ConfigError(f"credentials go in an environment variable named by api_key_env, not {sorted(secrets)}")
        proto_raw = raw.get("protocol", {})
        protocol = ProtocolSpec(
            mode=proto_raw.get("mode", "open_loop"),
            runs=int(proto_raw.get("runs", 1)),
            max_replans=int(proto_raw.get("max_replans", 3 if proto_raw.get("mode") == "closed_loop" else 0)),
        )
        ablation = int(raw.get("ablation", 0))
        get_setting(ablation)
        return RunConfig(
            scene_path=scene_path,
            scene=scene,
            task=task,
            backend=backend,
            caps=dict(raw.get("caps", {})),
            ablation=ablation,
            protocol=protocol,
            seed=int(raw.get("seed", 0)),
            artifact_dir=base / Path(raw.get("artifact_dir", "runs/latest")),
            task_id=str(raw.get("task_id", scene_path.stem)),
            eval=dict(raw.get("eval", {})),
            raw=raw,
            base=base,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError, VLMTeamError) as exc:
        raise ConfigError(f"invalid config: {type(exc).__name__}: {exc}") from exc


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = tomllib.loads(path.read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"config not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return parse_config(raw, path.parent)


def oracle_config(cfg: RunConfig, seed: int, scene: Scene | None = None) -> OracleConfig:
    params = dict(cfg.backend.get("oracle", {}))
    unknown = set(params) - _ORACLE_KEYS
    if unknown:
        raise ConfigError(f"unknown oracle parameters: {sorted(unknown)}")
    params["seed"] = seed
    try:
        return OracleConfig(scene=scene or cfg.scene, **params)
    except (TypeError, VLMTeamError) as exc:
        raise ConfigError(f"invalid oracle parameters: {exc}") from exc


def make_backend(cfg: RunConfig, seed: int):
    kind = cfg.backend["kind"]
    if kind == "oracle":
        return ScriptedOracle(oracle_config(cfg, seed))
    if kind == "http":
        h = cfg.backend.get("http", {})
        try:
            return HttpBackend(
                endpoint=h["endpoint"],
                model=h["model"],
                api_key_env=h.get("api_key_env", "OPENAI_API_KEY"),
                timeout=float(h.get("timeout", 120.0)),
                max_retries=int(h.get("max_retries", 3)),
            )
        except KeyError as exc:
            raise ConfigError(f"backend.http needs {exc}") from exc
    cassette = cfg.backend.get("replay", {}).get("cassette")
    if not cassette:
        raise ConfigError("backend.replay needs a cassette path")
    path = Path(cassette)
    if not path.exists():
        raise ConfigError(f"cassette not found: {path}")
    return ReplayBackend(path)


def pipeline_config(cfg: RunConfig, ablation: int, seed: int) -> PipelineConfig:
    caps = cfg.caps
    base = PipelineConfig(
        plan_iters=int(caps.get("plan_iters", 5)),
        grounding_iters=int(caps.get("grounding_iters", 10)),
        parse_retries=int(caps.get("parse_retries", 3)),
        fanout=int(caps.get("fanout", 4)),
        calibration=Calibration.scaled(float(caps.get("mm_per_px", 0.5))),
        seed=seed,
    )
    return apply_ablation(ablation, base)


# --------------------------------------------------------------------------
# artifacts


def _attempt_summary(res) -> dict:
    return {
        "success": res.success,
        "failure_stage": res.failure_stage,
        "failure_detail": res.failure_detail,
        "plan": res.plan.to_dict() if res.plan else None,
        "targets": res.targets.to_list() if res.targets else None,
        "grounding": {o.target: _grounding_entry(o) for o in res.grounding},
        "direct_points": {k: v.to_dict() for k, v in res.direct_points.items()},
        "actions": [a.to_dict() for a in res.actions],
        "events": [e.to_dict() for e in res.events],
        "goal_report": res.goal_report,
        "call_counts": res.call_counts(),
    }


def _grounding_entry(o) -> dict:
    entry = o.state.to_dict() if o.state is not None else {"target": o.target}
    entry["action_point"] = o.action_point.to_dict() if o.action_point else None
    entry["error"] = f"{type(o.error).__name__}: {o.error}" if o.error else None
    return entry


def run_summary(result: RunResult) -> dict:
    """Everything in run.json; free of timings and backend identity so a replay matches byte for byte."""
    return {
        "task_id": result.task_id,
        "seed": result.seed,
        "setting": result.setting,
        "success": result.success,
        "failure_stage": result.failure_stage,
        "replans_used": result.replans_used,
        "call_counts": result.call_counts,
        "attempts": [_attempt_summary(a) for a in result.attempts],
    }


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n")


def write_artifacts(out: Path, result: RunResult, scene: Scene) -> None:
    out.mkdir(parents=True, exist_ok=True)
    last = result.attempts[-1]
    _dump(out / "run.json", run_summary(result))
    _dump(out / "plan.json", last.plan.to_dict() if last.plan else None)
    _dump(out / "grounding.json", {o.target: _grounding_entry(o) for o in last.grounding}
          or {k: v.to_dict() for k, v in last.direct_points.items()})
    _dump(out / "actions.json", [a.to_dict() for a in last.actions])
    with open(out / "events.jsonl", "w") as fh:
        for i, att in enumerate(result.attempts):
            for e in att.events:
                fh.write(json.dumps({"attempt": i, **e.to_dict()}, sort_keys=True) + "\n")
    tdir = out / "transcripts"
    if tdir.exists():
        shutil.rmtree(tdir)
    tdir.mkdir()
    run_id = f"{result.task_id}-s{result.seed}"
    per_channel: dict[str, list[dict]] = {}
    for att in result.attempts:
        for agent in att.agents:
            per_channel.setdefault(agent.transcript.channel, []).extend(agent.transcript.records(run_id))
        if att.memory is not None:
            per_channel.setdefault("memory", []).extend(att.memory.records(run_id))
    for channel, records in per_channel.items():
        with open(tdir / f"{slug(channel)}.jsonl", "w") as fh:
            for i, rec in enumerate(records):
                fh.write(json.dumps({**rec, "ordinal": i}, sort_keys=True) + "\n")
    idir = out / "images"
    if idir.exists():
        shutil.rmtree(idir)
    before, _ = render(scene)
    before.save_png(idir / "before.png")
    if last.final_state is not None:
        render(last.final_state)[0].save_png(idir / "after.png")
    for o in last.grounding:
        if o.state is None:
            continue
        for i, img in enumerate(o.state.images):
            img.save_png(idir / slug(o.target) / f"{i}.png")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# commands


def cmd_run(config, seed: int | None = None, ablation: int | None = None, out: Path | None = None) -> int:
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    seed = cfg.seed if seed is None else seed
    ablation = cfg.ablation if ablation is None else ablation
    get_setting(ablation)
    out = Path(out) if out is not None else cfg.artifact_dir
    out.mkdir(parents=True, exist_ok=True)
    backend = make_backend(cfg, seed)
    if cfg.backend["kind"] == "replay":
        src = Path(cfg.backend["replay"]["cassette"]).resolve()
        if src != (out / "cassette.jsonl").resolve():
            shutil.copyfile(src, out / "cassette.jsonl")
    else:
        backend = RecordingBackend(backend, out / "cassette.jsonl")
    resolved = dict(cfg.raw)
    resolved.update({"seed": seed, "ablation": ablation, "task_id": cfg.task_id})
    resolved["task"] = {
        **cfg.raw["task"],
        "scene": str(cfg.scene_path.resolve()),
        "images": [str(_resolve(i, cfg.base).resolve()) for i in cfg.raw["task"].get("images", [])],
    }
    _dump(out / "config.json", resolved)
    pcfg = pipeline_config(cfg, ablation, seed)
    result = run_episode(cfg.task, cfg.scene, backend, pcfg, cfg.protocol, seed, cfg.task_id)
    write_artifacts(out, result, cfg.scene)
    status = "success" if result.success else f"failure ({result.failure_stage})"
    print(f"{cfg.task_id} seed={seed} setting={ablation}: {status}, replans={result.replans_used}; artifacts in {out}")
    return EXIT_OK if result.success else EXIT_TASK_FAILURE


def cmd_replay(run_dir) -> int:
    run_dir = Path(run_dir)
    cfg_path = run_dir / "config.json"
    if not cfg_path.exists() or not (run_dir / "cassette.jsonl").exists():
        raise ConfigError(f"{run_dir} is not a run directory (config.json and cassette.jsonl required)")
    raw = json.loads(cfg_path.read_text())
    raw["backend"] = {"kind": "replay", "replay": {"cassette": str((run_dir / "cassette.jsonl").resolve())}}
    cfg = parse_config(raw, run_dir)
    out = run_dir / "replay"
    code = cmd_run(cfg, seed=int(raw["seed"]), ablation=int(raw["ablation"]), out=out)
    same = _digest(run_dir / "run.json") == _digest(out / "run.json")
    print(f"run.json {'identical' if same else 'DIFFERS'} after replay (sha256 {_digest(out / 'run.json')[:16]})")
    return code if same else EXIT_TASK_FAILURE


def cmd_eval(config) -> int:
    cfg = config if isinstance(config, RunConfig) else load_config(config)
    ev = cfg.eval
    settings = [int(s) for s in ev.get("settings", [cfg.ablation])]
    for s in settings:
        get_setting(s)
    seeds = ev.get("seeds", 5)
    seed_list = list(range(int(seeds))) if isinstance(seeds, int) else [int(s) for s in seeds]
    if cfg.backend["kind"] == "replay":
        raise ConfigError("eval needs a live or oracle backend, not replay")
    results: list[RunResult] = []
    proto = ProtocolSpec(cfg.protocol.mode, 1, cfg.protocol.max_replans)
    for s in settings:
        for seed in seed_list:
            pcfg = pipeline_config(cfg, s, seed)
            results.extend(
                run_protocol(cfg.task, cfg.scene, lambda sd: make_backend(cfg, sd), s, proto, seed, pcfg, cfg.task_id)
            )
    out = cfg.artifact_dir
    write_results_csv(results, out / "results.csv")
    summary = summary_markdown(results)
    (out / "summary.md").write_text(summary)
    print(summary)
    print(f"{len(results)} rows written to {out / 'results.csv'}")
    return EXIT_OK


def cmd_render(scene_path, ticks: int, out=None) -> int:
    scene = load_scene(scene_path)
    img, _ = render(scene)
    if ticks:
        img = overlay_ticks(img, ticks)
    out = Path(out) if out else Path(scene_path).with_suffix(".png").name
    img.save_png(out)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_confusion(per_class: int, seed: int, noise: float, out) -> int:
    fixtures = verdict_fixtures(per_class, seed)
    backend = ScriptedOracle(OracleConfig(fixtures[0].scene, verdict_noise=noise, seed=seed)) if fixtures else None
    cm = confusion_matrix(fixtures, backend)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "confusion.csv").write_text(cm.to_csv())
    (out / "confusion.md").write_text(cm.to_markdown())
    print(cm.to_markdown())
    return EXIT_OK


def cmd_nav(map_path, out, clearance: int) -> int:
    nav = load_map(map_path)
    if nav.start is None:
        raise ConfigError("map has no start position")
    result, overlay_pts, paths = {}, [], []
    for name, box in nav.targets.items():
        goal = approach_point(box, nav.start, nav, clearance)
        path = plan_path(nav, nav.start, goal)
        intrusions = sum(ob.contains(p) for p in path.waypoints for ob in nav.obstacles)
        result[name] = {"approach": list(goal), "intrusions": intrusions, **path.to_dict()}
        overlay_pts.append(goal)
        paths.append(path)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _dump(out / "path.json", {"start": list(nav.start), "targets": result})
    render_path(nav, paths, [nav.start, *overlay_pts]).save_png(out / "path.png")
    print(f"planned {len(result)} paths; wrote {out / 'path.json'} and {out / 'path.png'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vlmteam", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one task and write a self-describing artifact directory")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--ablation", type=int)
    r.add_argument("--out")
    e = sub.add_parser("eval", help="run settings x seeds and write results.csv")
    e.add_argument("--config", required=True)
    rp = sub.add_parser("replay", help="re-run a recorded run from its cassette")
    rp.add_argument("--dir", required=True)
    rd = sub.add_parser("render", help="render a scene to PNG")
    rd.add_argument("--scene", required=True)
    rd.add_argument("--ticks", type=int, default=50)
    rd.add_argument("--out")
    c = sub.add_parser("confusion", help="checker verdict confusion matrix on generated fixtures")
    c.add_argument("--per-class", type=int, default=25)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--noise", type=float, default=0.0)
    c.add_argument("--out", default="confusion")
    n = sub.add_parser("nav", help="plan paths to every target of a navigation map")
    n.add_argument("--map", default=str(data_path("home_map.json")))
    n.add_argument("--out", default="nav")
    n.add_argument("--clearance", type=int, default=16)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "run":
            return cmd_run(args.config, args.seed, args.ablation, Path(args.out) if args.out else None)
        if args.command == "eval":
            return cmd_eval(args.config)
        if args.command == "replay":
            return cmd_replay(args.dir)
        if args.command == "render":
            return cmd_render(args.scene, args.ticks, args.out)
        if args.command == "confusion":
            return cmd_confusion(args.per_class, args.seed, args.noise, args.out)
        return cmd_nav(args.map, args.out, args.clearance)
    except (ConfigError, UnknownSetting) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (VLMTeamError, OSError, ValueError) as exc:
        if args.command in ("render", "nav"):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        raise


if __name__ == "__main__":
    sys.exit(main())
