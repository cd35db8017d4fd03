"""
Box refinement by the grounding team
====================================

The oracle starts 140 px away from a 100 x 100 block and halves its error on
every mover turn. The checker accepts once IoU clears 0.75. This script
prints the error and IoU per verdict and saves the zoomed view the checker
saw at each step.
"""

# %%
# A one-object scene
# ------------------
import math
from pathlib import Path

from vlmteam import OracleConfig, ScriptedOracle, object_bbox
from vlmteam.grounder import GroundingConfig, GroundingTeam, box_view, ground_target
from vlmteam.planner import Plan, Subgoal
from vlmteam.scene import GoalSpec, PixelCoord, Scene, SceneObject
from vlmteam.sim import render

out = Path("demo_out")
out.mkdir(exist_ok=True)
block = SceneObject("block", "rectangle", "red", PixelCoord(320, 240), (50.0, 50.0))
scene = Scene(640, 480, [block], GoalSpec("place_in_region", {}))
env, _ = render(scene)
truth = object_bbox(scene, "block")

# %%
# Run the loop
# ------------
oracle = ScriptedOracle(
    OracleConfig(scene, init_offset_px=140, init_angle_deg=45, init_size_error=0, contraction=0.5, iou_accept=0.75)
)
cfg = GroundingConfig()
plan = Plan([Subgoal(0, "pick", "block")], approved=True)
box, point, state = ground_target("block", "object_box", env, plan, GroundingTeam.for_target(oracle, "block", cfg), cfg)

# %%
# Per-verdict trace
# -----------------
for i, (b, verdict) in enumerate(state.history):
    err = math.hypot(b.center[0] - truth.center[0], b.center[1] - truth.center[1])
    print(f"verdict {i}: {verdict.value:<16} error {err:7.2f} px  IoU {b.iou(truth):.3f}")
    box_view(env, b, cfg.margin).crop.save_png(out / f"grounding_step{i}.png")
print("grasp point:", tuple(point.point), "mover turns:", state.mover_calls)
