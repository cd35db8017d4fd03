"""
Approach points on the home map
===============================

Obstacles are no-enter boxes. For every named target we pick the reachable
face with the shortest path from the robot, plan an 8-connected grid path to
it and draw everything on one overlay.
"""

# %%
# Load the map
# ------------
from pathlib import Path

from vlmteam import data_path
from vlmteam.nav import approach_point, load_map, plan_path, render_path

out = Path("demo_out")
out.mkdir(exist_ok=True)
nav = load_map(data_path("home_map.json"))
print(f"{nav.width}x{nav.height} map, {len(nav.obstacles)} obstacles, cell {nav.cell} px")

# %%
# Plan to each target
# -------------------
paths, goals = [], []
for name, box in nav.targets.items():
    goal = approach_point(box, nav.start, nav)
    path = plan_path(nav, nav.start, goal)
    paths.append(path)
    goals.append(goal)
    print(f"{name:<6} approach {tuple(goal)}  {len(path.waypoints)} waypoints  {path.length_px:.0f} px")

# %%
# Overlay
# -------
render_path(nav, paths, [nav.start, *goals]).save_png(out / "nav_paths.png")
