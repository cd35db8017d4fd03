"""
Switching agents off
====================

A small version of the ablation batch: the noisy oracle on the lidded-box
task, four agent configurations, ten seeds each. The full team recovers from
bad first boxes and a plan that forgets the lid; the stripped-down settings
cannot.
"""

# %%
# Setup
# -----
from vlmteam import OracleConfig, ScriptedOracle, TaskPrompt, data_path, load_scene
from vlmteam.evaluation import ProtocolSpec, run_protocol, summary_markdown

scene = load_scene(data_path("lidded_box.json"))
task = TaskPrompt("Put the banana into the box.")
noisy = dict(init_offset_sigma=60.0, verdict_noise=0.05, plan_quality="misses_prerequisites")


def factory(seed):
    return ScriptedOracle(OracleConfig(scene, seed=seed, **noisy))


# %%
# Run the batch
# -------------
results = []
for setting in (0, 3, 5, 7):
    results += run_protocol(task, scene, factory, setting, ProtocolSpec(runs=10))
print(summary_markdown(results))

# %%
# Where the failures happen
# -------------------------
for r in results:
    if not r.success:
        print(f"setting {r.setting} seed {r.seed}: failed at {r.failure_stage}")
