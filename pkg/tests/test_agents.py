import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vlmteam import OracleConfig, ScriptedOracle, TaskPrompt, run_pipeline
from vlmteam.agents import (
    Agent,
    AgentTranscript,
    MemoryAgent,
    SystemMemory,
    complete_stage,
    invoke_agent,
    memory_snapshot,
    memory_update,
    placeholders,
)
from vlmteam.backends.base import BackendReply
from vlmteam.errors import ParseExhausted, StageOrderViolation
from vlmteam.payloads import APPROVED_TOKEN, VERDICT_STRINGS, parse_reply, render_reply
from vlmteam.pipeline import PipelineConfig
from vlmteam.prompts import (
    CHECKER_VERIFY_BOX,
    MOVER_REVISE_BOX,
    SUPERVISOR_CREATE_PLAN,
    VERIFY_PLAN,
    format_hint,
)
from vlmteam.scene import RasterImage


class Scripted:
    """Backend replaying a fixed list of reply strings."""

    def __init__(self, replies):
        self.replies = list(replies)
        self.requests = []

    def chat(self, req):
        self.requests.append(req)
        return BackendReply(self.replies.pop(0))


CHECK_CTX = {"target": "ball", "before": "(initial estimate)", "after": "[0, 0, 5, 5]", "window": "[0, 0, 9, 9]", "crop": "[image 1]"}


def test_checker_reply_parses_to_verdict():
    t = AgentTranscript("checker")
    payload = invoke_agent(CHECKER_VERIFY_BOX, CHECK_CTX, [], Scripted(["Accept"]), t)
    assert (payload.kind, payload.body, payload.retries) == ("verdict", "Accept", 0)
    assert len(t) == 1


def test_malformed_then_valid_counts_one_retry():
    be = Scripted(['```json\n{"bbox": [1, 2,\n```', '```json\n{"bbox": [1, 2, 30, 40]}\n```'])
    ctx = {"crop": "c", "target": "t", "bbox": "[0, 0, 1, 1]", "window": "w", "context": ""}
    t = AgentTranscript("mover")
    payload = invoke_agent(MOVER_REVISE_BOX, ctx, [], be, t)
    assert payload.body == {"bbox": [1, 2, 30, 40]} and payload.retries == 1
    # the re-ask carries the bad reply and a format reminder
    second = be.requests[1]
    assert second.messages[-2].role == "assistant"
    assert format_hint(MOVER_REVISE_BOX) in second.messages[-1].text


def test_parse_exhausted_after_all_retries():
    spec = CHECKER_VERIFY_BOX.with_retries(3)
    be = Scripted(["maybe?"] * 4)
    with pytest.raises(ParseExhausted):
        invoke_agent(spec, CHECK_CTX, [], be, AgentTranscript("checker"))
    assert len(be.requests) == 4


def test_missing_placeholder_is_an_error():
    assert "target" in placeholders(CHECKER_VERIFY_BOX.prompt_template)
    with pytest.raises(Exception):
        invoke_agent(CHECKER_VERIFY_BOX, {"target": "x"}, [], Scripted(["Accept"]), AgentTranscript("checker"))


def test_agent_rejects_foreign_prompt():
    with pytest.raises(ValueError):
        Agent("mover", Scripted([])).ask(CHECKER_VERIFY_BOX, CHECK_CTX)


def test_transcript_includes_prior_exchanges():
    be = Scripted(["Accept", "Reject"])
    a = Agent("checker", be, channel="checker/x")
    a.ask(CHECKER_VERIFY_BOX, CHECK_CTX)
    a.ask(CHECKER_VERIFY_BOX, CHECK_CTX)
    roles = [m.role for m in be.requests[1].messages]
    assert roles == ["system", "user", "assistant", "user"]
    recs = a.transcript.records("run1")
    assert [r["ordinal"] for r in recs] == [0, 1]
    assert recs[1]["reply_text"] == "Reject" and recs[0]["channel"] == "checker/x"


def test_contract_tokens_present_in_prompts():
    assert APPROVED_TOKEN in VERIFY_PLAN.system_template + VERIFY_PLAN.prompt_template + format_hint(VERIFY_PLAN)
    hint = format_hint(CHECKER_VERIFY_BOX)
    for v in ("Accept", "Revision Needed", "Reject"):
        assert v in hint
    assert parse_reply("feedback", "APPROVED").kind == "approval"
    assert parse_reply("feedback", "approved, mostly").kind == "feedback"


# --------------------------------------------------------------------------
# system memory


def test_memory_stage_order_and_supersession():
    mem = SystemMemory()
    memory_update(mem, "plan", "subgoals", [1], "supervisor")
    complete_stage(mem, "plan")
    memory_update(mem, "targets", "list", ["a"], "supervisor")
    assert [e.stage for e in mem.entries] == ["plan", "targets"]
    with pytest.raises(StageOrderViolation):
        memory_update(mem, "actions", "list", [], "supervisor")
    complete_stage(mem, "targets")
    memory_update(mem, "grounding", "banana.bbox", [1, 2, 3, 4], "ground_manager")
    memory_update(mem, "grounding", "banana.bbox", [5, 6, 7, 8], "ground_manager")
    live = [e for e in mem.entries if e.key == "banana.bbox"]
    assert len(live) == 1 and live[0].value == [5, 6, 7, 8]
    assert mem.superseded == [("grounding", "banana.bbox")]


def test_memory_snapshot_filters_stages():
    m = MemoryAgent()
    assert m.snapshot() == {}
    m.store("plan", "subgoals", ["s"], "supervisor")
    m.complete("plan")
    m.store("targets", "list", ["t"], "supervisor")
    m.complete("targets")
    m.store("grounding", "x.point", [1, 2], "ground_manager")
    snap = memory_snapshot(m.memory, {"plan", "grounding"})
    assert snap == {"plan.subgoals": ["s"], "grounding.x.point": [1, 2]}
    assert len(m) == 3 and m.records()[0]["agent_role"] == "memory"


def test_lid_run_memory_keys(lid_scene):
    oracle = ScriptedOracle(OracleConfig(lid_scene))
    res = run_pipeline(TaskPrompt("Put the banana into the box."), lid_scene, oracle, PipelineConfig())
    keys = res.memory.snapshot().keys()
    assert {"plan.subgoals", "grounding.lid.point", "grounding.banana.bbox", "actions.list"} <= set(keys)


def test_target_level_scope_never_sees_env_or_plan(lid_scene):
    oracle = ScriptedOracle(OracleConfig(lid_scene, init_offset_px=30))
    res = run_pipeline(TaskPrompt("Put the banana into the box."), lid_scene, oracle, PipelineConfig())
    env_sha = res.env.sha256()
    plan_text = res.plan.render()
    seen = 0
    for agent in res.agents:
        if agent.role not in ("mover", "checker"):
            continue
        for ex in agent.transcript.exchanges:
            seen += 1
            assert all(img.sha256() != env_sha for m in ex.request.messages for img in m.images)
            assert all(plan_text not in m.text for m in ex.request.messages)
    assert seen > 0


def test_transcripts_deterministic(lid_scene):
    def run():
        res = run_pipeline(TaskPrompt("Put the banana into the box."), lid_scene,
                           ScriptedOracle(OracleConfig(lid_scene, seed=4)), PipelineConfig(seed=4))
        return {a.transcript.channel: a.transcript.records() for a in res.agents}

    assert run() == run()


boxes = st.tuples(st.integers(0, 600), st.integers(0, 400), st.integers(1, 40), st.integers(1, 40)).map(
    lambda t: ("bbox", {"bbox": [t[0], t[1], t[0] + t[2], t[1] + t[3]]})
)
points = st.tuples(st.integers(0, 639), st.integers(0, 479)).map(lambda p: ("point", {"point": list(p)}))
verdicts = st.sampled_from(VERDICT_STRINGS).map(lambda v: ("verdict", v))
selections = st.lists(st.integers(0, 9), min_size=1, max_size=5).map(lambda v: ("selection", {"selected": v}))
target_lists = st.lists(st.text(min_size=1, max_size=10), min_size=1, max_size=4).map(
    lambda ns: ("target_list", {"targets": [{"name": n, "mode": "object_box"} for n in ns]})
)


@settings(max_examples=150)
@given(case=st.one_of(boxes, points, verdicts, selections, target_lists))
def test_payload_round_trip(case):
    kind, body = case
    assert parse_reply(kind, render_reply(kind, body)).body == body


def test_plan_payload_round_trip():
    body = {"subgoals": [{"verb": "pick", "object": "banana", "target": None, "notes": ""},
                         {"verb": "place", "object": "banana", "target": "box opening", "notes": "gently"}]}
    assert parse_reply("plan", render_reply("plan", body)).body == body
    assert SUPERVISOR_CREATE_PLAN.scope == "task_level"


def test_images_attach_to_prompt_message():
    be = Scripted(["Accept"])
    img = RasterImage.blank(8, 8)
    a = Agent("checker", be)
    a.ask(CHECKER_VERIFY_BOX, CHECK_CTX, [img])
    assert a.transcript.exchanges[0].images == (img,)
