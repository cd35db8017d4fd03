import base64
import json
import logging

import httpx
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import box_iou
from vlmteam.agents import Agent
from vlmteam.backends import (
    HttpBackend,
    OracleConfig,
    RecordingBackend,
    ReplayBackend,
    ScriptedOracle,
    record_replay,
)
from vlmteam.backends.base import BackendRequest, Message
from vlmteam.errors import OracleError, ReplayMiss, TransportError, ValidationError
from vlmteam.grounder import box_view, checker_verdict
from vlmteam.scene import BoundingBox, RasterImage, object_bbox
from vlmteam.sim import render


def _req(text="hello", role="supervisor", channel="", images=()):
    return BackendRequest(role, (Message("system", "sys"), Message("user", text, tuple(images))), channel=channel)


def _verdict(oracle, scene, box, target):
    env, _ = render(scene)
    return checker_verdict(box_view(env, box), box, target, Agent("checker", oracle)).value


def test_request_invariants():
    with pytest.raises(ValidationError):
        BackendRequest("supervisor", ())
    with pytest.raises(ValidationError):
        BackendRequest("supervisor", (Message("user", "x"),))
    with pytest.raises(ValidationError):
        BackendRequest("pilot", (Message("system", "x"),))
    assert _req().channel == "supervisor"


def test_oracle_checker_accept_and_reject(circle_scene):
    oracle = ScriptedOracle(OracleConfig(circle_scene))
    truth = object_bbox(circle_scene, "ball")
    assert _verdict(oracle, circle_scene, truth, "ball") == "Accept"
    assert _verdict(oracle, circle_scene, BoundingBox(20, 20, 80, 80), "ball") == "Reject"
    assert _verdict(oracle, circle_scene, truth.shifted(40, 0), "ball") == "Revision Needed"


@settings(max_examples=200)
@given(x0=st.integers(150, 400), y0=st.integers(100, 300), w=st.integers(5, 200), h=st.integers(5, 200))
def test_oracle_verdict_partition_follows_iou(circle_scene, x0, y0, w, h):
    oracle = ScriptedOracle(OracleConfig(circle_scene, iou_accept=0.75))
    box = BoundingBox(x0, y0, x0 + w, y0 + h)
    iou = box_iou(box.as_list(), object_bbox(circle_scene, "ball").as_list())
    expected = "Accept" if iou >= 0.75 else "Reject" if iou == 0 else "Revision Needed"
    assert oracle.box_verdict(box, "ball") == expected


def test_oracle_unknown_target_and_intent(circle_scene):
    oracle = ScriptedOracle(OracleConfig(circle_scene))
    with pytest.raises(OracleError):
        oracle.box_verdict(BoundingBox(0, 0, 5, 5), "unicorn")
    with pytest.raises(OracleError):
        oracle.chat(_req())


def test_oracle_config_validation(circle_scene):
    for bad in ({"iou_accept": 0}, {"iou_accept": 1.5}, {"init_offset_px": -1}, {"contraction": 0},
                {"plan_quality": "sloppy"}, {"verdict_noise": 2}):
        with pytest.raises(ValidationError):
            OracleConfig(circle_scene, **bad)


def _run_checks(oracle, scene, n=5):
    env, _ = render(scene)
    agent = Agent("checker", oracle, channel="checker/ball")
    truth = object_bbox(scene, "ball")
    for i in range(n):
        box = truth.shifted(12 * i, 0)
        checker_verdict(box_view(env, box), box, "ball", agent)
    return [ex.reply_text for ex in agent.transcript.exchanges]


def test_oracle_determinism_with_noise(circle_scene):
    cfg = OracleConfig(circle_scene, verdict_noise=0.4, seed=11)
    a = _run_checks(ScriptedOracle(cfg), circle_scene, 8)
    b = _run_checks(ScriptedOracle(cfg), circle_scene, 8)
    assert a == b


def test_record_then_replay(tmp_path, circle_scene):
    cassette = tmp_path / "c.jsonl"
    oracle = ScriptedOracle(OracleConfig(circle_scene))
    recorded = _run_checks(RecordingBackend(oracle, cassette), circle_scene, 5)
    lines = [json.loads(line) for line in cassette.read_text().splitlines()]
    assert len(lines) == 5
    assert set(lines[0]) >= {"ordinal", "agent_role", "request_sha256", "reply_text"}

    class Exploding:
        def chat(self, req):
            raise AssertionError("replay must not reach the inner backend")

    replay = record_replay(cassette)
    assert _run_checks(replay, circle_scene, 5) == recorded
    with pytest.raises(ReplayMiss):
        _run_checks(ReplayBackend(cassette), circle_scene, 6)


def test_replay_empty_cassette_misses(tmp_path):
    with pytest.raises(ReplayMiss):
        ReplayBackend(tmp_path / "none.jsonl").chat(_req())


def test_replay_digest_mismatch_warns_and_serves(tmp_path, caplog):
    cassette = tmp_path / "c.jsonl"

    class Echo:
        def chat(self, req):
            from vlmteam.backends.base import BackendReply
            return BackendReply(req.user_text.upper())

    RecordingBackend(Echo(), cassette).chat(_req("original"))
    replay = ReplayBackend(cassette)
    with caplog.at_level(logging.WARNING):
        reply = replay.chat(_req("edited prompt"))
    assert reply.text == "ORIGINAL"
    assert replay.mismatches == [("supervisor", 0)]
    assert "mismatch" in caplog.text


def test_replay_matches_per_channel(tmp_path):
    cassette = tmp_path / "c.jsonl"
    rows = [
        {"ordinal": 0, "agent_role": "mover", "channel": "mover/a", "request_sha256": "", "reply_text": "A0"},
        {"ordinal": 0, "agent_role": "mover", "channel": "mover/b", "request_sha256": "", "reply_text": "B0"},
        {"ordinal": 1, "agent_role": "mover", "channel": "mover/a", "request_sha256": "", "reply_text": "A1"},
    ]
    cassette.write_text("".join(json.dumps(r) + "\n" for r in rows))
    rb = ReplayBackend(cassette)
    assert rb.chat(_req(role="mover", channel="mover/b")).text == "B0"
    assert rb.chat(_req(role="mover", channel="mover/a")).text == "A0"
    assert rb.chat(_req(role="mover", channel="mover/a")).text == "A1"


# --------------------------------------------------------------------------
# HTTP client against a mock transport


def _http(handler, monkeypatch, retries=3):
    monkeypatch.setenv("TEST_KEY", "sekrit")
    sleeps = []
    client = httpx.Client(transport=httpx.MockTransport(handler))
    be = HttpBackend("https://example.test/v1/chat/completions", "m", "TEST_KEY",
                     max_retries=retries, client=client, sleep=sleeps.append)
    return be, sleeps


def _ok(text="hi"):
    return httpx.Response(200, json={"choices": [{"message": {"content": text}}], "usage": {"total_tokens": 3}})


def test_http_success_payload_and_auth(monkeypatch):
    seen = {}

    def handler(request):
        seen["auth"] = request.headers["authorization"]
        seen["body"] = json.loads(request.content)
        return _ok("fine")

    be, _ = _http(handler, monkeypatch)
    img = RasterImage.blank(4, 3)
    reply = be.chat(_req("look", images=[img]))
    assert reply.text == "fine" and reply.usage == {"total_tokens": 3}
    assert seen["auth"] == "Bearer sekrit"
    body = seen["body"]
    assert body["model"] == "m" and body["temperature"] == 0.0
    parts = body["messages"][1]["content"]
    assert parts[0] == {"type": "text", "text": "look"}
    url = parts[1]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    assert base64.b64decode(url.split(",", 1)[1]) == img.to_png_bytes()


def test_http_retries_transient_then_succeeds(monkeypatch):
    statuses = iter([429, 503, 200])

    def handler(request):
        code = next(statuses)
        return _ok() if code == 200 else httpx.Response(code, text="busy")

    be, sleeps = _http(handler, monkeypatch)
    assert be.chat(_req()).text == "hi"
    assert sleeps == [1.0, 2.0]


def test_http_gives_up_after_three_retries(monkeypatch):
    calls = []

    def handler(request):
        calls.append(1)
        raise httpx.ReadTimeout("slow", request=request)

    be, sleeps = _http(handler, monkeypatch)
    with pytest.raises(TransportError):
        be.chat(_req())
    assert len(calls) == 4 and sleeps == [1.0, 2.0, 4.0]


def test_http_non_transient_and_missing_key(monkeypatch):
    be, sleeps = _http(lambda r: httpx.Response(400, text="bad"), monkeypatch)
    with pytest.raises(TransportError):
        be.chat(_req())
    assert sleeps == []
    monkeypatch.delenv("TEST_KEY")
    with pytest.raises(TransportError):
        be.chat(_req())
