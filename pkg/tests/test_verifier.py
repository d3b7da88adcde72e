"""Tests for verdict parsing, verification prompts and the endpoint client."""

import asyncio
import json
import random
from unittest.mock import AsyncMock, MagicMock

import pytest

from verimas.config import VerifierConfig
from verimas.const import LABELS
from verimas.dataconstruct import serialize_target
from verimas.exceptions import AuthenticationError, ConfigError, TransportError, VerifierTimeout
from verimas.prompts import VERIFY_SYSTEM, render_verify
from verimas.verifier import (
    Verdict,
    VerdictTable,
    VerifierClient,
    build_verify_prompt,
    complete,
    parse_verdict,
    scripted_verdict,
    verify_hypothesis,
)

POOL = ("Planner", "Solver", "Critic", "Coder", "Reviewer", "Auditor")


def _bundle():
    return render_verify("TASK: x", "An agent erred.", ["Solver"], meta={"trajectory_id": "t1"})


def _client(transport, retries=2, concurrency=8):
    config = VerifierConfig(
        endpoint_url="mock:neutral", retries=retries, backoff=0.0, concurrency_limit=concurrency
    )
    return VerifierClient(config, transport)


def _assert_valid(verdict, candidates):
    assert verdict.label in LABELS
    assert set(verdict.agents) <= set(candidates)
    assert len(set(verdict.agents)) == len(verdict.agents)
    if verdict.label != "A":
        assert verdict.agents == ()


def test_parse_neutral():
    """Test a plain neutral object."""
    verdict = parse_verdict('{"label":"B","agents":[]}', ["Solver"])
    assert (verdict.label, verdict.agents) == ("B", ())


def test_parse_multiple_entail_lines():
    """Test agents are the union over objects."""
    raw = '{"label":"A","agents":["Planner"]}\n{"label":"A","agents":["Solver"]}'
    verdict = parse_verdict(raw, ["Planner", "Solver"])
    assert (verdict.label, verdict.agents) == ("A", ("Planner", "Solver"))


def test_parse_drops_unknown_agent():
    """Test agents outside the candidate set are dropped."""
    verdict = parse_verdict('{"label":"A","agents":["Ghost"]}', ["Solver"])
    assert (verdict.label, verdict.agents) == ("A", ())
    assert "dropped unknown agent Ghost" in verdict.diagnostics


def test_parse_singular_agent_key():
    """Test a scalar "agent" key is accepted."""
    verdict = parse_verdict('{"label":"A","agent":"Solver"}', ["Solver"])
    assert verdict.agents == ("Solver",)


def test_parse_strips_fences_and_prose():
    """Test fenced output with prose still parses."""
    raw = 'Here you go:\n```json\n{"label": "A", "agents": ["Critic"]}\n```'
    verdict = parse_verdict(raw, ["Critic"])
    assert (verdict.label, verdict.agents) == ("A", ("Critic",))
    assert "stripped code fences" in verdict.diagnostics


def test_parse_discards_agents_for_contradict():
    """Test B/C verdicts never carry agents."""
    verdict = parse_verdict('{"label":"C","agents":["Solver"]}', ["Solver"])
    assert (verdict.label, verdict.agents) == ("C", ())
    assert any("discarded agents" in note for note in verdict.diagnostics)


def test_parse_first_label_wins():
    """Test conflicting labels keep the first object."""
    raw = '{"label":"A","agents":["Solver"]}\n{"label":"C","agents":[]}'
    verdict = parse_verdict(raw, ["Solver"])
    assert verdict.label == "A"
    assert any("conflicting" in note for note in verdict.diagnostics)


@pytest.mark.parametrize("raw", ["", "garbage", '{"label":"D","agents":[]}', "{not json}"])
def test_parse_fallback_neutral(raw):
    """Test unusable responses fall back to neutral."""
    verdict = parse_verdict(raw, ["Solver"])
    assert (verdict.label, verdict.agents) == ("B", ())
    assert verdict.diagnostics


def test_parse_requires_candidates():
    """Test the candidate set must be non-empty."""
    with pytest.raises(ValueError):
        parse_verdict('{"label":"B","agents":[]}', [])


def test_verdict_invariants():
    """Test invalid verdicts cannot be built."""
    with pytest.raises(ValueError):
        Verdict("C", ("Solver",))
    with pytest.raises(ValueError):
        Verdict("Z")
    with pytest.raises(ValueError):
        Verdict("A", ("Solver", "Solver"))


def test_serialize_parse_round_trip():
    """Test 1,000 random verdicts survive serialization."""
    rng = random.Random(7)
    for _ in range(1000):
        candidates = rng.sample(POOL, rng.randint(1, len(POOL)))
        label = rng.choice(LABELS)
        agents = rng.sample(candidates, rng.randint(0, len(candidates))) if label == "A" else []
        verdict = parse_verdict(serialize_target(label, agents), candidates)
        assert verdict.label == label
        assert list(verdict.agents) == agents


@pytest.mark.parametrize("name", ["Agent{1}", "Plan\u2028ner", "Coder\x85", "Bot```py", "Solver }{"])
def test_round_trip_unusual_agent_names(name):
    """Test agent names with braces, line separators and fences survive serialization."""
    candidates = [name, "Solver"]
    verdict = parse_verdict(serialize_target("A", [name, "Solver"]), candidates)
    assert (verdict.label, list(verdict.agents)) == ("A", [name, "Solver"])
    assert verdict.diagnostics == ()


def test_parse_fence_inside_line_is_kept():
    """Test only whole-line fences are stripped."""
    raw = '```json\n{"label":"A","agents":["Bot```json"]}\n```'
    verdict = parse_verdict(raw, ["Bot```json"])
    assert verdict.agents == ("Bot```json",)
    assert "stripped code fences" in verdict.diagnostics


def test_fuzzed_responses_never_crash():
    """Test malformed responses always yield valid verdicts."""
    rng = random.Random(11)
    pieces = [
        lambda: "```json",
        lambda: "```",
        lambda: "Let me think about this.",
        lambda: json.dumps({"label": rng.choice("ABCDa"), "agents": rng.sample(POOL + ("Ghost",), 2)}),
        lambda: json.dumps({"label": "A", "agent": rng.choice(POOL + ("Ghost",))}),
        lambda: '{"label": "A", "agents": [',
        lambda: "<think>no</think>",
        lambda: "{}",
        lambda: '[{"label":"B","agents":[]}]',
    ]
    for _ in range(1000):
        candidates = rng.sample(POOL, rng.randint(1, 3))
        raw = "\n".join(rng.choice(pieces)() for _ in range(rng.randint(0, 5)))
        _assert_valid(parse_verdict(raw, candidates), candidates)


def test_build_verify_prompt(make_trajectory, taxonomy):
    """Test the verify prompt for one hypothesis."""
    trajectory = make_trajectory()
    hypothesis = taxonomy.get("FM-3.2").hypothesis_text
    bundle = build_verify_prompt(trajectory, hypothesis, ["Planner", "Solver"], error_code="FM-3.2")
    assert bundle.system_text == VERIFY_SYSTEM
    assert "TASK: Sort the list of numbers." in bundle.user_text
    assert hypothesis in bundle.user_text
    assert '["Planner", "Solver"]' in bundle.user_text
    assert bundle.meta == {"trajectory_id": "t1", "error_code": "FM-3.2"}


def test_build_verify_prompt_preconditions(make_trajectory):
    """Test empty agents or hypothesis are rejected."""
    trajectory = make_trajectory()
    with pytest.raises(ConfigError):
        build_verify_prompt(trajectory, "An agent erred.", [])
    with pytest.raises(ConfigError):
        build_verify_prompt(trajectory, "  ", ["Solver"])


def test_oracle_table(make_trajectory, taxonomy):
    """Test gold errors entail and the rest contradict."""
    trajectory = make_trajectory(gold=[("Solver", "FM-3.2")])
    table = VerdictTable.oracle([trajectory], taxonomy)
    assert scripted_verdict(table, "t1", "FM-3.2") == Verdict("A", ("Solver",))
    assert scripted_verdict(table, "t1", "FM-1.1") == Verdict("C")
    assert scripted_verdict(VerdictTable(), "t1", "FM-1.1") == Verdict("B")


@pytest.mark.asyncio
async def test_complete_echo():
    """Test a scripted transport response is returned."""
    transport = AsyncMock()
    transport.send = AsyncMock(return_value="OK")
    config = VerifierConfig(endpoint_url="mock:neutral", model_name="tiny", temperature=0.0)
    assert await complete(config, _bundle(), transport) == "OK"
    kwargs = transport.send.call_args.kwargs
    assert kwargs["model"] == "tiny"
    assert kwargs["temperature"] == 0.0
    transport.close.assert_awaited_once()


@pytest.mark.asyncio
async def test_complete_retries_then_succeeds():
    """Test two failures then success with retries=2."""
    transport = AsyncMock()
    transport.send = AsyncMock(side_effect=[TransportError("429"), VerifierTimeout("slow"), "OK"])
    client = _client(transport, retries=2)
    assert await client.complete(_bundle()) == "OK"
    assert transport.send.call_count == 3


@pytest.mark.asyncio
async def test_complete_gives_up():
    """Test retries=1 makes exactly two attempts."""
    transport = AsyncMock()
    transport.send = AsyncMock(side_effect=TransportError("down"))
    client = _client(transport, retries=1)
    with pytest.raises(TransportError):
        await client.complete(_bundle())
    assert transport.send.call_count == 2


@pytest.mark.asyncio
async def test_authentication_not_retried():
    """Test credential failures are raised at once."""
    transport = AsyncMock()
    transport.send = AsyncMock(side_effect=AuthenticationError("401"))
    client = _client(transport, retries=3)
    with pytest.raises(AuthenticationError):
        await client.complete(_bundle())
    assert transport.send.call_count == 1


@pytest.mark.asyncio
async def test_concurrency_is_bounded():
    """Test in-flight requests never exceed the limit."""
    in_flight = 0
    peak = 0

    async def send(bundle, **options):
        nonlocal in_flight, peak
        in_flight += 1
        peak = max(peak, in_flight)
        await asyncio.sleep(0.01)
        in_flight -= 1
        return "OK"

    transport = MagicMock()
    transport.send = send
    client = _client(transport, concurrency=2)
    results = await asyncio.gather(*(client.complete(_bundle()) for _ in range(10)))
    assert results == ["OK"] * 10
    assert peak == 2
    assert client.requests == 10


@pytest.mark.asyncio
async def test_verify_hypothesis_with_oracle(make_trajectory, taxonomy, mock_client):
    """Test one hypothesis against the oracle transport."""
    trajectory = make_trajectory(gold=[("Planner", "FM-1.4"), ("Critic", "FM-1.4")])
    client = mock_client([trajectory])
    verdict = await verify_hypothesis(client, trajectory, "FM-1.4", taxonomy)
    assert (verdict.label, verdict.agents) == ("A", ("Planner", "Critic"))
    verdict = await verify_hypothesis(client, trajectory, "FM-3.2", taxonomy)
    assert (verdict.label, verdict.agents) == ("C", ())
