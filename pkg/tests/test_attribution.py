"""Tests for hypothesis-verification attribution and the baseline strategies."""

from unittest.mock import AsyncMock

import pytest

from verimas.api.mock import MockAPI
from verimas.attribution import (
    HypothesisFailure,
    attribute,
    attribute_with_strategy,
    golds_from,
    parse_list_response,
    parse_pair_response,
    result_from_record,
    verify_all_hypotheses,
)
from verimas.config import VerifierConfig
from verimas.const import ATTRIBUTION_STRATEGIES
from verimas.exceptions import AuthenticationError, ConfigError
from verimas.metrics import evaluate
from verimas.trajectory import AttributionSet, parse_trajectory
from verimas.verifier import VerifierClient


def _client(config, **kwargs):
    return VerifierClient(config, MockAPI(**kwargs))


@pytest.mark.asyncio
async def test_oracle_single_error(make_trajectory, taxonomy, mock_client):
    """Test one gold error yields one pair and thirteen contradictions."""
    trajectory = make_trajectory(gold=[("Solver", "FM-3.2")])
    result = await attribute(trajectory, taxonomy, mock_client([trajectory]))
    assert result.pairs == AttributionSet.of([("Solver", "FM-3.2")])
    assert len(result.verdicts) == 14
    assert [v.label for v in result.verdicts.values()].count("C") == 13
    assert list(result.verdicts) == list(taxonomy.codes)
    assert result.ok


@pytest.mark.asyncio
async def test_all_neutral(make_trajectory, taxonomy, mock_client):
    """Test a neutral verifier yields no pairs."""
    trajectory = make_trajectory(gold=[("Solver", "FM-3.2")])
    result = await attribute(trajectory, taxonomy, mock_client(mode="neutral"))
    assert len(result.pairs) == 0
    assert {v.label for v in result.verdicts.values()} == {"B"}
    assert result.entailed_unattributed == ()


@pytest.mark.asyncio
async def test_all_contradict(make_trajectory, taxonomy, mock_client):
    """Test a contradicting verifier yields an empty result."""
    result = await attribute(make_trajectory(), taxonomy, mock_client(mode="contradict"))
    assert len(result.pairs) == 0
    assert {v.label for v in result.verdicts.values()} == {"C"}


@pytest.mark.asyncio
async def test_one_hypothesis_fails(make_trajectory, taxonomy, mock_client):
    """Test a failing hypothesis is marked while the rest complete."""
    trajectory = make_trajectory(gold=[("Solver", "FM-2.2")])
    result = await attribute(trajectory, taxonomy, mock_client([trajectory], fail=["t1:FM-2.2"]))
    assert len(result.verdicts) == 13
    assert "FM-2.2" in result.failures
    assert not result.ok
    assert len(result.pairs) == 0
    assert result.failure_record()["failures"].keys() == {"FM-2.2"}


@pytest.mark.asyncio
async def test_verify_all_returns_failure_markers(make_trajectory, taxonomy, mock_client):
    """Test per-hypothesis failures are returned as markers."""
    trajectory = make_trajectory()
    outcomes = await verify_all_hypotheses(trajectory, taxonomy, mock_client(fail=["t1:FM-1.3"]))
    assert isinstance(outcomes["FM-1.3"], HypothesisFailure)
    assert sum(isinstance(o, HypothesisFailure) for o in outcomes.values()) == 1


@pytest.mark.asyncio
async def test_multiple_agents_one_error(make_trajectory, taxonomy, mock_client):
    """Test one entailed hypothesis can blame several agents."""
    trajectory = make_trajectory(gold=[("Planner", "FM-1.4"), ("Critic", "FM-1.4")])
    result = await attribute(trajectory, taxonomy, mock_client([trajectory]))
    assert result.pairs == AttributionSet.of([("Planner", "FM-1.4"), ("Critic", "FM-1.4")])


@pytest.mark.asyncio
async def test_entailed_without_agents(make_trajectory, taxonomy, mock_client):
    """Test an agentless entailment is kept for error-level scoring."""
    script = {"t1": {"FM-3.1": {"label": "A", "agents": []}}}
    result = await attribute(make_trajectory(), taxonomy, mock_client(mode="script", script=script))
    assert len(result.pairs) == 0
    assert result.entailed_unattributed == ("FM-3.1",)
    assert result.to_record()["entailed_unattributed"] == ["FM-3.1"]


@pytest.mark.asyncio
async def test_unknown_agents_filtered(make_trajectory, taxonomy, mock_client):
    """Test verdict agents outside the candidates never reach the pairs."""
    script = {"t1": {"FM-2.5": '{"label":"A","agents":["Ghost","Solver"]}'}}
    result = await attribute(make_trajectory(), taxonomy, mock_client(mode="script", script=script))
    assert result.pairs == AttributionSet.of([("Solver", "FM-2.5")])
    assert "FM-2.5: dropped unknown agent Ghost" in result.diagnostics


@pytest.mark.asyncio
async def test_authentication_is_fatal(make_trajectory, taxonomy, verifier_config):
    """Test credential failures abort the trajectory."""
    transport = AsyncMock()
    transport.send = AsyncMock(side_effect=AuthenticationError("401"))
    client = VerifierClient(verifier_config, transport)
    with pytest.raises(AuthenticationError):
        await attribute(make_trajectory(), taxonomy, client)


@pytest.mark.asyncio
async def test_oracle_fixpoint_all_strategies(synthetic_records, taxonomy, verifier_config):
    """Test every strategy reproduces gold under the oracle."""
    trajectories = [parse_trajectory(r, taxonomy) for r in synthetic_records(100, seed=3)]
    golds = golds_from(trajectories)
    for strategy in ATTRIBUTION_STRATEGIES:
        client = _client(verifier_config, trajectories=trajectories)
        results = [
            await attribute_with_strategy(strategy, t, taxonomy, client) for t in trajectories
        ]
        for result in results:
            assert result.pairs == golds[result.trajectory_id], strategy
        report = evaluate(results, golds, taxonomy)
        headline = report.headline()
        assert len(headline) == 6
        assert set(headline.values()) == {1.0}, strategy


@pytest.mark.asyncio
async def test_jitter_does_not_change_results(synthetic_records, taxonomy):
    """Test response timing does not affect the output."""
    trajectories = [parse_trajectory(r, taxonomy) for r in synthetic_records(5, seed=8)]
    config = VerifierConfig(endpoint_url="mock:oracle", retries=0, backoff=0.0, concurrency_limit=3)
    outputs = []
    for seed in (1, 2):
        client = _client(config, trajectories=trajectories, jitter=0.005, seed=seed)
        outputs.append(
            [(await attribute(t, taxonomy, client)).to_record() for t in trajectories]
        )
    assert outputs[0] == outputs[1]


@pytest.mark.asyncio
async def test_direct_pairs_scripted(make_trajectory, taxonomy, mock_client):
    """Test direct pair prediction filters unknown names."""
    script = {
        "t1": {
            "pairs": '{"agent": "Solver", "error": "fm-3.2"}\n'
            '{"agent": "Ghost", "error": "FM-1.1"}\n{"agent": "Critic", "error": "FM-9.9"}'
        }
    }
    result = await attribute_with_strategy(
        "dpr", make_trajectory(), taxonomy, mock_client(mode="script", script=script)
    )
    assert result.pairs == AttributionSet.of([("Solver", "FM-3.2")])
    assert "dropped unknown agent Ghost" in result.diagnostics
    assert "dropped unknown error FM-9.9" in result.diagnostics
    assert "verdicts" not in result.to_record()


@pytest.mark.asyncio
async def test_error_first_scripted(make_trajectory, taxonomy, mock_client):
    """Test error-first elicitation asks for agents per error."""
    script = {
        "t1": {
            "errors": "Thinking...\nANSWER: [FM-1.1, FM-3.1]",
            "agents_for_error:FM-1.1": '["Planner"]',
            "agents_for_error:FM-3.1": "[]",
        }
    }
    client = mock_client(mode="script", script=script)
    result = await attribute_with_strategy("cot_error", make_trajectory(), taxonomy, client)
    assert result.pairs == AttributionSet.of([("Planner", "FM-1.1")])
    assert result.entailed_unattributed == ("FM-3.1",)
    assert [call[0] for call in client.transport.calls] == [
        "errors", "agents_for_error", "agents_for_error",
    ]


@pytest.mark.asyncio
async def test_agent_first_scripted(make_trajectory, taxonomy, mock_client):
    """Test agent-first elicitation asks for errors per agent."""
    script = {
        "t1": {
            "agents": '["Critic", "Nobody"]',
            "errors_for_agent:Critic": '["FM-2.6", "FM-3.3"]',
        }
    }
    result = await attribute_with_strategy(
        "direct_agent", make_trajectory(), taxonomy, mock_client(mode="script", script=script)
    )
    assert result.pairs == AttributionSet.of([("Critic", "FM-2.6"), ("Critic", "FM-3.3")])


@pytest.mark.asyncio
async def test_stage_one_failure(make_trajectory, taxonomy, mock_client):
    """Test a failed first stage is recorded under the wildcard key."""
    result = await attribute_with_strategy(
        "direct_error", make_trajectory(), taxonomy, mock_client(fail=["t1"])
    )
    assert result.failures.keys() == {"*"}


@pytest.mark.asyncio
async def test_unknown_strategy(make_trajectory, taxonomy, mock_client):
    """Test unknown strategies are rejected."""
    with pytest.raises(ConfigError):
        await attribute_with_strategy("vibes", make_trajectory(), taxonomy, mock_client())


@pytest.mark.parametrize(
    "raw,expected",
    [
        ('["FM-1.1", "FM-3.2"]', ["FM-1.1", "FM-3.2"]),
        ("Reasoning [not this]\nANSWER: [Solver, Critic]", ["Solver", "Critic"]),
        ("first [A] then [B]", ["B"]),
        ("nothing here", []),
        ("ANSWER: []", []),
    ],
)
def test_parse_list_response(raw, expected):
    """Test answer lists are extracted from free text."""
    assert parse_list_response(raw) == expected


def test_parse_pair_response():
    """Test pair objects are extracted and junk skipped."""
    raw = 'x {"agent": "Solver", "error": "FM-3.2"} {"agent": "Critic"} {bad}'
    assert parse_pair_response(raw) == [("Solver", "FM-3.2")]


def test_result_record_round_trip():
    """Test attribution lines rebuild into results."""
    record = {
        "id": "t1",
        "strategy": "verify",
        "pairs": [{"agent": "Solver", "error": "fm-3.2"}],
        "entailed_unattributed": ["FM-3.1"],
        "verdicts": {"FM-3.2": {"label": "A", "agents": ["Solver"]}},
    }
    result = result_from_record(record)
    assert result.pairs == AttributionSet.of([("Solver", "FM-3.2")])
    assert result.entailed_unattributed == ("FM-3.1",)
    assert result.verdicts["FM-3.2"].agents == ("Solver",)


def test_result_from_malformed_record():
    """Test malformed lines raise ConfigError."""
    with pytest.raises(ConfigError):
        result_from_record({"pairs": [{"agent": "Solver"}]})
