"""Shared pytest configuration and fixtures."""

import json
import random

import pytest

from verimas.api.mock import MockAPI
from verimas.config import VerifierConfig
from verimas.taxonomy import load_default_taxonomy
from verimas.trajectory import parse_trajectory
from verimas.verifier import VerifierClient

AGENT_POOL = ("Planner", "Solver", "Critic", "Coder", "Reviewer", "Auditor")


@pytest.fixture
def taxonomy():
    """Return the shipped taxonomy."""
    return load_default_taxonomy()


@pytest.fixture
def verifier_config():
    """Return a mock-endpoint config without retries or backoff."""
    return VerifierConfig(endpoint_url="mock:oracle", retries=0, backoff=0.0, concurrency_limit=4)


@pytest.fixture
def make_record():
    """Build a trajectory record dict."""

    def _make(
        trajectory_id="t1",
        agents=("Planner", "Solver", "Critic"),
        gold=(),
        contents=None,
        task="Sort the list of numbers.",
    ):
        contents = contents or {}
        record = {
            "id": trajectory_id,
            "task": task,
            "steps": [
                {"agent": agent, "content": contents.get(agent, f"{agent} posted an update.")}
                for agent in agents
            ],
        }
        if gold is not None:
            record["gold"] = [{"agent": agent, "error": error} for agent, error in gold]
        return record

    return _make


@pytest.fixture
def make_trajectory(make_record, taxonomy):
    """Build a parsed trajectory."""

    def _make(*args, **kwargs):
        return parse_trajectory(make_record(*args, **kwargs), taxonomy)

    return _make


@pytest.fixture
def synthetic_records(taxonomy):
    """Random annotated records drawn from a six-agent pool and the 14 codes."""

    def _make(count, seed=0):
        rng = random.Random(seed)
        records = []
        for index in range(count):
            agents = rng.sample(AGENT_POOL, rng.randint(2, 4))
            codes = rng.sample(taxonomy.codes, rng.randint(1, 3))
            gold = []
            for code in codes:
                for agent in rng.sample(agents, rng.randint(1, 2)):
                    gold.append({"agent": agent, "error": code})
            records.append(
                {
                    "id": f"traj-{index:03d}",
                    "task": f"Task number {index}.",
                    "steps": [
                        {"agent": agent, "content": f"{agent} posted update {step}."}
                        for step, agent in enumerate(agents)
                    ],
                    "gold": gold,
                }
            )
        return records

    return _make


@pytest.fixture
def write_jsonl(tmp_path):
    """Write records one per line and return the path."""

    def _write(name, records):
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as handle:
            for record in records:
                line = record if isinstance(record, str) else json.dumps(record)
                handle.write(line + "\n")
        return path

    return _write


@pytest.fixture
def mock_client(verifier_config):
    """Return a client backed by an offline MockAPI."""

    def _make(trajectories=(), **kwargs):
        return VerifierClient(verifier_config, MockAPI(trajectories=trajectories, **kwargs))

    return _make
