"""Tests for the verifier transports."""

import json
from unittest.mock import AsyncMock, MagicMock, patch

import pytest

from verimas.api import OpenAICompatAPI, create_transport
from verimas.api.mock import MockAPI
from verimas.config import VerifierConfig
from verimas.exceptions import AuthenticationError, ConfigError, TransportError, VerifierError
from verimas.prompts import render_verify


def _bundle(trajectory_id="t1", error_code="FM-3.2"):
    return render_verify(
        "TASK: x", "An agent erred.", ["Solver"],
        meta={"trajectory_id": trajectory_id, "error_code": error_code},
    )


def _session(status, body):
    response = MagicMock()
    response.status = status
    response.text = AsyncMock(return_value=body)
    response.json = AsyncMock(return_value=json.loads(body) if body else {})
    session = MagicMock()
    session.closed = False
    session.request.return_value.__aenter__.return_value = response
    return session


def test_completions_url():
    """Test the completions path is appended once."""
    assert OpenAICompatAPI("https://host/v1/").url == "https://host/v1/chat/completions"
    assert OpenAICompatAPI("https://host/v1/chat/completions").url == "https://host/v1/chat/completions"


@pytest.mark.asyncio
async def test_send_returns_content(monkeypatch):
    """Test the assistant text is extracted from the response."""
    monkeypatch.setenv("VERIMAS_API_KEY", "secret")
    api = OpenAICompatAPI("https://host/v1")
    body = json.dumps({"choices": [{"message": {"content": '{"label":"B","agents":[]}'}}]})
    api._session = _session(200, body)

    text = await api.send(_bundle(), model="tiny", temperature=0.0, max_tokens=64, timeout=5)

    assert text == '{"label":"B","agents":[]}'
    args, kwargs = api._session.request.call_args
    assert args == ("POST", "https://host/v1/chat/completions")
    assert kwargs["headers"]["Authorization"] == "Bearer secret"
    assert kwargs["json"]["model"] == "tiny"
    assert kwargs["json"]["max_tokens"] == 64
    assert [m["role"] for m in kwargs["json"]["messages"]] == ["system", "user"]


@pytest.mark.asyncio
async def test_missing_api_key(monkeypatch):
    """Test a missing key fails before any request."""
    monkeypatch.delenv("VERIMAS_API_KEY", raising=False)
    api = OpenAICompatAPI("https://host/v1")
    api._session = _session(200, "{}")
    with pytest.raises(AuthenticationError):
        await api.send(_bundle())
    api._session.request.assert_not_called()


@pytest.mark.asyncio
@pytest.mark.parametrize(
    "status,error",
    [(401, AuthenticationError), (403, AuthenticationError), (429, TransportError), (503, TransportError)],
)
async def test_status_mapping(monkeypatch, status, error):
    """Test HTTP failures map to verifier errors."""
    monkeypatch.setenv("VERIMAS_API_KEY", "secret")
    api = OpenAICompatAPI("https://host/v1")
    api._session = _session(status, "")
    with pytest.raises(error):
        await api.send(_bundle())


@pytest.mark.asyncio
async def test_client_error_not_retryable(monkeypatch):
    """Test other 4xx responses are plain verifier errors."""
    monkeypatch.setenv("VERIMAS_API_KEY", "secret")
    api = OpenAICompatAPI("https://host/v1")
    api._session = _session(400, '{"error": "bad"}')
    with pytest.raises(VerifierError) as err:
        await api.send(_bundle())
    assert not isinstance(err.value, TransportError)


@pytest.mark.asyncio
async def test_malformed_response():
    """Test a body without choices is a transport error."""
    api = OpenAICompatAPI("https://host/v1", api_key="secret")
    with patch.object(api, "_make_request", new_callable=AsyncMock) as mock_request:
        mock_request.return_value = {"id": "x"}
        with pytest.raises(TransportError):
            await api.send(_bundle())


def test_create_transport_selects_by_scheme():
    """Test mock endpoints get the offline transport."""
    assert isinstance(create_transport(VerifierConfig(endpoint_url="mock:neutral")), MockAPI)
    assert isinstance(create_transport(VerifierConfig(endpoint_url="http://localhost:8000/v1")), OpenAICompatAPI)


def test_mock_from_endpoint_options():
    """Test mock URL options are parsed."""
    api = MockAPI.from_endpoint("mock:contradict?fail=t3,t4:FM-1.1&jitter=0.5&seed=9")
    assert api.mode == "contradict"
    assert api.fail == {"t3", "t4:FM-1.1"}
    assert api.jitter == 0.5


@pytest.mark.parametrize("url", ["mock:sideways", "mock:script", "mock:neutral?jitter=abc"])
def test_mock_from_endpoint_rejects(url):
    """Test invalid mock endpoints are configuration errors."""
    with pytest.raises(ConfigError):
        MockAPI.from_endpoint(url)


@pytest.mark.asyncio
async def test_mock_fail_single_hypothesis():
    """Test a listed hypothesis fails while others answer."""
    api = MockAPI(mode="neutral", fail=["t1:FM-3.2"])
    with pytest.raises(TransportError):
        await api.send(_bundle("t1", "FM-3.2"))
    assert await api.send(_bundle("t1", "FM-1.1")) == '{"label":"B","agents":[]}'
    assert len(api.calls) == 2


@pytest.mark.asyncio
async def test_mock_script(tmp_path):
    """Test scripted answers by error code."""
    path = tmp_path / "script.json"
    path.write_text(
        json.dumps({"t1": {"FM-3.2": {"label": "A", "agents": ["Solver"]}, "FM-1.1": "garbage"}}),
        encoding="utf-8",
    )
    api = MockAPI.from_endpoint(f"mock:script?path={path}")
    assert await api.send(_bundle("t1", "FM-3.2")) == '{"label":"A","agents":["Solver"]}'
    assert await api.send(_bundle("t1", "FM-1.1")) == "garbage"
    assert await api.send(_bundle("t1", "FM-2.2")) == '{"label":"B","agents":[]}'


@pytest.mark.parametrize(
    "entry",
    [{"label": "B", "agents": ["X"]}, {"label": "Q"}, {"label": "A", "agents": "Solver"}],
)
def test_mock_script_rejects_bad_verdicts(tmp_path, entry):
    """Test script entries that cannot be serialized fail at load time."""
    path = tmp_path / "script.json"
    path.write_text(json.dumps({"t1": {"FM-3.2": entry}}), encoding="utf-8")
    with pytest.raises(ConfigError, match="t1/FM-3.2"):
        MockAPI.from_endpoint(f"mock:script?path={path}")
    with pytest.raises(ConfigError):
        MockAPI(mode="script", script={"t1": {"FM-3.2": entry}})


@pytest.mark.asyncio
async def test_mock_oracle_unknown_trajectory():
    """Test the oracle answers neutral for unregistered ids."""
    api = MockAPI()
    assert await api.send(_bundle("nobody")) == '{"label":"B","agents":[]}'
