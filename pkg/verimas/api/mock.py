"""Offline transport answering prompts from gold annotations or a script file."""
import asyncio
import json
import logging
from pathlib import Path
import random
import re
from typing import Any, Iterable, Mapping, Optional, Union
from urllib.parse import parse_qs, urlsplit

from ..const import (
    ERROR_CODE_PATTERN,
    LABEL_CONTRADICT,
    LABEL_ENTAIL,
    LABEL_NEUTRAL,
    MOCK_SCHEME,
    STAGE_AGENTS,
    STAGE_AGENTS_FOR_ERROR,
    STAGE_ERRORS,
    STAGE_ERRORS_FOR_AGENT,
    STAGE_MAP_LABEL,
    STAGE_PAIRS,
    STAGE_VERIFY,
)
from ..dataconstruct import serialize_target
from ..exceptions import ConfigError, SerializationError, TransportError
from ..prompts import PromptBundle
from ..trajectory import Trajectory

_LOGGER = logging.getLogger(__name__)

MODE_ORACLE = "oracle"
MODE_NEUTRAL = "neutral"
MODE_CONTRADICT = "contradict"
MODE_SCRIPT = "script"
MODES = (MODE_ORACLE, MODE_NEUTRAL, MODE_CONTRADICT, MODE_SCRIPT)

_CODE_SEARCH = re.compile(ERROR_CODE_PATTERN, re.IGNORECASE)
_EMPTY_LIST = "[]"


def _as_list(values: Iterable[str]) -> str:
    return json.dumps(list(values), ensure_ascii=False)


class MockAPI:
    """Answer every prompt stage without a network.

    Endpoint forms:
        mock:oracle                  answers from registered gold annotations
        mock:neutral / mock:contradict
        mock:script?path=<file>      JSON table {trajectory id: {key: response}}

    Query options: `fail=<id>[,<id>:<code>]` raises a transport error for the
    listed trajectories (or single hypotheses), `jitter=<seconds>` sleeps a
    random time before answering and `seed=<n>` seeds that randomness.
    """

    def __init__(
        self,
        mode: str = MODE_ORACLE,
        script: Optional[Mapping[str, Mapping[str, Any]]] = None,
        fail: Iterable[str] = (),
        jitter: float = 0.0,
        seed: int = 0,
        trajectories: Iterable[Trajectory] = (),
    ):
        """Initialize the mock."""
        if mode not in MODES:
            raise ConfigError(f"unknown mock mode {mode!r}; expected one of {', '.join(MODES)}")
        if jitter < 0:
            raise ConfigError("mock jitter must be >= 0")
        self.mode = mode
        self.script = {str(key): dict(value) for key, value in (script or {}).items()}
        check_script(self.script)
        self.fail = frozenset(item.strip() for item in fail if item.strip())
        self.jitter = jitter
        self._rng = random.Random(seed)
        self._gold: dict[str, Trajectory] = {}
        self.calls: list[tuple[str, Optional[str], Optional[str]]] = []
        for trajectory in trajectories:
            self.register(trajectory)

    @classmethod
    def from_endpoint(cls, endpoint_url: str, **kwargs: Any) -> "MockAPI":
        """Parse a `mock:` endpoint URL."""
        parts = urlsplit(endpoint_url)
        if parts.scheme != MOCK_SCHEME:
            raise ConfigError(f"not a mock endpoint: {endpoint_url}")
        mode = (parts.path or parts.netloc or MODE_ORACLE).strip("/")
        query = {key: values[-1] for key, values in parse_qs(parts.query).items()}

        script = None
        if mode == MODE_SCRIPT:
            if "path" not in query:
                raise ConfigError("mock:script requires a path=<file> option")
            script = load_script(query["path"])

        try:
            jitter = float(query.get("jitter", 0))
            seed = int(query.get("seed", 0))
        except ValueError as err:
            raise ConfigError(f"invalid mock endpoint option: {err}") from err

        fail = query.get("fail", "").split(",") if query.get("fail") else []
        return cls(mode=mode, script=script, fail=fail, jitter=jitter, seed=seed, **kwargs)

    def register(self, trajectory: Trajectory) -> None:
        """Make a trajectory's gold annotations available to the oracle."""
        self._gold[trajectory.id] = trajectory

    async def close(self) -> None:
        """Nothing to release."""

    async def send(self, bundle: PromptBundle, **options: Any) -> str:
        """Return the scripted answer for a bundle."""
        trajectory_id = bundle.meta.get("trajectory_id")
        key = bundle.meta.get("error_code") or bundle.meta.get("agent")
        self.calls.append((bundle.stage, trajectory_id, key))

        if self.jitter:
            await asyncio.sleep(self._rng.uniform(0, self.jitter))

        if trajectory_id in self.fail or f"{trajectory_id}:{key}" in self.fail:
            _LOGGER.debug(f"Simulated failure for {trajectory_id} {key or ''}")
            raise TransportError(f"simulated failure for {trajectory_id}")

        if bundle.stage == STAGE_MAP_LABEL:
            return self._map_label(str(bundle.meta.get("explanation", "")))
        if self.mode == MODE_SCRIPT:
            return self._scripted(bundle, trajectory_id)
        if self.mode == MODE_ORACLE:
            return self._oracle(bundle, trajectory_id)
        if bundle.stage == STAGE_VERIFY:
            label = LABEL_NEUTRAL if self.mode == MODE_NEUTRAL else LABEL_CONTRADICT
            return serialize_target(label, [])
        return _EMPTY_LIST

    def _map_label(self, explanation: str) -> str:
        match = _CODE_SEARCH.search(explanation)
        return match.group(0).upper() if match else "unknown"

    def _scripted(self, bundle: PromptBundle, trajectory_id: Optional[str]) -> str:
        entries = self.script.get(str(trajectory_id), {})
        if bundle.stage == STAGE_VERIFY:
            lookup = str(bundle.meta.get("error_code"))
        elif bundle.stage == STAGE_AGENTS_FOR_ERROR:
            lookup = f"{bundle.stage}:{bundle.meta.get('error_code')}"
        elif bundle.stage == STAGE_ERRORS_FOR_AGENT:
            lookup = f"{bundle.stage}:{bundle.meta.get('agent')}"
        else:
            lookup = bundle.stage

        value = entries.get(lookup)
        if value is None:
            if bundle.stage == STAGE_VERIFY:
                return serialize_target(LABEL_NEUTRAL, [])
            return _EMPTY_LIST
        if isinstance(value, Mapping):
            return serialize_target(str(value.get("label", LABEL_NEUTRAL)), value.get("agents", []))
        if isinstance(value, list):
            return _as_list(value)
        return str(value)

    def _oracle(self, bundle: PromptBundle, trajectory_id: Optional[str]) -> str:
        trajectory = self._gold.get(str(trajectory_id))
        if trajectory is None:
            _LOGGER.warning(f"Oracle has no gold for trajectory {trajectory_id}")
            if bundle.stage == STAGE_VERIFY:
                return serialize_target(LABEL_NEUTRAL, [])
            return _EMPTY_LIST

        if bundle.stage == STAGE_VERIFY:
            agents = trajectory.gold_agents_for(str(bundle.meta.get("error_code")))
            if agents:
                return serialize_target(LABEL_ENTAIL, agents)
            return serialize_target(LABEL_CONTRADICT, [])
        if bundle.stage == STAGE_PAIRS:
            return "\n".join(
                json.dumps({"agent": agent, "error": error}, ensure_ascii=False)
                for agent, error in trajectory.gold_set
            ) or _EMPTY_LIST
        if bundle.stage == STAGE_ERRORS:
            return _as_list(trajectory.gold_types)
        if bundle.stage == STAGE_AGENTS_FOR_ERROR:
            return _as_list(trajectory.gold_agents_for(str(bundle.meta.get("error_code"))))
        if bundle.stage == STAGE_AGENTS:
            return _as_list(dict.fromkeys(agent for agent, _ in trajectory.gold or ()))
        if bundle.stage == STAGE_ERRORS_FOR_AGENT:
            agent = bundle.meta.get("agent")
            return _as_list(
                dict.fromkeys(error for name, error in trajectory.gold or () if name == agent)
            )
        return _EMPTY_LIST


def load_script(path: Union[str, Path]) -> dict[str, dict[str, Any]]:
    """Read a mock script table."""
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read mock script {path}: {err}") from err
    if not isinstance(document, dict) or not all(isinstance(v, dict) for v in document.values()):
        raise ConfigError(f"mock script {path} must map trajectory ids to objects")
    check_script(document, f"mock script {path}")
    return document


def check_script(script: Mapping[str, Mapping[str, Any]], source: str = "mock script") -> None:
    """Reject verdict entries that could not be serialized as a verifier answer."""
    for trajectory_id, entries in script.items():
        for key, value in entries.items():
            if not isinstance(value, Mapping):
                continue
            agents = value.get("agents", [])
            try:
                if not isinstance(agents, list):
                    raise SerializationError("agents must be a list")
                serialize_target(str(value.get("label", LABEL_NEUTRAL)), agents)
            except SerializationError as err:
                raise ConfigError(f"{source}: entry {trajectory_id}/{key}: {err}") from err
