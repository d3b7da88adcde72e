"""Verifier endpoint client, verification prompts and verdict parsing."""
import asyncio
from dataclasses import dataclass, field
import json
import logging
import re
from typing import Any, Iterable, Mapping, Optional, Protocol, Sequence

from .api import Transport, create_transport
from .config import VerifierConfig
from .const import (
    DEFAULT_RENDER_BUDGET,
    LABEL_CONTRADICT,
    LABEL_ENTAIL,
    LABEL_NEUTRAL,
    LABELS,
)
from .exceptions import AuthenticationError, ConfigError, TransportError, VerifierTimeout
from .prompts import PromptBundle, render_verify
from .taxonomy import Taxonomy, load_default_taxonomy
from .trajectory import Trajectory, candidate_agents, render_trajectory

_LOGGER = logging.getLogger(__name__)

_FENCE_RE = re.compile(r"```[a-zA-Z]*")  # whole-line only
_OBJECT_RE = re.compile(r"\{[^{}]*\}")


@dataclass(frozen=True)
class Verdict:
    """One verification outcome."""

    label: str
    agents: tuple[str, ...] = ()
    raw: str = ""
    diagnostics: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        if self.label not in LABELS:
            raise ValueError(f"invalid verdict label {self.label!r}")
        if self.label != LABEL_ENTAIL and self.agents:
            raise ValueError(f"label {self.label} cannot carry agents")
        if len(set(self.agents)) != len(self.agents):
            raise ValueError("duplicate agents in verdict")

    def to_record(self) -> dict[str, Any]:
        """Return the label/agents pair as a JSON-ready dict."""
        return {"label": self.label, "agents": list(self.agents)}


NEUTRAL_VERDICT = Verdict(LABEL_NEUTRAL)
CONTRADICT_VERDICT = Verdict(LABEL_CONTRADICT)


def _line_objects(line: str) -> list[dict[str, Any]]:
    """Return the verdict objects on one line, whole-line JSON first."""
    try:
        obj = json.loads(line)
    except ValueError:
        obj = None
    if isinstance(obj, dict):
        return [obj] if "label" in obj else []

    objects = []
    for match in _OBJECT_RE.finditer(line):
        try:
            obj = json.loads(match.group(0))
        except ValueError:
            continue
        if isinstance(obj, dict) and "label" in obj:
            objects.append(obj)
    return objects


def _agent_entries(obj: Mapping[str, Any]) -> list[Any]:
    value = obj.get("agents", obj.get("agent", []))
    if value is None:
        return []
    if isinstance(value, (list, tuple)):
        return list(value)
    return [value]


def parse_verdict(raw: str, candidates: Sequence[str]) -> Verdict:
    """Parse a verifier response into a Verdict.

    Never raises on malformed output: unparseable responses and labels
    outside A/B/C fall back to neutral, and every repair is recorded in
    `diagnostics`.
    """
    if not candidates:
        raise ValueError("candidate agent list must be non-empty")

    diagnostics: list[str] = []
    objects: list[dict[str, Any]] = []
    fenced = False
    unparsed = 0
    # Only "\n" separates lines: agent names may contain other line breaks.
    for line in (raw or "").split("\n"):
        stripped = line.strip()
        if not stripped:
            continue
        if _FENCE_RE.fullmatch(stripped):
            fenced = True
            continue
        found = _line_objects(stripped)
        objects.extend(found)
        if not found:
            unparsed += 1
    if fenced:
        diagnostics.append("stripped code fences")
    if unparsed:
        diagnostics.append(f"ignored {unparsed} unparsed line(s)")

    if not objects:
        diagnostics.append("no verdict object found; defaulting to B")
        return Verdict(LABEL_NEUTRAL, (), raw or "", tuple(diagnostics))

    label = str(objects[0]["label"]).strip().upper()
    if label not in LABELS:
        diagnostics.append(f"invalid label {objects[0]['label']!r}; defaulting to B")
        return Verdict(LABEL_NEUTRAL, (), raw or "", tuple(diagnostics))

    if any(str(obj["label"]).strip().upper() != label for obj in objects[1:]):
        diagnostics.append(f"conflicting labels; kept first label {label}")

    allowed = set(candidates)
    agents: list[str] = []
    for obj in objects:
        for entry in _agent_entries(obj):
            name = str(entry)
            if name not in allowed:
                name = name.strip()
            if name in allowed:
                if name not in agents:
                    agents.append(name)
            else:
                diagnostics.append(f"dropped unknown agent {name}")

    if label != LABEL_ENTAIL and agents:
        diagnostics.append(f"discarded agents for label {label}")
        agents = []

    if diagnostics:
        _LOGGER.debug(f"Verdict parse notes: {'; '.join(diagnostics)}")
    return Verdict(label, tuple(agents), raw or "", tuple(diagnostics))


def build_verify_prompt(
    t: Trajectory,
    hypothesis: str,
    agents: Sequence[str],
    budget: int = DEFAULT_RENDER_BUDGET,
    error_code: Optional[str] = None,
) -> PromptBundle:
    """Build the verification prompt for one trajectory/hypothesis pair."""
    if not agents:
        raise ConfigError("candidate agent list must be non-empty")
    if not hypothesis or not hypothesis.strip():
        raise ConfigError("hypothesis must be non-empty")
    return render_verify(
        render_trajectory(t, budget),
        hypothesis,
        list(agents),
        meta={"trajectory_id": t.id, "error_code": error_code},
    )


@dataclass(frozen=True)
class VerdictTable:
    """Scripted verdicts keyed by (trajectory id, error code)."""

    entries: Mapping[tuple[str, str], Verdict] = field(default_factory=dict)

    @classmethod
    def oracle(
        cls, trajectories: Iterable[Trajectory], taxonomy: Optional[Taxonomy] = None
    ) -> "VerdictTable":
        """Build the gold-derived table: gold errors entail, everything else contradicts."""
        taxonomy = taxonomy or load_default_taxonomy()
        entries: dict[tuple[str, str], Verdict] = {}
        for trajectory in trajectories:
            entries.update(oracle_entries(trajectory, taxonomy))
        return cls(entries)

    def lookup(self, trajectory_id: str, error_code: str) -> Verdict:
        """Return the scripted verdict, neutral when absent."""
        return self.entries.get((trajectory_id, error_code), NEUTRAL_VERDICT)


def oracle_entries(t: Trajectory, taxonomy: Taxonomy) -> dict[tuple[str, str], Verdict]:
    """Return the oracle verdicts of one trajectory."""
    entries = {}
    for code in taxonomy.codes:
        agents = t.gold_agents_for(code)
        if agents:
            entries[(t.id, code)] = Verdict(LABEL_ENTAIL, tuple(agents))
        else:
            entries[(t.id, code)] = CONTRADICT_VERDICT
    return entries


def scripted_verdict(table: VerdictTable, trajectory_id: str, error_code: str) -> Verdict:
    """Look up a scripted verdict."""
    return table.lookup(trajectory_id, error_code)


class CompletionClient(Protocol):
    """Anything that turns a prompt bundle into response text."""

    config: VerifierConfig

    async def complete(self, bundle: PromptBundle) -> str:
        """Return the assistant text for a bundle."""


class VerifierClient:
    """Chat-completion client with retries and a bounded request pool."""

    def __init__(self, config: VerifierConfig, transport: Optional[Transport] = None):
        """Initialize the client."""
        self.config = config
        self.transport = transport or create_transport(config)
        self._semaphore: Optional[asyncio.Semaphore] = None
        self.requests = 0

    def _get_semaphore(self) -> asyncio.Semaphore:
        if self._semaphore is None:
            self._semaphore = asyncio.Semaphore(self.config.concurrency_limit)
        return self._semaphore

    async def complete(self, bundle: PromptBundle) -> str:
        """Send one request, retrying transport failures with exponential backoff."""
        attempts = self.config.retries + 1
        last_error: Exception = TransportError("no request attempted")

        for attempt in range(attempts):
            try:
                async with self._get_semaphore():
                    self.requests += 1
                    _LOGGER.debug(
                        f"{bundle.strategy}/{bundle.stage} request "
                        f"{dict(bundle.meta)} attempt {attempt + 1}/{attempts}"
                    )
                    return await self.transport.send(
                        bundle,
                        model=self.config.model_name,
                        temperature=self.config.temperature,
                        max_tokens=self.config.max_output,
                        timeout=self.config.timeout,
                    )
            except AuthenticationError:
                _LOGGER.error("Verifier endpoint rejected the credentials")
                raise
            except (TransportError, VerifierTimeout) as err:
                last_error = err
                if attempt + 1 < attempts:
                    delay = self.config.backoff * (2**attempt)
                    _LOGGER.warning(f"Verifier request failed ({err}); retrying in {delay:.1f}s")
                    await asyncio.sleep(delay)

        _LOGGER.error(f"Verifier request failed after {attempts} attempt(s): {last_error}")
        raise last_error

    async def close(self) -> None:
        """Close the transport."""
        await self.transport.close()

    async def __aenter__(self) -> "VerifierClient":
        return self

    async def __aexit__(self, *exc_info: Any) -> None:
        await self.close()


async def complete(
    config: VerifierConfig, bundle: PromptBundle, transport: Optional[Transport] = None
) -> str:
    """One-shot completion with a short-lived client."""
    async with VerifierClient(config, transport) as client:
        return await client.complete(bundle)


async def verify_hypothesis(
    client: CompletionClient,
    t: Trajectory,
    code: str,
    taxonomy: Taxonomy,
    budget: int = DEFAULT_RENDER_BUDGET,
) -> Verdict:
    """Verify one hypothesis against one trajectory."""
    candidates = candidate_agents(t)
    bundle = build_verify_prompt(
        t, taxonomy.get(code).hypothesis_text, candidates, budget, error_code=code
    )
    raw = await client.complete(bundle)
    verdict = parse_verdict(raw, candidates)
    _LOGGER.debug(f"{t.id} {code}: {verdict.label} {list(verdict.agents)}")
    return verdict

