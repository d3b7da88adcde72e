"""Zero-shot failure attribution: hypothesis verification and baseline strategies."""
import asyncio
from dataclasses import dataclass, field
import json
import logging
import re
from typing import Any, Iterable, Mapping, Union

from .const import (
    ATTRIBUTION_STRATEGIES,
    DEFAULT_RENDER_BUDGET,
    LABEL_ENTAIL,
    STAGE_AGENTS,
    STAGE_AGENTS_FOR_ERROR,
    STAGE_ERRORS,
    STAGE_ERRORS_FOR_AGENT,
    STAGE_PAIRS,
    STRATEGY_COT_AGENT,
    STRATEGY_COT_ERROR,
    STRATEGY_DIRECT_AGENT,
    STRATEGY_DIRECT_ERROR,
    STRATEGY_DPR,
    STRATEGY_VERIFY,
)
from .exceptions import AuthenticationError, ConfigError, VerifierError
from .prompts import render_baseline
from .taxonomy import Taxonomy
from .trajectory import AttributionSet, Pair, Trajectory, candidate_agents, render_trajectory
from .verifier import CompletionClient, Verdict, verify_hypothesis

_LOGGER = logging.getLogger(__name__)

_ANSWER_RE = re.compile(r"ANSWER\s*:", re.IGNORECASE)
_LIST_RE = re.compile(r"\[[^\[\]]*\]")
_OBJECT_RE = re.compile(r"\{[^{}]*\}")

STAGE_ONE = "*"

_STYLE = {
    STRATEGY_DIRECT_ERROR: "direct",
    STRATEGY_COT_ERROR: "cot",
    STRATEGY_DIRECT_AGENT: "direct",
    STRATEGY_COT_AGENT: "cot",
}


@dataclass(frozen=True)
class HypothesisFailure:
    """Marker for a hypothesis whose request failed."""

    error_code: str
    message: str


@dataclass(frozen=True)
class AttributionResult:
    """Predicted (agent, error) pairs for one trajectory plus the audit trail."""

    trajectory_id: str
    pairs: AttributionSet
    strategy: str = STRATEGY_VERIFY
    verdicts: Mapping[str, Verdict] = field(default_factory=dict)
    entailed_unattributed: tuple[str, ...] = ()
    failures: Mapping[str, str] = field(default_factory=dict)
    diagnostics: tuple[str, ...] = ()

    @property
    def ok(self) -> bool:
        """Return True when every request succeeded."""
        return not self.failures

    def to_record(self) -> dict[str, Any]:
        """Return the attribution line for this result."""
        record: dict[str, Any] = {
            "id": self.trajectory_id,
            "strategy": self.strategy,
            "pairs": self.pairs.to_records(),
            "entailed_unattributed": list(self.entailed_unattributed),
        }
        if self.strategy == STRATEGY_VERIFY:
            record["verdicts"] = {code: v.to_record() for code, v in self.verdicts.items()}
        if self.diagnostics:
            record["diagnostics"] = list(self.diagnostics)
        return record

    def failure_record(self) -> dict[str, Any]:
        """Return the error line for a partially failed result."""
        return {"id": self.trajectory_id, "strategy": self.strategy, "failures": dict(self.failures)}


def result_from_record(record: Mapping[str, Any]) -> AttributionResult:
    """Rebuild an AttributionResult from an attribution line."""
    try:
        pairs = AttributionSet.of(
            (str(item["agent"]), str(item["error"]).upper()) for item in record.get("pairs", [])
        )
        verdicts = {
            str(code): Verdict(str(value["label"]), tuple(value.get("agents", [])))
            for code, value in (record.get("verdicts") or {}).items()
        }
        return AttributionResult(
            trajectory_id=str(record["id"]),
            pairs=pairs,
            strategy=str(record.get("strategy", STRATEGY_VERIFY)),
            verdicts=verdicts,
            entailed_unattributed=tuple(
                str(code).upper() for code in record.get("entailed_unattributed", [])
            ),
        )
    except (KeyError, TypeError, ValueError) as err:
        raise ConfigError(f"malformed attribution record: {err}") from err


async def verify_all_hypotheses(
    t: Trajectory,
    taxonomy: Taxonomy,
    client: CompletionClient,
    budget: int = DEFAULT_RENDER_BUDGET,
) -> dict[str, Union[Verdict, HypothesisFailure]]:
    """Verify one hypothesis per taxonomy type, independently and concurrently."""
    if not len(taxonomy):
        raise ConfigError("taxonomy is empty")

    async def _one(code: str) -> Union[Verdict, HypothesisFailure]:
        try:
            return await verify_hypothesis(client, t, code, taxonomy, budget)
        except AuthenticationError:
            raise
        except VerifierError as err:
            _LOGGER.warning(f"{t.id} {code}: hypothesis failed: {err}")
            return HypothesisFailure(code, str(err))

    outcomes = await asyncio.gather(*(_one(code) for code in taxonomy.codes))
    return dict(zip(taxonomy.codes, outcomes))


async def attribute(
    t: Trajectory,
    taxonomy: Taxonomy,
    client: CompletionClient,
    budget: int = DEFAULT_RENDER_BUDGET,
) -> AttributionResult:
    """Run the two-stage pipeline: keep entailed hypotheses, then their agents."""
    outcomes = await verify_all_hypotheses(t, taxonomy, client, budget)

    verdicts: dict[str, Verdict] = {}
    failures: dict[str, str] = {}
    pairs: list[Pair] = []
    unattributed: list[str] = []
    diagnostics: list[str] = []
    for code, outcome in outcomes.items():
        if isinstance(outcome, HypothesisFailure):
            failures[code] = outcome.message
            continue
        verdicts[code] = outcome
        diagnostics.extend(f"{code}: {note}" for note in outcome.diagnostics)
        if outcome.label != LABEL_ENTAIL:
            continue
        if outcome.agents:
            pairs.extend((agent, code) for agent in outcome.agents)
        else:
            unattributed.append(code)

    return AttributionResult(
        trajectory_id=t.id,
        pairs=AttributionSet.of(pairs),
        strategy=STRATEGY_VERIFY,
        verdicts=verdicts,
        entailed_unattributed=tuple(unattributed),
        failures=failures,
        diagnostics=tuple(diagnostics),
    )


def parse_list_response(raw: str) -> list[str]:
    """Extract the answer list from a baseline response.

    Prefers the text after the last `ANSWER:` marker, then the last bracketed
    list. Unquoted items such as `[Solver, Critic]` are accepted.
    """
    text = raw or ""
    markers = list(_ANSWER_RE.finditer(text))
    if markers:
        text = text[markers[-1].end() :]
    lists = _LIST_RE.findall(text)
    if not lists:
        return []
    body = lists[-1] if not markers else lists[0]
    try:
        items = json.loads(body)
    except json.JSONDecodeError:
        items = [part.strip().strip("\"'`") for part in body[1:-1].split(",")]
    return [str(item).strip() for item in items if str(item).strip()]


def parse_pair_response(raw: str) -> list[Pair]:
    """Extract (agent, error) objects from a direct pair-prediction response."""
    pairs = []
    for match in _OBJECT_RE.finditer(raw or ""):
        try:
            obj = json.loads(match.group(0))
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict) and "agent" in obj and "error" in obj:
            pairs.append((str(obj["agent"]).strip(), str(obj["error"]).strip()))
    return pairs


class _Filter:
    """Restricts elicited names to the taxonomy and candidate set."""

    def __init__(self, taxonomy: Taxonomy, candidates: list[str]):
        self.taxonomy = taxonomy
        self.candidates = candidates
        self.diagnostics: list[str] = []

    def errors(self, values: Iterable[str]) -> list[str]:
        kept: list[str] = []
        for value in values:
            if value in self.taxonomy:
                code = self.taxonomy.normalize(value)
                if code not in kept:
                    kept.append(code)
            else:
                self.diagnostics.append(f"dropped unknown error {value}")
        return kept

    def agents(self, values: Iterable[str]) -> list[str]:
        kept: list[str] = []
        for value in values:
            if value in self.candidates:
                if value not in kept:
                    kept.append(value)
            else:
                self.diagnostics.append(f"dropped unknown agent {value}")
        return kept


async def _ask(
    client: CompletionClient,
    template: str,
    strategy: str,
    stage: str,
    rendered: str,
    t: Trajectory,
    taxonomy: Taxonomy,
    candidates: list[str],
    **extra: str,
) -> str:
    meta: dict[str, Any] = {"trajectory_id": t.id}
    if "error" in extra:
        meta["error_code"] = extra["error"]
    if "agent" in extra:
        meta["agent"] = extra["agent"]
    bundle = render_baseline(template, strategy, stage, rendered, taxonomy, candidates, meta, **extra)
    return await client.complete(bundle)


async def _direct_pairs(
    client: CompletionClient, t: Trajectory, taxonomy: Taxonomy, budget: int
) -> AttributionResult:
    candidates = candidate_agents(t)
    keep = _Filter(taxonomy, candidates)
    try:
        raw = await _ask(
            client, STAGE_PAIRS, STRATEGY_DPR, STAGE_PAIRS,
            render_trajectory(t, budget), t, taxonomy, candidates,
        )
    except AuthenticationError:
        raise
    except VerifierError as err:
        return AttributionResult(t.id, AttributionSet(), STRATEGY_DPR, failures={STAGE_ONE: str(err)})

    pairs = []
    for agent, error in parse_pair_response(raw):
        agents = keep.agents([agent])
        errors = keep.errors([error])
        if agents and errors:
            pairs.append((agents[0], errors[0]))
    return AttributionResult(
        t.id, AttributionSet.of(pairs), STRATEGY_DPR, diagnostics=tuple(keep.diagnostics)
    )


async def _error_first(
    client: CompletionClient, strategy: str, t: Trajectory, taxonomy: Taxonomy, budget: int
) -> AttributionResult:
    style = _STYLE[strategy]
    candidates = candidate_agents(t)
    keep = _Filter(taxonomy, candidates)
    rendered = render_trajectory(t, budget)
    try:
        raw = await _ask(
            client, f"errors_{style}", strategy, STAGE_ERRORS, rendered, t, taxonomy, candidates
        )
    except AuthenticationError:
        raise
    except VerifierError as err:
        return AttributionResult(t.id, AttributionSet(), strategy, failures={STAGE_ONE: str(err)})
    errors = keep.errors(parse_list_response(raw))

    async def _agents_for(code: str) -> Union[str, HypothesisFailure]:
        try:
            return await _ask(
                client, f"agents_for_error_{style}", strategy, STAGE_AGENTS_FOR_ERROR,
                rendered, t, taxonomy, candidates, error=code,
            )
        except AuthenticationError:
            raise
        except VerifierError as err:
            return HypothesisFailure(code, str(err))

    answers = await asyncio.gather(*(_agents_for(code) for code in errors))
    pairs: list[Pair] = []
    unattributed: list[str] = []
    failures: dict[str, str] = {}
    for code, answer in zip(errors, answers):
        if isinstance(answer, HypothesisFailure):
            failures[code] = answer.message
            continue
        agents = keep.agents(parse_list_response(answer))
        if agents:
            pairs.extend((agent, code) for agent in agents)
        else:
            unattributed.append(code)
    return AttributionResult(
        t.id,
        AttributionSet.of(pairs),
        strategy,
        entailed_unattributed=tuple(unattributed),
        failures=failures,
        diagnostics=tuple(keep.diagnostics),
    )


async def _agent_first(
    client: CompletionClient, strategy: str, t: Trajectory, taxonomy: Taxonomy, budget: int
) -> AttributionResult:
    style = _STYLE[strategy]
    candidates = candidate_agents(t)
    keep = _Filter(taxonomy, candidates)
    rendered = render_trajectory(t, budget)
    try:
        raw = await _ask(
            client, f"agents_{style}", strategy, STAGE_AGENTS, rendered, t, taxonomy, candidates
        )
    except AuthenticationError:
        raise
    except VerifierError as err:
        return AttributionResult(t.id, AttributionSet(), strategy, failures={STAGE_ONE: str(err)})
    agents = keep.agents(parse_list_response(raw))

    async def _errors_for(agent: str) -> Union[str, HypothesisFailure]:
        try:
            return await _ask(
                client, f"errors_for_agent_{style}", strategy, STAGE_ERRORS_FOR_AGENT,
                rendered, t, taxonomy, candidates, agent=agent,
            )
        except AuthenticationError:
            raise
        except VerifierError as err:
            return HypothesisFailure(agent, str(err))

    answers = await asyncio.gather(*(_errors_for(agent) for agent in agents))
    pairs: list[Pair] = []
    failures: dict[str, str] = {}
    for agent, answer in zip(agents, answers):
        if isinstance(answer, HypothesisFailure):
            failures[agent] = answer.message
            continue
        pairs.extend((agent, code) for code in keep.errors(parse_list_response(answer)))
    return AttributionResult(
        t.id,
        AttributionSet.of(pairs),
        strategy,
        failures=failures,
        diagnostics=tuple(keep.diagnostics),
    )


async def attribute_with_strategy(
    strategy: str,
    t: Trajectory,
    taxonomy: Taxonomy,
    client: CompletionClient,
    budget: int = DEFAULT_RENDER_BUDGET,
) -> AttributionResult:
    """Attribute one trajectory with any supported strategy."""
    if strategy not in ATTRIBUTION_STRATEGIES:
        raise ConfigError(
            f"unknown strategy {strategy!r}; expected one of {', '.join(ATTRIBUTION_STRATEGIES)}"
        )
    _LOGGER.debug(f"Attributing {t.id} with {strategy}")
    if strategy == STRATEGY_VERIFY:
        result = await attribute(t, taxonomy, client, budget)
    elif strategy == STRATEGY_DPR:
        result = await _direct_pairs(client, t, taxonomy, budget)
    elif strategy in (STRATEGY_DIRECT_ERROR, STRATEGY_COT_ERROR):
        result = await _error_first(client, strategy, t, taxonomy, budget)
    else:
        result = await _agent_first(client, strategy, t, taxonomy, budget)

    if result.diagnostics:
        _LOGGER.debug(f"{t.id}: {len(result.diagnostics)} parse note(s)")
    return result


def golds_from(trajectories: Iterable[Trajectory]) -> dict[str, AttributionSet]:
    """Return the gold set of every trajectory keyed by id."""
    return {t.id: t.gold_set for t in trajectories}


__all__ = [
    "AttributionResult",
    "HypothesisFailure",
    "attribute",
    "attribute_with_strategy",
    "golds_from",
    "parse_list_response",
    "parse_pair_response",
    "result_from_record",
    "verify_all_hypotheses",
]
