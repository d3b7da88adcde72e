"""Trajectory data model, record parsing, rendering and source adapters."""
from collections import Counter
from dataclasses import dataclass, field
import hashlib
import json
import logging
from pathlib import Path
import random
import re
from typing import TYPE_CHECKING, Any, Callable, Iterable, Iterator, Mapping, Optional, Union

import voluptuous as vol

from .const import (
    DEFAULT_RENDER_BUDGET,
    DEFAULT_SEED,
    DEFAULT_TEST_PER_GROUP,
    DEFAULT_VAL_RATIO,
    ERROR_CODE_PATTERN,
)
from .exceptions import (
    ConfigError,
    DatasetError,
    TaxonomyError,
    TrajectoryError,
    UnmappableLabelError,
)
from .prompts import build_map_label_prompt
from .taxonomy import Taxonomy, load_default_taxonomy

if TYPE_CHECKING:
    from .verifier import VerifierClient

_LOGGER = logging.getLogger(__name__)

_CODE_SEARCH = re.compile(ERROR_CODE_PATTERN, re.IGNORECASE)

Pair = tuple[str, str]


def _text(value: Any) -> str:
    """Coerce step content to text."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    return json.dumps(value, ensure_ascii=False, sort_keys=True)


RECORD_SCHEMA = vol.Schema(
    {
        vol.Required("id"): vol.All(vol.Coerce(str), vol.Strip, vol.Length(min=1)),
        vol.Required("task"): vol.All(str, vol.Strip, vol.Length(min=1)),
        vol.Required("steps"): vol.All(
            [
                vol.Schema(
                    {
                        vol.Required("agent"): vol.All(str, vol.Strip, vol.Length(min=1)),
                        vol.Optional("content", default=""): _text,
                    },
                    extra=vol.REMOVE_EXTRA,
                )
            ],
            vol.Length(min=1),
        ),
        vol.Optional("agents"): vol.Any(None, [vol.All(str, vol.Strip, vol.Length(min=1))]),
        vol.Optional("source"): vol.Any(None, vol.All(vol.Coerce(str), vol.Strip)),
        vol.Optional("gold"): vol.Any(
            None,
            [
                vol.Schema(
                    {
                        vol.Required("agent"): vol.All(str, vol.Strip, vol.Length(min=1)),
                        vol.Required("error"): vol.All(str, vol.Strip, vol.Upper),
                    },
                    extra=vol.REMOVE_EXTRA,
                )
            ],
        ),
    },
    extra=vol.REMOVE_EXTRA,
)


@dataclass(frozen=True)
class LogStep:
    """One action of one agent."""

    index: int
    agent: str
    content: str


@dataclass(frozen=True)
class AttributionSet:
    """A set of (agent, error-code) pairs."""

    pairs: frozenset[Pair] = frozenset()

    @classmethod
    def of(cls, pairs: Iterable[Pair]) -> "AttributionSet":
        """Build a set from any iterable of pairs."""
        return cls(frozenset((agent, error) for agent, error in pairs))

    def __iter__(self) -> Iterator[Pair]:
        return iter(sorted(self.pairs))

    def __len__(self) -> int:
        return len(self.pairs)

    def __contains__(self, pair: object) -> bool:
        return pair in self.pairs

    @property
    def agents(self) -> frozenset[str]:
        """Return the agent projection."""
        return frozenset(agent for agent, _ in self.pairs)

    @property
    def errors(self) -> frozenset[str]:
        """Return the error-code projection."""
        return frozenset(error for _, error in self.pairs)

    def to_records(self) -> list[dict[str, str]]:
        """Return the pairs as sorted record dicts."""
        return [{"agent": agent, "error": error} for agent, error in self]


@dataclass(frozen=True)
class Trajectory:
    """A full multi-agent interaction record."""

    id: str
    task: str
    steps: tuple[LogStep, ...]
    declared_agents: Optional[tuple[str, ...]] = None
    gold: Optional[tuple[Pair, ...]] = None
    source: Optional[str] = None

    @property
    def annotated(self) -> bool:
        """Return True when the record carries gold annotations."""
        return self.gold is not None

    @property
    def gold_set(self) -> AttributionSet:
        """Return the gold annotations with set semantics."""
        return AttributionSet.of(self.gold or ())

    @property
    def gold_types(self) -> tuple[str, ...]:
        """Return the distinct gold error codes in first-annotation order."""
        return tuple(dict.fromkeys(error for _, error in self.gold or ()))

    def gold_agents_for(self, code: str) -> list[str]:
        """Return the gold agents for one error code in annotation order."""
        return list(dict.fromkeys(agent for agent, error in self.gold or () if error == code))


def candidate_agents(t: Trajectory) -> list[str]:
    """Return the legal attribution targets for a trajectory."""
    if t.declared_agents:
        return list(t.declared_agents)
    return list(dict.fromkeys(step.agent for step in t.steps))


def parse_trajectory(
    doc: Mapping[str, Any],
    taxonomy: Optional[Taxonomy] = None,
    line: Optional[int] = None,
) -> Trajectory:
    """Validate one trajectory record and normalize its annotations."""
    taxonomy = taxonomy or load_default_taxonomy()
    record_id = doc.get("id") if isinstance(doc, Mapping) else None

    if not isinstance(doc, Mapping):
        raise TrajectoryError("record is not an object", record_id=None, line=line)
    task = doc.get("task")
    if not task or (isinstance(task, str) and not task.strip()):
        raise TrajectoryError("missing task", record_id=record_id, line=line)
    if not doc.get("steps"):
        raise TrajectoryError("empty steps", record_id=record_id, line=line)

    try:
        record = RECORD_SCHEMA(dict(doc))
    except vol.Invalid as err:
        raise TrajectoryError(f"invalid record: {err}", record_id=record_id, line=line) from err

    steps = tuple(
        LogStep(index=index, agent=step["agent"], content=step["content"])
        for index, step in enumerate(record["steps"])
    )
    declared = record.get("agents")
    declared_agents = tuple(dict.fromkeys(declared)) if declared else None

    trajectory = Trajectory(
        id=record["id"],
        task=record["task"],
        steps=steps,
        declared_agents=declared_agents,
        source=record.get("source") or None,
    )

    raw_gold = record.get("gold")
    if raw_gold is None:
        return trajectory

    candidates = set(candidate_agents(trajectory))
    gold: list[Pair] = []
    for entry in raw_gold:
        agent, error = entry["agent"], entry["error"]
        if agent not in candidates:
            raise TrajectoryError(
                f"gold agent {agent!r} is not a candidate agent", record_id=record["id"], line=line
            )
        try:
            error = taxonomy.normalize(error)
        except TaxonomyError:
            raise TrajectoryError(
                f"unknown error code {entry['error']!r}", record_id=record["id"], line=line
            ) from None
        gold.append((agent, error))

    return Trajectory(
        id=trajectory.id,
        task=trajectory.task,
        steps=trajectory.steps,
        declared_agents=trajectory.declared_agents,
        source=trajectory.source,
        gold=tuple(dict.fromkeys(gold)),
    )


def to_record(t: Trajectory) -> dict[str, Any]:
    """Serialize a trajectory back into the line record format."""
    record: dict[str, Any] = {
        "id": t.id,
        "task": t.task,
        "steps": [{"agent": step.agent, "content": step.content} for step in t.steps],
    }
    if t.declared_agents:
        record["agents"] = list(t.declared_agents)
    if t.source:
        record["source"] = t.source
    if t.gold is not None:
        record["gold"] = [{"agent": agent, "error": error} for agent, error in t.gold]
    return record


def _step_block(step: LogStep) -> str:
    return f"[step {step.index}] {step.agent}: {step.content}"


def _elision_marker(count: int) -> str:
    return f"... {count} steps elided ..."


def render_trajectory(t: Trajectory, budget: int = DEFAULT_RENDER_BUDGET) -> str:
    """Render a trajectory for a prompt, eliding middle steps over budget.

    The first and last steps always survive. Kept steps are added
    alternately from the front and the back while the text, including the
    elision marker, stays within `budget` characters.
    """
    if budget <= 0:
        raise ValueError("render budget must be positive")

    header = f"TASK: {t.task}"
    blocks = [_step_block(step) for step in t.steps]
    full = "\n".join([header, *blocks])
    if len(full) <= budget or len(blocks) <= 2:
        if len(full) > budget:
            _LOGGER.warning(f"Trajectory {t.id} exceeds render budget and cannot be elided")
        return full

    head = [blocks[0]]
    tail = [blocks[-1]]
    lo, hi = 1, len(blocks) - 2

    def size(extra: str = "") -> int:
        elided = hi - lo + 1 - (1 if extra else 0)
        parts = [header, *head, *tail] + ([extra] if extra else [])
        return sum(len(part) for part in parts) + len(parts) + len(_elision_marker(elided))

    take_head = True
    while lo <= hi:
        front, back = blocks[lo], blocks[hi]
        if take_head and size(front) <= budget:
            head.append(front)
            lo += 1
        elif size(back) <= budget:
            tail.insert(0, back)
            hi -= 1
        elif not take_head and size(front) <= budget:
            head.append(front)
            lo += 1
        else:
            break
        take_head = not take_head

    elided = hi - lo + 1
    if elided <= 0:
        return full
    if size() > budget:
        _LOGGER.warning(f"Trajectory {t.id}: first and last steps alone exceed render budget")
    _LOGGER.debug(f"Rendered trajectory {t.id} with {elided} of {len(blocks)} steps elided")
    return "\n".join([header, *head, _elision_marker(elided), *tail])


def trajectory_text(t: Trajectory) -> str:
    """Return the full, unelided trajectory text used for evidence search."""
    return "\n".join([t.task, *(step.content for step in t.steps)])


@dataclass
class RecordFailure:
    """A malformed record recorded by a collecting read."""

    line: int
    message: str
    record_id: Optional[str] = None

    def to_record(self) -> dict[str, Any]:
        """Return the failure as a JSON-ready dict."""
        return {"line": self.line, "id": self.record_id, "error": self.message}


@dataclass
class DatasetStream:
    """Lazy, single-consumer stream of trajectories from a line file."""

    path: Path
    taxonomy: Taxonomy
    strict: bool = True
    errors: list[RecordFailure] = field(default_factory=list)
    ok: int = 0

    def __iter__(self) -> Iterator[Trajectory]:
        try:
            handle = self.path.open("r", encoding="utf-8")
        except OSError as err:
            raise DatasetError(f"cannot read dataset: {err}", path=str(self.path)) from err

        with handle:
            for number, raw_line in enumerate(handle, start=1):
                if not raw_line.strip():
                    continue
                try:
                    doc = json.loads(raw_line)
                    trajectory = parse_trajectory(doc, self.taxonomy, line=number)
                except (json.JSONDecodeError, TrajectoryError) as err:
                    record_id = getattr(err, "record_id", None)
                    if self.strict:
                        _LOGGER.error(f"{self.path}:{number}: {err}")
                        raise DatasetError(str(err), path=str(self.path), line=number) from err
                    _LOGGER.warning(f"Skipping malformed record at line {number}: {err}")
                    self.errors.append(RecordFailure(number, str(err), record_id))
                    continue
                self.ok += 1
                yield trajectory


def load_dataset(
    path: Union[str, Path],
    taxonomy: Optional[Taxonomy] = None,
    strict: bool = True,
) -> DatasetStream:
    """Open a one-record-per-line trajectory file.

    Strict mode aborts on the first malformed record; collecting mode keeps
    going and appends to `stream.errors`.
    """
    path = Path(path)
    if not path.is_file():
        raise DatasetError("dataset file not found", path=str(path))
    return DatasetStream(path=path, taxonomy=taxonomy or load_default_taxonomy(), strict=strict)


def write_dataset(trajectories: Iterable[Trajectory], path: Union[str, Path]) -> int:
    """Write trajectories as line records and return the count."""
    count = 0
    with Path(path).open("w", encoding="utf-8") as handle:
        for trajectory in trajectories:
            handle.write(json.dumps(to_record(trajectory), ensure_ascii=False) + "\n")
            count += 1
    return count


def dataset_stats(trajectories: Iterable[Trajectory]) -> dict[str, Any]:
    """Count trajectories, gold pairs and per-type gold annotations."""
    per_error: Counter[str] = Counter()
    per_agent: Counter[str] = Counter()
    total = annotated = pairs = 0
    for trajectory in trajectories:
        total += 1
        if trajectory.annotated:
            annotated += 1
        for agent, error in trajectory.gold_set.pairs:
            pairs += 1
            per_error[error] += 1
            per_agent[agent] += 1
    return {
        "trajectories": total,
        "annotated": annotated,
        "gold_pairs": pairs,
        "per_error": dict(sorted(per_error.items())),
        "per_agent": dict(sorted(per_agent.items())),
    }


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train, validation and test partitions of one dataset."""

    train: tuple[Trajectory, ...]
    validation: tuple[Trajectory, ...]
    test: tuple[Trajectory, ...]
    groups: Mapping[str, Mapping[str, int]] = field(default_factory=dict)

    def counts(self) -> dict[str, int]:
        """Return the size of every partition."""
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}


def _split_rng(seed: int, scope: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}\x00{scope}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def split_dataset(
    trajectories: Iterable[Trajectory],
    seed: int = DEFAULT_SEED,
    test_per_group: int = DEFAULT_TEST_PER_GROUP,
    val_ratio: float = DEFAULT_VAL_RATIO,
    group_key: Optional[Callable[[Trajectory], str]] = None,
) -> DatasetSplit:
    """Split a dataset with a fixed seed.

    Up to `test_per_group` trajectories are sampled per group into the test
    set; the remainder is divided into validation (`val_ratio`) and train.
    The result depends only on the seed and the trajectory ids, not on the
    input order. Each partition keeps the input order.
    """
    if test_per_group < 0:
        raise ConfigError("test_per_group must be >= 0")
    if not 0 <= val_ratio < 1:
        raise ConfigError("val_ratio must be in [0, 1)")

    items = list(trajectories)
    position: dict[str, int] = {}
    for index, trajectory in enumerate(items):
        if trajectory.id in position:
            raise DatasetError(f"duplicate trajectory id {trajectory.id!r}")
        position[trajectory.id] = index

    grouped: dict[str, list[Trajectory]] = {}
    for trajectory in items:
        grouped.setdefault(group_key(trajectory) if group_key else "", []).append(trajectory)

    test: list[Trajectory] = []
    rest: list[Trajectory] = []
    groups: dict[str, dict[str, int]] = {}
    for name in sorted(grouped):
        members = sorted(grouped[name], key=lambda t: t.id)
        _split_rng(seed, f"test\x00{name}").shuffle(members)
        test.extend(members[:test_per_group])
        rest.extend(members[test_per_group:])
        groups[name] = {"total": len(members), "test": min(len(members), test_per_group)}
        if len(members) < test_per_group:
            _LOGGER.warning(f"Group {name or '<all>'} has only {len(members)} trajectories for the test set")

    rest.sort(key=lambda t: t.id)
    _split_rng(seed, "validation").shuffle(rest)
    cut = round(len(rest) * val_ratio)

    def ordered(part: Iterable[Trajectory]) -> tuple[Trajectory, ...]:
        return tuple(sorted(part, key=lambda t: position[t.id]))

    split = DatasetSplit(
        train=ordered(rest[cut:]),
        validation=ordered(rest[:cut]),
        test=ordered(test),
        groups=groups,
    )
    _LOGGER.info(f"Split {len(items)} trajectories into {split.counts()}")
    return split


async def map_free_text_error(
    explanation: str, taxonomy: Taxonomy, client: "VerifierClient"
) -> str:
    """Map a free-text mistake explanation onto one taxonomy code."""
    if not explanation or not explanation.strip():
        raise TrajectoryError("empty mistake explanation")
    if not len(taxonomy):
        raise TaxonomyError("empty taxonomy")

    bundle = build_map_label_prompt(explanation.strip(), taxonomy)
    attempts = client.config.retries + 1
    raw = ""
    for attempt in range(1, attempts + 1):
        raw = await client.complete(bundle)
        for match in _CODE_SEARCH.finditer(raw or ""):
            code = match.group(0).upper()
            if code in taxonomy:
                _LOGGER.debug(f"Mapped explanation to {code} on attempt {attempt}")
                return code
        _LOGGER.warning(f"Label mapping attempt {attempt}/{attempts} returned no known code")

    raise UnmappableLabelError(
        f"no taxonomy code in model response after {attempts} attempts", raw=raw
    )


@dataclass(frozen=True)
class AdapterConfig:
    """Field names of a source layout; each entry lists accepted alternatives."""

    id_fields: tuple[str, ...] = ("id",)
    task_fields: tuple[str, ...] = ("task",)
    steps_fields: tuple[str, ...] = ("steps",)
    agent_fields: tuple[str, ...] = ("agent",)
    content_fields: tuple[str, ...] = ("content",)
    gold_fields: tuple[str, ...] = ("gold",)
    gold_agent_fields: tuple[str, ...] = ("agent",)
    gold_error_fields: tuple[str, ...] = ("error",)
    source_fields: tuple[str, ...] = ("source",)


AEGIS_ADAPTER = AdapterConfig(
    id_fields=("id", "trajectory_id", "uid"),
    task_fields=("query", "task", "question", "instruction"),
    steps_fields=("history", "trajectory", "conversation_history", "messages"),
    agent_fields=("name", "agent", "agent_name", "role"),
    content_fields=("content", "message", "text"),
    gold_fields=("faulty_agents", "labels", "gold"),
    gold_agent_fields=("agent_name", "agent", "name"),
    gold_error_fields=("error_type", "error", "failure_mode"),
    source_fields=("benchmark", "source", "dataset"),
)

WHOWHEN_ADAPTER = AdapterConfig(
    id_fields=("question_ID", "id", "uid"),
    task_fields=("question", "task", "query"),
    steps_fields=("history", "steps"),
    agent_fields=("name", "role", "agent"),
    content_fields=("content", "message"),
)


def _first(raw: Mapping[str, Any], names: Iterable[str], default: Any = None) -> Any:
    for name in names:
        if name in raw and raw[name] is not None:
            return raw[name]
    return default


def _adapt_steps(raw: Mapping[str, Any], config: AdapterConfig) -> list[dict[str, Any]]:
    steps = []
    for step in _first(raw, config.steps_fields, []) or []:
        if not isinstance(step, Mapping):
            continue
        steps.append(
            {
                "agent": str(_first(step, config.agent_fields, "")).strip(),
                "content": _text(_first(step, config.content_fields, "")),
            }
        )
    return steps


def adapt_aegis_record(
    raw: Mapping[str, Any], fallback_id: str = "", config: AdapterConfig = AEGIS_ADAPTER
) -> dict[str, Any]:
    """Convert an Aegis-style record into the trajectory record format."""
    record: dict[str, Any] = {
        "id": str(_first(raw, config.id_fields, fallback_id)),
        "task": _text(_first(raw, config.task_fields, "")),
        "steps": _adapt_steps(raw, config),
    }
    source = _first(raw, config.source_fields)
    if source is not None:
        record["source"] = str(source)
    gold = _first(raw, config.gold_fields)
    if gold is not None:
        pairs = []
        for entry in gold:
            if not isinstance(entry, Mapping):
                continue
            errors = _first(entry, config.gold_error_fields, [])
            for error in errors if isinstance(errors, list) else [errors]:
                pairs.append(
                    {
                        "agent": str(_first(entry, config.gold_agent_fields, "")).strip(),
                        "error": str(error).strip().upper(),
                    }
                )
        record["gold"] = pairs
    return record


async def adapt_whowhen_record(
    raw: Mapping[str, Any],
    taxonomy: Taxonomy,
    client: "VerifierClient",
    fallback_id: str = "",
    config: AdapterConfig = WHOWHEN_ADAPTER,
) -> dict[str, Any]:
    """Convert a Who&When-style record, mapping its mistake reason to a code."""
    record: dict[str, Any] = {
        "id": str(_first(raw, config.id_fields, fallback_id)),
        "task": _text(_first(raw, config.task_fields, "")),
        "steps": _adapt_steps(raw, config),
    }
    agent = str(raw.get("mistake_agent") or "").strip()
    reason = str(raw.get("mistake_reason") or "").strip()
    if agent and reason:
        code = await map_free_text_error(reason, taxonomy, client)
        record["gold"] = [{"agent": agent, "error": code}]
    return record
