"""Hypothesis-verification fine-tuning corpus construction."""
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
import hashlib
import json
import logging
from pathlib import Path
import random
from typing import Any, Iterable, Optional, Sequence, Union

import yaml

from .config import BuildConfig
from .const import (
    LABEL_CONTRADICT,
    LABEL_ENTAIL,
    LABEL_NEUTRAL,
    LABELS,
    PROVENANCE_COUNTER_EVIDENCE,
    PROVENANCE_GOLD,
    PROVENANCE_NEARBY_NEUTRAL,
    PROVENANCE_OVERSAMPLE,
    REFERENCE_SPLIT,
    TRAINING_CONFIG,
)
from .exceptions import SerializationError, TrajectoryError
from .taxonomy import Taxonomy, counter_evidence_match, nearby_of
from .trajectory import Trajectory, candidate_agents, trajectory_text
from .verifier import build_verify_prompt

_LOGGER = logging.getLogger(__name__)


def serialize_target(label: str, agents: Sequence[str]) -> str:
    """Serialize a label and its agents in the verifier's output format.

    Entail with agents gives one line per agent; every other case is a
    single object with an empty agent list.
    """
    if label not in LABELS:
        raise SerializationError(f"invalid label {label!r}")
    agents = list(agents)
    if agents and label != LABEL_ENTAIL:
        raise SerializationError(f"label {label} cannot carry agents")
    if not agents:
        return json.dumps({"label": label, "agents": []}, separators=(",", ":"))
    return "\n".join(
        json.dumps({"label": label, "agents": [agent]}, separators=(",", ":"), ensure_ascii=False)
        for agent in agents
    )


@dataclass(frozen=True)
class SftInstance:
    """One training example."""

    trajectory_id: str
    error_code: str
    input_system: str
    input_user: str
    target: str
    label: str
    provenance: str
    agents: tuple[str, ...] = ()
    matched_phrases: tuple[str, ...] = ()
    duplicate_of: Optional[int] = None

    def to_record(self) -> dict[str, Any]:
        """Return the corpus line for this instance."""
        record: dict[str, Any] = {
            "id": self.trajectory_id,
            "error": self.error_code,
            "label": self.label,
            "provenance": self.provenance,
            "messages": [
                {"role": "system", "content": self.input_system},
                {"role": "user", "content": self.input_user},
                {"role": "assistant", "content": self.target},
            ],
        }
        if self.provenance == PROVENANCE_COUNTER_EVIDENCE:
            record["matched_phrases"] = list(self.matched_phrases)
        if self.duplicate_of is not None:
            record["duplicate_of"] = self.duplicate_of
        return record


@dataclass
class CorpusStats:
    """Label, error and agent distribution of a built corpus."""

    total: int = 0
    per_label: dict[str, int] = field(default_factory=lambda: {label: 0 for label in LABELS})
    per_error: dict[str, int] = field(default_factory=dict)
    per_agent: dict[str, int] = field(default_factory=dict)
    per_provenance: dict[str, int] = field(default_factory=dict)
    trajectories: int = 0
    skipped: list[str] = field(default_factory=list)

    @property
    def ratios(self) -> dict[str, float]:
        """Return per-label shares of the corpus."""
        if not self.total:
            return {label: 0.0 for label in LABELS}
        return {label: count / self.total for label, count in self.per_label.items()}

    @classmethod
    def collect(
        cls, instances: Iterable[SftInstance], trajectories: int = 0, skipped: Iterable[str] = ()
    ) -> "CorpusStats":
        """Count a corpus."""
        labels: Counter[str] = Counter()
        errors: Counter[str] = Counter()
        agents: Counter[str] = Counter()
        provenance: Counter[str] = Counter()
        total = 0
        for instance in instances:
            total += 1
            labels[instance.label] += 1
            errors[instance.error_code] += 1
            provenance[instance.provenance] += 1
            if instance.label == LABEL_ENTAIL:
                agents.update(instance.agents)
        return cls(
            total=total,
            per_label={label: labels[label] for label in LABELS},
            per_error=dict(sorted(errors.items())),
            per_agent=dict(sorted(agents.items())),
            per_provenance=dict(sorted(provenance.items())),
            trajectories=trajectories,
            skipped=list(skipped),
        )

    def to_dict(self) -> dict[str, Any]:
        """Return the stats document."""
        data = asdict(self)
        data["ratios"] = self.ratios
        data["reference_ratios"] = dict(REFERENCE_SPLIT)
        return data


def _rng(seed: int, trajectory_id: str, phase: str) -> random.Random:
    """Return a random stream keyed by seed, trajectory and sampling phase."""
    digest = hashlib.sha256(f"{seed}\x00{trajectory_id}\x00{phase}".encode("utf-8")).digest()
    return random.Random(int.from_bytes(digest[:8], "big"))


def _code_order(taxonomy: Taxonomy) -> dict[str, int]:
    return {code: index for index, code in enumerate(taxonomy.codes)}


def _instance(
    t: Trajectory,
    taxonomy: Taxonomy,
    cfg: BuildConfig,
    code: str,
    label: str,
    provenance: str,
    agents: Sequence[str] = (),
    matched: Sequence[str] = (),
) -> SftInstance:
    bundle = build_verify_prompt(
        t,
        taxonomy.get(code).hypothesis_text,
        candidate_agents(t),
        cfg.render_budget,
        error_code=code,
    )
    return SftInstance(
        trajectory_id=t.id,
        error_code=code,
        input_system=bundle.system_text,
        input_user=bundle.user_text,
        target=serialize_target(label, agents),
        label=label,
        provenance=provenance,
        agents=tuple(agents),
        matched_phrases=tuple(matched),
    )


def build_entail_instances(t: Trajectory, taxonomy: Taxonomy, cfg: BuildConfig) -> list[SftInstance]:
    """One entail instance per distinct gold error type."""
    if not t.gold:
        _LOGGER.warning(f"Trajectory {t.id} has no gold annotations; no entail instances")
        return []
    order = _code_order(taxonomy)
    codes = sorted(t.gold_types, key=lambda code: order.get(code, len(order)))
    return [
        _instance(t, taxonomy, cfg, code, LABEL_ENTAIL, PROVENANCE_GOLD, t.gold_agents_for(code))
        for code in codes
    ]


def _absent_codes(t: Trajectory, taxonomy: Taxonomy) -> list[str]:
    present = set(t.gold_types)
    return [code for code in taxonomy.codes if code not in present]


def _nearby_of_gold(t: Trajectory, taxonomy: Taxonomy) -> set[str]:
    nearby: set[str] = set()
    for code in t.gold_types:
        if code in taxonomy:
            nearby.update(nearby_of(taxonomy, code))
    return nearby


def build_contradict_instances(
    t: Trajectory,
    taxonomy: Taxonomy,
    cfg: BuildConfig,
    rng: Optional[random.Random] = None,
) -> list[SftInstance]:
    """Sample absent error types whose counter-evidence shows up in the trajectory."""
    rng = rng or _rng(cfg.seed, t.id, "contradict")
    text = trajectory_text(t)
    matches = {}
    for code in _absent_codes(t, taxonomy):
        found = counter_evidence_match(taxonomy, code, text)
        if found:
            matches[code] = found
    if not matches or not cfg.contradict_per_trajectory:
        return []

    nearby = _nearby_of_gold(t, taxonomy)
    preferred = [code for code in matches if code in nearby]
    rest = [code for code in matches if code not in nearby]
    wanted = cfg.contradict_per_trajectory
    if len(preferred) >= wanted:
        chosen = rng.sample(preferred, wanted)
    else:
        chosen = preferred + rng.sample(rest, min(len(rest), wanted - len(preferred)))

    order = _code_order(taxonomy)
    chosen.sort(key=order.__getitem__)
    _LOGGER.debug(f"{t.id}: contradict {chosen} from pool of {len(matches)}")
    return [
        _instance(
            t, taxonomy, cfg, code, LABEL_CONTRADICT, PROVENANCE_COUNTER_EVIDENCE, matched=matches[code]
        )
        for code in chosen
    ]


def build_neutral_instances(
    t: Trajectory,
    taxonomy: Taxonomy,
    cfg: BuildConfig,
    rng: Optional[random.Random] = None,
) -> list[SftInstance]:
    """Sample absent nearby error types without counter-evidence as hard neutrals."""
    rng = rng or _rng(cfg.seed, t.id, "neutral")
    if not cfg.neutral_per_trajectory:
        return []
    text = trajectory_text(t)
    nearby = _nearby_of_gold(t, taxonomy)
    pool = [
        code
        for code in _absent_codes(t, taxonomy)
        if code in nearby and not counter_evidence_match(taxonomy, code, text)
    ]
    chosen = rng.sample(pool, min(len(pool), cfg.neutral_per_trajectory))

    order = _code_order(taxonomy)
    chosen.sort(key=order.__getitem__)
    return [
        _instance(t, taxonomy, cfg, code, LABEL_NEUTRAL, PROVENANCE_NEARBY_NEUTRAL)
        for code in chosen
    ]


def oversample_rare_agents(instances: Sequence[SftInstance], cfg: BuildConfig) -> list[SftInstance]:
    """Append copies of entail instances that name a rare agent."""
    output = list(instances)
    if cfg.oversample_factor <= 1:
        return output

    counts: Counter[str] = Counter()
    for instance in instances:
        if instance.label == LABEL_ENTAIL:
            counts.update(set(instance.agents))
    rare = {agent for agent, count in counts.items() if count < cfg.rare_agent_threshold}
    if not rare:
        return output

    for index, instance in enumerate(instances):
        if instance.label != LABEL_ENTAIL or not rare.intersection(instance.agents):
            continue
        for _ in range(cfg.oversample_factor - 1):
            output.append(
                replace(instance, provenance=PROVENANCE_OVERSAMPLE, duplicate_of=index)
            )
    _LOGGER.info(
        f"Oversampled {len(output) - len(instances)} instance(s) for {len(rare)} rare agent(s)"
    )
    return output


def build_corpus(
    dataset: Iterable[Trajectory], taxonomy: Taxonomy, cfg: BuildConfig
) -> tuple[list[SftInstance], CorpusStats]:
    """Build the full corpus: entail, contradict then neutral per trajectory, then oversampling."""
    instances: list[SftInstance] = []
    skipped: list[str] = []
    seen = 0
    for trajectory in dataset:
        seen += 1
        if not trajectory.gold:
            if cfg.strict:
                raise TrajectoryError("trajectory has no gold annotations", record_id=trajectory.id)
            _LOGGER.warning(f"Skipping unannotated trajectory {trajectory.id}")
            skipped.append(trajectory.id)
            continue
        instances.extend(build_entail_instances(trajectory, taxonomy, cfg))
        instances.extend(build_contradict_instances(trajectory, taxonomy, cfg))
        instances.extend(build_neutral_instances(trajectory, taxonomy, cfg))

    instances = oversample_rare_agents(instances, cfg)
    stats = CorpusStats.collect(instances, trajectories=seen, skipped=skipped)
    _LOGGER.info(f"Built {stats.total} instance(s) from {seen} trajectories")
    return instances, stats


def write_corpus(instances: Iterable[SftInstance], path: Union[str, Path]) -> int:
    """Write one instance per line and return the count."""
    count = 0
    with Path(path).open("w", encoding="utf-8", newline="\n") as handle:
        for instance in instances:
            handle.write(json.dumps(instance.to_record(), ensure_ascii=False) + "\n")
            count += 1
    return count


def write_stats(stats: CorpusStats, path: Union[str, Path]) -> None:
    """Write the stats document."""
    Path(path).write_text(json.dumps(stats.to_dict(), indent=2) + "\n", encoding="utf-8")


def write_train_config(path: Union[str, Path], overrides: Optional[dict[str, Any]] = None) -> None:
    """Write the trainer hyperparameter sidecar."""
    config = {**TRAINING_CONFIG, **(overrides or {})}
    Path(path).write_text(yaml.safe_dump(config, sort_keys=False), encoding="utf-8")
