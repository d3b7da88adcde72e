"""Pair, Agent and Error level scoring with micro and macro F1."""
from collections import defaultdict
import csv
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from statistics import fmean
from typing import Any, Iterable, Mapping, Optional, Union

from .const import CATEGORY_UNASSIGNED, LEVEL_AGENT, LEVEL_ERROR, LEVEL_PAIR, LEVELS
from .exceptions import ScoringError
from .taxonomy import Taxonomy
from .trajectory import AttributionSet

_LOGGER = logging.getLogger(__name__)

MACRO_CLASSES = {
    LEVEL_PAIR: "error code",
    LEVEL_AGENT: "agent name",
    LEVEL_ERROR: "error code",
}

CSV_FIELDS = ("level", "scope", "key", "precision", "recall", "f1", "support")


@dataclass(frozen=True)
class Counts:
    """True positives, false positives and false negatives of one class."""

    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def support(self) -> int:
        """Return the number of gold items."""
        return self.tp + self.fn


@dataclass(frozen=True)
class Scores:
    """Precision, recall and F1."""

    precision: float = 0.0
    recall: float = 0.0
    f1: float = 0.0

    @classmethod
    def of(cls, counts: Counts) -> "Scores":
        """Score one count triple; empty denominators give 0."""
        predicted = counts.tp + counts.fp
        actual = counts.tp + counts.fn
        precision = counts.tp / predicted if predicted else 0.0
        recall = counts.tp / actual if actual else 0.0
        return cls(precision, recall, f1_score(precision, recall))

    def to_dict(self) -> dict[str, float]:
        """Return the scores as a dict."""
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def f1_score(precision: float, recall: float) -> float:
    """Harmonic mean with F1 = 0 when P + R = 0."""
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


@dataclass
class LevelCounts:
    """Per-class counts of one scoring level; merges are commutative."""

    classes: dict[str, Counts] = field(default_factory=dict)

    def add(self, key: str, counts: Counts) -> None:
        """Add a count delta to one class."""
        self.classes[key] = self.classes.get(key, Counts()) + counts

    def merge(self, other: "LevelCounts") -> "LevelCounts":
        """Return the sum of two accumulations."""
        merged = LevelCounts(dict(self.classes))
        for key, counts in other.classes.items():
            merged.add(key, counts)
        return merged

    @property
    def total(self) -> Counts:
        """Return the pooled counts."""
        pooled = Counts()
        for key in sorted(self.classes):
            pooled = pooled + self.classes[key]
        return pooled


def _set_counts(pred: set[str], gold: set[str]) -> LevelCounts:
    counts = LevelCounts()
    for key in pred & gold:
        counts.add(key, Counts(tp=1))
    for key in pred - gold:
        counts.add(key, Counts(fp=1))
    for key in gold - pred:
        counts.add(key, Counts(fn=1))
    return counts


def score_trajectory(
    pred: AttributionSet,
    gold: AttributionSet,
    level: str,
    entailed_unattributed: Iterable[str] = (),
    taxonomy: Optional[Taxonomy] = None,
) -> LevelCounts:
    """Count one trajectory at one level."""
    if level not in LEVELS:
        raise ScoringError(f"unknown scoring level {level!r}")
    unattributed = set(entailed_unattributed)
    if taxonomy is not None:
        for code in sorted(pred.errors | unattributed):
            if code not in taxonomy:
                raise ScoringError(f"predicted error code {code!r} is not in the taxonomy")

    if level == LEVEL_AGENT:
        return _set_counts(set(pred.agents), set(gold.agents))
    if level == LEVEL_ERROR:
        return _set_counts(set(pred.errors) | unattributed, set(gold.errors))

    counts = LevelCounts()
    for agent, error in pred.pairs:
        counts.add(error, Counts(tp=1) if (agent, error) in gold else Counts(fp=1))
    for agent, error in gold.pairs - pred.pairs:
        counts.add(error, Counts(fn=1))
    return counts


def micro(counts: LevelCounts) -> Scores:
    """Pool counts over all classes."""
    return Scores.of(counts.total)


def macro(counts: LevelCounts) -> Scores:
    """Unweighted mean over classes with gold support."""
    supported = [Scores.of(c) for _, c in sorted(counts.classes.items()) if c.support > 0]
    if not supported:
        return Scores()
    return Scores(
        fmean(s.precision for s in supported),
        fmean(s.recall for s in supported),
        fmean(s.f1 for s in supported),
    )


@dataclass(frozen=True)
class ClassScore:
    """Scores of one class."""

    key: str
    scores: Scores
    counts: Counts

    def to_dict(self) -> dict[str, Any]:
        """Return the class row."""
        return {
            **self.scores.to_dict(),
            "support": self.counts.support,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
        }


@dataclass(frozen=True)
class LevelReport:
    """Micro, macro and per-class scores of one level."""

    level: str
    micro: Scores
    macro: Scores
    per_class: tuple[ClassScore, ...]

    @classmethod
    def of(cls, level: str, counts: LevelCounts) -> "LevelReport":
        """Score accumulated counts."""
        per_class = tuple(
            ClassScore(key, Scores.of(c), c) for key, c in sorted(counts.classes.items())
        )
        return cls(level, micro(counts), macro(counts), per_class)

    def class_f1(self) -> dict[str, float]:
        """Return F1 of every gold-supported class."""
        return {row.key: row.scores.f1 for row in self.per_class if row.counts.support > 0}

    def to_dict(self) -> dict[str, Any]:
        """Return the level section of the report."""
        return {
            "macro_classes": MACRO_CLASSES[self.level],
            "micro": self.micro.to_dict(),
            "macro": self.macro.to_dict(),
            "per_class": {row.key: row.to_dict() for row in self.per_class},
        }


@dataclass(frozen=True)
class MetricsReport:
    """The full scoring report."""

    levels: Mapping[str, LevelReport]
    trajectories: int = 0
    category_rollup: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)
    family_rollup: Mapping[str, Mapping[str, Any]] = field(default_factory=dict)

    def headline(self) -> dict[str, float]:
        """Return micro and macro F1 for every level."""
        values = {}
        for level in LEVELS:
            values[f"{level}_micro_f1"] = self.levels[level].micro.f1
            values[f"{level}_macro_f1"] = self.levels[level].macro.f1
        return values

    @property
    def average_f1(self) -> float:
        """Mean of the six headline F1 values."""
        return fmean(self.headline().values())

    def to_dict(self) -> dict[str, Any]:
        """Return the structured report."""
        return {
            "trajectories": self.trajectories,
            "headline": self.headline(),
            "average_f1": self.average_f1,
            "levels": {level: self.levels[level].to_dict() for level in LEVELS},
            "category_rollup": {key: dict(value) for key, value in self.category_rollup.items()},
            "family_rollup": {key: dict(value) for key, value in self.family_rollup.items()},
        }

    def to_rows(self) -> list[dict[str, Any]]:
        """Return the flat table: micro and macro rows, then one row per class."""
        rows = []
        for level in LEVELS:
            report = self.levels[level]
            support = sum(row.counts.support for row in report.per_class)
            for scope, scores in (("micro", report.micro), ("macro", report.macro)):
                rows.append(
                    {"level": level, "scope": scope, "key": "", **scores.to_dict(), "support": support}
                )
            for row in report.per_class:
                rows.append(
                    {
                        "level": level,
                        "scope": "class",
                        "key": row.key,
                        **row.scores.to_dict(),
                        "support": row.counts.support,
                    }
                )
        return rows

    def write_json(self, path: Union[str, Path]) -> None:
        """Write the structured report."""
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def write_csv(self, path: Union[str, Path]) -> None:
        """Write the flat table as comma-separated values."""
        with Path(path).open("w", encoding="utf-8", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS)
            writer.writeheader()
            writer.writerows(self.to_rows())


def _rollup(
    taxonomy: Taxonomy, pair: LevelReport, error: LevelReport, group_of: Any
) -> dict[str, dict[str, Any]]:
    pair_f1 = pair.class_f1()
    error_f1 = error.class_f1()
    groups: dict[str, dict[str, list[float]]] = defaultdict(lambda: {"pair": [], "error": []})
    for error_type in taxonomy:
        group = group_of(error_type)
        if group is None:
            continue
        if error_type.id in pair_f1:
            groups[group]["pair"].append(pair_f1[error_type.id])
        if error_type.id in error_f1:
            groups[group]["error"].append(error_f1[error_type.id])
    return {
        group: {
            "pair_f1": fmean(values["pair"]) if values["pair"] else 0.0,
            "error_f1": fmean(values["error"]) if values["error"] else 0.0,
            "classes": len(values["error"]),
        }
        for group, values in sorted(groups.items())
    }


def evaluate(
    results: Iterable[Any],
    golds: Mapping[str, AttributionSet],
    taxonomy: Optional[Taxonomy] = None,
) -> MetricsReport:
    """Score attribution results against gold sets.

    Gold entries without a result are scored as empty predictions.
    """
    totals = {level: LevelCounts() for level in LEVELS}
    seen: set[str] = set()
    for result in results:
        if result.trajectory_id in seen:
            raise ScoringError(f"duplicate result id {result.trajectory_id!r}")
        if result.trajectory_id not in golds:
            raise ScoringError(f"no gold annotations for result id {result.trajectory_id!r}")
        seen.add(result.trajectory_id)
        gold = golds[result.trajectory_id]
        for level in LEVELS:
            totals[level] = totals[level].merge(
                score_trajectory(
                    result.pairs, gold, level, result.entailed_unattributed, taxonomy
                )
            )

    missing = sorted(set(golds) - seen)
    if missing:
        _LOGGER.warning(f"{len(missing)} gold trajectories have no result; scored as empty")
    for trajectory_id in missing:
        for level in LEVELS:
            totals[level] = totals[level].merge(
                score_trajectory(AttributionSet(), golds[trajectory_id], level)
            )

    levels = {level: LevelReport.of(level, totals[level]) for level in LEVELS}
    category_rollup: dict[str, dict[str, Any]] = {}
    family_rollup: dict[str, dict[str, Any]] = {}
    if taxonomy is not None:
        if taxonomy.has_categories:
            category_rollup = _rollup(
                taxonomy,
                levels[LEVEL_PAIR],
                levels[LEVEL_ERROR],
                lambda e: None if e.category == CATEGORY_UNASSIGNED else e.category,
            )
        family_rollup = _rollup(
            taxonomy, levels[LEVEL_PAIR], levels[LEVEL_ERROR], lambda e: e.family
        )

    report = MetricsReport(levels, len(golds), category_rollup, family_rollup)
    _LOGGER.info(f"Scored {len(seen)} result(s) against {len(golds)} gold trajectories")
    return report
