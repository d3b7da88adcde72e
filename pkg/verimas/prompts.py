"""Prompt template registry for every attribution strategy.

The `verify` template reproduces the hypothesis-verification prompt word for
word. The baseline templates (direct pair prediction, error-first and
agent-first variants) are reconstructions and are marked non-canonical; they
can be replaced from a YAML file with `load_template_overrides`.
"""
from dataclasses import dataclass, field, replace
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Mapping, Union

import voluptuous as vol
import yaml

from .const import (
    PROMPT_STRATEGIES,
    STAGE_MAP_LABEL,
    STAGE_PAIRS,
    STAGE_VERIFY,
    STRATEGY_MAP_LABEL,
    STRATEGY_VERIFY,
)
from .exceptions import ConfigError

if TYPE_CHECKING:
    from .taxonomy import Taxonomy

_LOGGER = logging.getLogger(__name__)


@dataclass(frozen=True)
class PromptBundle:
    """A system/user message pair for one request."""

    system_text: str
    user_text: str
    strategy: str
    stage: str = STAGE_VERIFY
    meta: Mapping[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not self.system_text or not self.user_text:
            raise ConfigError("prompt texts must be non-empty")
        if self.strategy not in PROMPT_STRATEGIES:
            raise ConfigError(f"unknown prompt strategy {self.strategy!r}")

    def messages(self) -> list[dict[str, str]]:
        """Return chat messages for the completion request."""
        return [
            {"role": "system", "content": self.system_text},
            {"role": "user", "content": self.user_text},
        ]


@dataclass(frozen=True)
class PromptTemplate:
    """A named system/user template pair."""

    name: str
    system: str
    user: str
    canonical: bool = False

    def render_user(self, **values: str) -> str:
        """Format the user template."""
        return self.user.format(**values)


VERIFY_SYSTEM = """You are a careful verifier for multi-agent trajectory failure attribution. You will be given: A trajectory; A failure hypothesis; The list of candidate agents appearing in the trajectory. Your task is to jointly predict:
- label: one of A, B, C
- agents: responsible agent(s) for the hypothesized failure

Label meanings:
A = entail, B = neutral, C = contradict

Decision rules:
- Choose A when the trajectory provides clear or reasonably strong evidence that the hypothesized failure occurred, and that it negatively affected, or likely affected, the final outcome, final answer, final decision, or successful task completion.
- Choose B when the evidence is mixed, incomplete, weak, or the impact on the final outcome is uncertain.
- Choose C when the trajectory provides clear evidence that the hypothesis is false or inconsistent with what actually happened.
- If the failure appears to have been minor, corrected later, or not connected to the final outcome, prefer B over A.
- Use C only when the hypothesis is clearly contradicted by the trajectory, not merely because support is weak.

Agent attribution rules:
- A failure may be caused by one agent or multiple agents.
- If label = A, output one JSON object for each likely responsible agent.
- Each JSON object should contain exactly one responsible agent in the "agents" list.
- Include an agent only when there is clear or reasonably strong evidence that this agent contributed to the hypothesized failure.
- Do not include agents merely because they are mentioned near the error.
- Do not include agents that only followed instructions from another faulty agent unless their own action also contributed to the failure.
- Only output agent names that appear exactly in the provided candidate agent list.
- If label = A but no responsible agent can be confidently identified, output one JSON object with "agents": [].
- If label is B or C, output exactly one JSON object with "agents": [].

Output format:
Do not output thinking, reasoning, analysis, or <think>...</think>. Return JSON objects only. If there are multiple responsible agents, return multiple JSON objects, one per line.

Each JSON object must have exactly these keys:
{"label":"A","agents":["agent_name"]}

Valid examples:
{"label":"A","agents":["Planner"]}
{"label":"A","agents":["Solver"]}
{"label":"B","agents":[]}
{"label":"C","agents":[]}

Do not output explanations.
Do not output markdown.
Do not output extra text."""

VERIFY_USER = """Trajectory:
{trajectory}

Hypothesis:
{hypothesis}

Candidate agents:
{agents}"""

_DIAGNOSER = (
    "You are an expert in diagnosing failures of LLM multi-agent systems. "
    "You will be given a failed multi-agent trajectory, a taxonomy of error modes "
    "and the list of candidate agents appearing in the trajectory."
)
_DIRECT_TAIL = "Do not output explanations, markdown or extra text."
_COT_TAIL = (
    "Think step by step about the trajectory before answering. "
    "Finish with one final line of the form ANSWER: <JSON list>."
)

_CONTEXT_USER = """Trajectory:
{trajectory}

Error modes:
{taxonomy}

Candidate agents:
{agents}"""

_TEMPLATES: dict[str, PromptTemplate] = {
    STAGE_VERIFY: PromptTemplate(STAGE_VERIFY, VERIFY_SYSTEM, VERIFY_USER, canonical=True),
    STAGE_PAIRS: PromptTemplate(
        STAGE_PAIRS,
        _DIAGNOSER
        + " Identify every (agent, error mode) pair responsible for the failure. "
        'Output one JSON object per line of the form {"agent":"<agent name>","error":"<error code>"}. '
        "Use only candidate agent names and taxonomy error codes. "
        "If no pair applies, output []. " + _DIRECT_TAIL,
        _CONTEXT_USER,
    ),
    "errors_direct": PromptTemplate(
        "errors_direct",
        _DIAGNOSER
        + " Identify the error modes that occurred in the trajectory. "
        'Output a JSON list of error codes, e.g. ["FM-1.1","FM-3.2"], or [] if none. '
        + _DIRECT_TAIL,
        _CONTEXT_USER,
    ),
    "errors_cot": PromptTemplate(
        "errors_cot",
        _DIAGNOSER
        + " Identify the error modes that occurred in the trajectory. "
        'The final answer is a JSON list of error codes, e.g. ["FM-1.1","FM-3.2"], or [] if none. '
        + _COT_TAIL,
        _CONTEXT_USER,
    ),
    "agents_for_error_direct": PromptTemplate(
        "agents_for_error_direct",
        _DIAGNOSER
        + " The given error mode occurred in the trajectory. Identify the agents responsible for it. "
        'Output a JSON list of candidate agent names, e.g. ["Planner"], or [] if none. '
        + _DIRECT_TAIL,
        _CONTEXT_USER + "\n\nError mode:\n{error}",
    ),
    "agents_for_error_cot": PromptTemplate(
        "agents_for_error_cot",
        _DIAGNOSER
        + " The given error mode occurred in the trajectory. Identify the agents responsible for it. "
        'The final answer is a JSON list of candidate agent names, e.g. ["Planner"], or []. '
        + _COT_TAIL,
        _CONTEXT_USER + "\n\nError mode:\n{error}",
    ),
    "agents_direct": PromptTemplate(
        "agents_direct",
        _DIAGNOSER
        + " Identify the agents whose actions caused the failure. "
        'Output a JSON list of candidate agent names, e.g. ["Solver"], or [] if none. '
        + _DIRECT_TAIL,
        _CONTEXT_USER,
    ),
    "agents_cot": PromptTemplate(
        "agents_cot",
        _DIAGNOSER
        + " First identify the agents whose actions caused the failure. "
        'The final answer is a JSON list of candidate agent names, e.g. ["Solver"], or []. '
        + _COT_TAIL,
        _CONTEXT_USER,
    ),
    "errors_for_agent_direct": PromptTemplate(
        "errors_for_agent_direct",
        _DIAGNOSER
        + " The given agent contributed to the failure. Identify the error modes it committed. "
        'Output a JSON list of error codes, e.g. ["FM-2.4"], or [] if none. ' + _DIRECT_TAIL,
        _CONTEXT_USER + "\n\nAgent:\n{agent}",
    ),
    "errors_for_agent_cot": PromptTemplate(
        "errors_for_agent_cot",
        _DIAGNOSER
        + " The given agent contributed to the failure. Identify the error modes it committed. "
        'The final answer is a JSON list of error codes, e.g. ["FM-2.4"], or []. ' + _COT_TAIL,
        _CONTEXT_USER + "\n\nAgent:\n{agent}",
    ),
    STAGE_MAP_LABEL: PromptTemplate(
        STAGE_MAP_LABEL,
        "You map free-text explanations of multi-agent system mistakes onto a fixed "
        "taxonomy of error modes. Choose exactly one error code from the list. "
        "Output only the error code, e.g. FM-1.1.",
        "Explanation:\n{explanation}\n\nError modes:\n{taxonomy}",
    ),
}

OVERRIDE_SCHEMA = vol.Schema(
    {
        str: vol.Schema(
            {vol.Optional("system"): vol.All(str, vol.Length(min=1)),
             vol.Optional("user"): vol.All(str, vol.Length(min=1))}
        )
    }
)


def get_template(name: str) -> PromptTemplate:
    """Return a registered template or raise ConfigError."""
    if name not in _TEMPLATES:
        raise ConfigError(f"unknown prompt template {name!r}")
    return _TEMPLATES[name]


def available_templates() -> tuple[str, ...]:
    """Return the registered template names."""
    return tuple(sorted(_TEMPLATES))


def load_template_overrides(path: Union[str, Path]) -> list[str]:
    """Replace baseline template texts from a YAML mapping name -> {system, user}."""
    try:
        document = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        overrides = OVERRIDE_SCHEMA(document)
    except (OSError, yaml.YAMLError, vol.Invalid) as err:
        raise ConfigError(f"invalid prompt template file {path}: {err}") from err

    changed = []
    for name, texts in overrides.items():
        template = get_template(name)
        if template.canonical:
            raise ConfigError(f"template {name!r} is canonical and cannot be overridden")
        _TEMPLATES[name] = replace(template, **texts)
        changed.append(name)
    _LOGGER.info(f"Loaded {len(changed)} prompt template override(s) from {path}")
    return changed


def format_agents(agents: Iterable[str]) -> str:
    """Render a candidate agent list."""
    return json.dumps(list(agents), ensure_ascii=False)


def format_taxonomy(taxonomy: "Taxonomy") -> str:
    """Render one 'code: definition' line per error type."""
    return "\n".join(f"{error.id}: {error.definition}" for error in taxonomy)


def render_verify(
    rendered: str, hypothesis: str, agents: list[str], meta: Mapping[str, Any]
) -> PromptBundle:
    """Fill the verification template."""
    template = get_template(STAGE_VERIFY)
    return PromptBundle(
        system_text=template.system,
        user_text=template.render_user(
            trajectory=rendered, hypothesis=hypothesis, agents=format_agents(agents)
        ),
        strategy=STRATEGY_VERIFY,
        stage=STAGE_VERIFY,
        meta=dict(meta),
    )


def render_baseline(
    template_name: str,
    strategy: str,
    stage: str,
    rendered: str,
    taxonomy: "Taxonomy",
    agents: list[str],
    meta: Mapping[str, Any],
    **extra: str,
) -> PromptBundle:
    """Fill one of the baseline templates."""
    template = get_template(template_name)
    return PromptBundle(
        system_text=template.system,
        user_text=template.render_user(
            trajectory=rendered,
            taxonomy=format_taxonomy(taxonomy),
            agents=format_agents(agents),
            **extra,
        ),
        strategy=strategy,
        stage=stage,
        meta=dict(meta),
    )


def build_map_label_prompt(explanation: str, taxonomy: "Taxonomy") -> PromptBundle:
    """Build the prompt that maps a mistake explanation onto one code."""
    template = get_template(STAGE_MAP_LABEL)
    return PromptBundle(
        system_text=template.system,
        user_text=template.render_user(
            explanation=explanation, taxonomy=format_taxonomy(taxonomy)
        ),
        strategy=STRATEGY_MAP_LABEL,
        stage=STAGE_MAP_LABEL,
        meta={"explanation": explanation},
    )


__all__ = [
    "PromptBundle",
    "PromptTemplate",
    "available_templates",
    "build_map_label_prompt",
    "get_template",
    "load_template_overrides",
    "render_baseline",
    "render_verify",
]
