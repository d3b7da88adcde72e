"""Configuration objects and their validation schemas."""
from dataclasses import asdict, dataclass, field
import logging
from typing import Any, Optional

import voluptuous as vol

from .const import (
    ATTRIBUTION_STRATEGIES,
    COMMANDS,
    DEFAULT_BACKOFF,
    DEFAULT_CONCURRENCY,
    DEFAULT_CONTRADICT_PER_TRAJECTORY,
    DEFAULT_ENDPOINT,
    DEFAULT_MAX_OUTPUT,
    DEFAULT_MODEL,
    DEFAULT_NEUTRAL_PER_TRAJECTORY,
    DEFAULT_OVERSAMPLE_FACTOR,
    DEFAULT_RARE_AGENT_THRESHOLD,
    DEFAULT_RENDER_BUDGET,
    DEFAULT_RETRIES,
    DEFAULT_SEED,
    DEFAULT_TEMPERATURE,
    DEFAULT_TEST_PER_GROUP,
    DEFAULT_TIMEOUT,
    DEFAULT_VAL_RATIO,
    GROUP_BY,
    GROUP_BY_SOURCE,
    SOURCES,
    STRATEGY_VERIFY,
)
from .exceptions import ConfigError

_LOGGER = logging.getLogger(__name__)

_COUNT = vol.All(vol.Coerce(int), vol.Range(min=0))
_POSITIVE = vol.All(vol.Coerce(int), vol.Range(min=1))

VERIFIER_SCHEMA = vol.Schema(
    {
        vol.Required("endpoint_url", default=DEFAULT_ENDPOINT): vol.All(str, vol.Length(min=1)),
        vol.Required("model_name", default=DEFAULT_MODEL): vol.All(str, vol.Length(min=1)),
        vol.Optional("temperature", default=DEFAULT_TEMPERATURE): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
        vol.Optional("max_output", default=DEFAULT_MAX_OUTPUT): _POSITIVE,
        vol.Optional("retries", default=DEFAULT_RETRIES): _COUNT,
        vol.Optional("concurrency_limit", default=DEFAULT_CONCURRENCY): _POSITIVE,
        vol.Optional("timeout", default=DEFAULT_TIMEOUT): vol.All(
            vol.Coerce(float), vol.Range(min=0, min_included=False)
        ),
        vol.Optional("backoff", default=DEFAULT_BACKOFF): vol.All(
            vol.Coerce(float), vol.Range(min=0)
        ),
    }
)

BUILD_SCHEMA = vol.Schema(
    {
        vol.Optional(
            "contradict_per_trajectory", default=DEFAULT_CONTRADICT_PER_TRAJECTORY
        ): _COUNT,
        vol.Optional("neutral_per_trajectory", default=DEFAULT_NEUTRAL_PER_TRAJECTORY): _COUNT,
        vol.Optional("rare_agent_threshold", default=DEFAULT_RARE_AGENT_THRESHOLD): _COUNT,
        vol.Optional("oversample_factor", default=DEFAULT_OVERSAMPLE_FACTOR): _POSITIVE,
        vol.Optional("seed", default=DEFAULT_SEED): vol.All(
            vol.Coerce(int), vol.Range(min=0, max=2**64 - 1)
        ),
        vol.Optional("render_budget", default=DEFAULT_RENDER_BUDGET): _POSITIVE,
        vol.Optional("strict", default=True): bool,
    }
)

SPLIT_SCHEMA = vol.Schema(
    {
        vol.Optional("test_per_group", default=DEFAULT_TEST_PER_GROUP): _COUNT,
        vol.Optional("val_ratio", default=DEFAULT_VAL_RATIO): vol.All(
            vol.Coerce(float), vol.Range(min=0, max=1, max_included=False)
        ),
        vol.Optional("group_by", default=GROUP_BY_SOURCE): vol.In(GROUP_BY),
    }
)

RUN_SCHEMA = vol.Schema(
    {
        vol.Required("command"): vol.In(COMMANDS),
        vol.Optional("dataset", default=None): vol.Any(None, str),
        vol.Optional("taxonomy", default=None): vol.Any(None, str),
        vol.Optional("strategy", default=STRATEGY_VERIFY): vol.In(ATTRIBUTION_STRATEGIES),
        vol.Optional("records", default=None): vol.Any(None, str),
        vol.Optional("source", default=None): vol.Any(None, vol.In(SOURCES)),
        vol.Optional("out", default=None): vol.Any(None, str),
        vol.Optional("seed", default=DEFAULT_SEED): vol.All(vol.Coerce(int), vol.Range(min=0)),
        vol.Optional("strict", default=True): bool,
        vol.Optional("budget", default=DEFAULT_RENDER_BUDGET): _POSITIVE,
        vol.Optional("log_level", default="WARNING"): vol.In(
            ["DEBUG", "INFO", "WARNING", "ERROR"]
        ),
        vol.Optional("templates", default=None): vol.Any(None, str),
    },
    extra=vol.ALLOW_EXTRA,
)


def _validate(schema: vol.Schema, data: dict[str, Any], what: str) -> dict[str, Any]:
    """Run a voluptuous schema and translate its errors."""
    try:
        return schema(data)
    except vol.Invalid as err:
        _LOGGER.debug(f"Rejected {what} configuration: {err}")
        raise ConfigError(f"invalid {what} configuration: {err}") from err


@dataclass(frozen=True)
class VerifierConfig:
    """Access settings for the verifier model endpoint."""

    endpoint_url: str = DEFAULT_ENDPOINT
    model_name: str = DEFAULT_MODEL
    temperature: float = DEFAULT_TEMPERATURE
    max_output: int = DEFAULT_MAX_OUTPUT
    retries: int = DEFAULT_RETRIES
    concurrency_limit: int = DEFAULT_CONCURRENCY
    timeout: float = DEFAULT_TIMEOUT
    backoff: float = DEFAULT_BACKOFF

    def __post_init__(self) -> None:
        _validate(VERIFIER_SCHEMA, asdict(self), "verifier")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "VerifierConfig":
        """Build a config from loose key/value data."""
        return cls(**_validate(VERIFIER_SCHEMA, dict(data), "verifier"))

    @property
    def scheme(self) -> str:
        """Return the endpoint scheme (e.g. https, mock)."""
        return self.endpoint_url.split(":", 1)[0].lower()


@dataclass(frozen=True)
class BuildConfig:
    """Sampling settings for SFT corpus construction."""

    contradict_per_trajectory: int = DEFAULT_CONTRADICT_PER_TRAJECTORY
    neutral_per_trajectory: int = DEFAULT_NEUTRAL_PER_TRAJECTORY
    rare_agent_threshold: int = DEFAULT_RARE_AGENT_THRESHOLD
    oversample_factor: int = DEFAULT_OVERSAMPLE_FACTOR
    seed: int = DEFAULT_SEED
    render_budget: int = DEFAULT_RENDER_BUDGET
    strict: bool = True

    def __post_init__(self) -> None:
        _validate(BUILD_SCHEMA, asdict(self), "build")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BuildConfig":
        """Build a config from loose key/value data."""
        return cls(**_validate(BUILD_SCHEMA, dict(data), "build"))


@dataclass(frozen=True)
class SplitConfig:
    """Settings for the train/validation/test split."""

    test_per_group: int = DEFAULT_TEST_PER_GROUP
    val_ratio: float = DEFAULT_VAL_RATIO
    group_by: str = GROUP_BY_SOURCE

    def __post_init__(self) -> None:
        _validate(SPLIT_SCHEMA, asdict(self), "split")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "SplitConfig":
        """Build a config from loose key/value data."""
        return cls(**_validate(SPLIT_SCHEMA, dict(data), "split"))


@dataclass(frozen=True)
class RunConfig:
    """One CLI invocation, fully resolved."""

    command: str
    dataset: Optional[str] = None
    taxonomy: Optional[str] = None
    strategy: str = STRATEGY_VERIFY
    records: Optional[str] = None
    source: Optional[str] = None
    out: Optional[str] = None
    seed: int = DEFAULT_SEED
    strict: bool = True
    budget: int = DEFAULT_RENDER_BUDGET
    log_level: str = "WARNING"
    templates: Optional[str] = None
    verifier: VerifierConfig = field(default_factory=VerifierConfig)
    build: BuildConfig = field(default_factory=BuildConfig)
    split: SplitConfig = field(default_factory=SplitConfig)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "RunConfig":
        """Validate flat CLI data and split out the nested configs."""
        data = dict(data)
        verifier = data.pop("verifier", None) or VerifierConfig()
        build = data.pop("build", None) or BuildConfig()
        split = data.pop("split", None) or SplitConfig()
        if isinstance(verifier, dict):
            verifier = VerifierConfig.from_dict(verifier)
        if isinstance(build, dict):
            build = BuildConfig.from_dict(build)
        if isinstance(split, dict):
            split = SplitConfig.from_dict(split)
        values = _validate(RUN_SCHEMA, data, "run")
        known = {str(key) for key in RUN_SCHEMA.schema}
        return cls(
            verifier=verifier,
            build=build,
            split=split,
            **{key: value for key, value in values.items() if key in known},
        )

    def as_manifest(self) -> dict[str, Any]:
        """Return every setting that affects outputs."""
        return asdict(self)
