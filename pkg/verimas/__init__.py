"""Failure attribution for LLM multi-agent trajectories by hypothesis verification."""
__version__ = "0.1.0"

from .attribution import AttributionResult, attribute, attribute_with_strategy
from .config import BuildConfig, RunConfig, SplitConfig, VerifierConfig
from .dataconstruct import build_corpus, serialize_target
from .metrics import MetricsReport, evaluate
from .taxonomy import ErrorType, Taxonomy, load_default_taxonomy, load_taxonomy
from .trajectory import AttributionSet, Trajectory, load_dataset, parse_trajectory, split_dataset
from .verifier import Verdict, VerifierClient, parse_verdict

__all__ = [
    "AttributionResult",
    "AttributionSet",
    "BuildConfig",
    "ErrorType",
    "MetricsReport",
    "RunConfig",
    "SplitConfig",
    "Taxonomy",
    "Trajectory",
    "Verdict",
    "VerifierClient",
    "VerifierConfig",
    "attribute",
    "attribute_with_strategy",
    "build_corpus",
    "evaluate",
    "load_dataset",
    "load_default_taxonomy",
    "load_taxonomy",
    "parse_trajectory",
    "parse_verdict",
    "serialize_target",
    "split_dataset",
]
