"""Exceptions raised by verimas."""
from typing import Optional


class VerimasError(ValueError):
    """Base error for the toolkit."""


class TaxonomyError(VerimasError):
    """Raised when a taxonomy document is invalid or an id is unknown."""

    def __init__(self, message: str, error_id: Optional[str] = None):
        super().__init__(message)
        self.error_id = error_id


class TrajectoryError(VerimasError):
    """Raised when a trajectory record fails validation."""

    def __init__(
        self, message: str, record_id: Optional[str] = None, line: Optional[int] = None
    ):
        prefix = f"record {record_id!r}: " if record_id is not None else ""
        super().__init__(prefix + message)
        self.record_id = record_id
        self.line = line


class DatasetError(VerimasError):
    """Raised when a dataset file cannot be read or a strict read aborts."""

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None):
        location = f"{path}:{line}: " if path and line else (f"{path}: " if path else "")
        super().__init__(location + message)
        self.path = path
        self.line = line


class ConfigError(VerimasError):
    """Raised for invalid configuration values."""


class SerializationError(VerimasError):
    """Raised when a verification target cannot be serialized."""


class UnmappableLabelError(VerimasError):
    """Raised when a free-text explanation cannot be mapped to an error code."""

    def __init__(self, message: str, raw: str = ""):
        super().__init__(message)
        self.raw = raw


class ScoringError(VerimasError):
    """Raised when predictions and gold cannot be scored together."""


class VerifierError(VerimasError):
    """Base error for verifier endpoint failures."""


class TransportError(VerifierError):
    """Raised when the endpoint keeps failing after retries."""


class AuthenticationError(VerifierError):
    """Raised when the endpoint rejects or lacks credentials."""


class VerifierTimeout(VerifierError):
    """Raised when requests keep timing out after retries."""
