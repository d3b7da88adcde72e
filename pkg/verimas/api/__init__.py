"""Transports for the verifier endpoint, selected by endpoint scheme."""
import logging
from typing import Any, Protocol

from ..config import VerifierConfig
from ..const import MOCK_SCHEME
from ..prompts import PromptBundle
from .openai_compat import OpenAICompatAPI

_LOGGER = logging.getLogger(__name__)


class Transport(Protocol):
    """Sends one chat request and returns the assistant text."""

    async def send(self, bundle: PromptBundle, **options: Any) -> str:
        """Send a bundle."""

    async def close(self) -> None:
        """Release network resources."""


def create_transport(config: VerifierConfig, **kwargs: Any) -> Transport:
    """Return the transport for `config.endpoint_url`.

    `mock:` endpoints get the offline MockAPI; everything else talks the
    chat-completion wire protocol over HTTP.
    """
    if config.scheme == MOCK_SCHEME:
        from .mock import MockAPI

        _LOGGER.debug(f"Using mock transport for {config.endpoint_url}")
        return MockAPI.from_endpoint(config.endpoint_url, **kwargs)
    return OpenAICompatAPI(config.endpoint_url)


__all__ = ["OpenAICompatAPI", "Transport", "create_transport"]
