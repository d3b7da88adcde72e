"""Chat-completion transport for OpenAI-compatible endpoints."""
import asyncio
import logging
import os
from typing import Any, Dict, Optional

import aiohttp

from ..const import API_KEY_ENV, AUTH_FAILURE_STATUS, RETRYABLE_STATUS
from ..exceptions import AuthenticationError, TransportError, VerifierError, VerifierTimeout
from ..prompts import PromptBundle

_LOGGER = logging.getLogger(__name__)

COMPLETIONS_PATH = "chat/completions"


class OpenAICompatAPI:
    """Handle chat-completion calls over HTTP."""

    def __init__(self, endpoint_url: str, api_key: Optional[str] = None):
        """Initialize the transport."""
        self.endpoint_url = endpoint_url.rstrip("/")
        self._api_key = api_key
        self._session: Optional[aiohttp.ClientSession] = None

    @property
    def url(self) -> str:
        """Return the completions URL."""
        if self.endpoint_url.endswith(COMPLETIONS_PATH):
            return self.endpoint_url
        return f"{self.endpoint_url}/{COMPLETIONS_PATH}"

    def _ensure_token(self) -> str:
        """Return the API key from the environment."""
        if self._api_key:
            return self._api_key
        token = os.environ.get(API_KEY_ENV, "").strip()
        if not token:
            raise AuthenticationError(f"environment variable {API_KEY_ENV} is not set")
        _LOGGER.debug(f"Using API key from {API_KEY_ENV}")
        self._api_key = token
        return token

    async def _get_session(self) -> aiohttp.ClientSession:
        """Get or create aiohttp session."""
        if self._session is None or self._session.closed:
            self._session = aiohttp.ClientSession()
        return self._session

    async def close(self) -> None:
        """Close the session."""
        if self._session and not self._session.closed:
            await self._session.close()

    async def _make_request(self, payload: Dict[str, Any], timeout: float) -> Dict[str, Any]:
        """POST a completion request and return the decoded body."""
        token = self._ensure_token()
        session = await self._get_session()
        headers = {
            "Authorization": f"Bearer {token}",
            "Accept": "application/json",
            "Content-Type": "application/json",
        }

        try:
            async with session.request(
                "POST",
                self.url,
                headers=headers,
                json=payload,
                timeout=aiohttp.ClientTimeout(total=timeout),
            ) as response:
                response_text = await response.text()

                if response.status in AUTH_FAILURE_STATUS:
                    raise AuthenticationError(f"authentication failed ({response.status})")

                if response.status in RETRYABLE_STATUS:
                    _LOGGER.warning(f"Endpoint returned {response.status}")
                    raise TransportError(f"endpoint error {response.status}")

                if response.status >= 400:
                    _LOGGER.error(f"Endpoint error {response.status}: {response_text[:200]}")
                    raise VerifierError(f"endpoint rejected request ({response.status})")

                if not response_text:
                    return {}
                return await response.json(content_type=None)

        except asyncio.TimeoutError as err:
            raise VerifierTimeout(f"request timed out after {timeout}s") from err
        except aiohttp.ClientError as err:
            _LOGGER.warning(f"Endpoint connection error: {err}")
            raise TransportError(f"connection error: {err}") from err

    async def send(
        self,
        bundle: PromptBundle,
        model: str = "",
        temperature: float = 0.0,
        max_tokens: int = 512,
        timeout: float = 120,
    ) -> str:
        """Send one chat request and return the assistant text."""
        payload = {
            "model": model,
            "messages": bundle.messages(),
            "temperature": temperature,
            "max_tokens": max_tokens,
        }
        data = await self._make_request(payload, timeout)
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as err:
            raise TransportError(f"malformed completion response: {err}") from err
        return content or ""
