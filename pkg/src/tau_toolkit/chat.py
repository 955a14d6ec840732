"""Minimal client for OpenAI-compatible ``/chat/completions`` endpoints."""

from __future__ import annotations

import os
from typing import Any, Optional

import httpx

from .core import TauError


class TransportError(TauError):
    """Network failure, HTTP error status, or a malformed response body."""


class BackendTimeout(TransportError):
    pass


def completions_url(endpoint: str) -> str:
    endpoint = endpoint.rstrip("/")
    if endpoint.endswith("/chat/completions"):
        return endpoint
    return endpoint + "/chat/completions"


class ChatClient:
    def __init__(self, endpoint: str, api_key: Optional[str] = None, api_key_env: Optional[str] = None,
                 timeout: float = 120.0, transport: Optional[httpx.BaseTransport] = None):
        if not endpoint:
            raise TauError("no endpoint configured")
        self.url = completions_url(endpoint)
        if api_key is None and api_key_env:
            api_key = os.environ.get(api_key_env)
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._http = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def complete(self, payload: dict[str, Any]) -> tuple[str, dict]:
        """POST ``payload``; return ``(choices[0].message.content, full response body)``."""
        try:
            response = self._http.post(self.url, json=payload)
            response.raise_for_status()
            body = response.json()
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"timeout calling {self.url}: {exc}") from exc
        except (httpx.HTTPError, ValueError) as exc:
            raise TransportError(f"request to {self.url} failed: {exc}") from exc
        try:
            content = body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"unexpected response shape from {self.url}") from None
        if isinstance(content, list):  # content-part arrays
            content = "".join(p.get("text", "") for p in content if isinstance(p, dict))
        return content or "", body

    def close(self) -> None:
        self._http.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
