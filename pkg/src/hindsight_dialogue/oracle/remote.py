"""OpenAI-compatible chat-completions backend with retry and rate limiting."""

from __future__ import annotations

import logging
import os
import random
import threading
import time
from dataclasses import dataclass
from typing import Any, Callable

import httpx

from .errors import MalformedResponse, PermanentError, RetryableExhausted
from .gateway import Decode, Oracle, OracleRequest

log = logging.getLogger(__name__)

ENV_URL = "L2A_ORACLE_URL"
ENV_MODEL = "L2A_ORACLE_MODEL"
ENV_KEY = "L2A_ORACLE_KEY"


@dataclass(frozen=True)
class RetryEvent:
    attempt: int
    reason: str
    delay: float


class RemoteOracle(Oracle):
    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        *,
        timeout: float = 60.0,
        max_attempts: int = 5,
        backoff_initial: float = 0.5,
        backoff_factor: float = 2.0,
        jitter: float = 0.2,
        max_concurrency: int = 8,
        min_interval: float = 0.0,
        system_prompt: str | None = None,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
        rng: random.Random | None = None,
    ):
        if max_attempts < 1:
            raise ValueError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = max_attempts
        self.backoff_initial = backoff_initial
        self.backoff_factor = backoff_factor
        self.jitter = jitter
        self.max_concurrency = max_concurrency
        self.min_interval = min_interval
        self.system_prompt = system_prompt
        self._sleep = sleep
        self._rng = rng or random.Random()
        headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)
        self._lock = threading.Lock()
        self._next_slot = 0.0
        self.retry_log: list[RetryEvent] = []

    @classmethod
    def from_env(cls, **kwargs: Any) -> "RemoteOracle":
        url = os.environ.get(ENV_URL)
        model = os.environ.get(ENV_MODEL)
        if not url or not model:
            raise PermanentError(f"{ENV_URL} and {ENV_MODEL} must be set for the remote backend")
        return cls(url, model, os.environ.get(ENV_KEY), **kwargs)

    def close(self) -> None:
        self._client.close()

    def backoff(self, attempt: int) -> float:
        base = self.backoff_initial * self.backoff_factor ** (attempt - 1)
        with self._lock:
            u = self._rng.uniform(1 - self.jitter, 1 + self.jitter)
        return base * u

    def _throttle(self) -> None:
        if self.min_interval <= 0:
            return
        with self._lock:
            now = time.monotonic()
            slot = max(now, self._next_slot)
            self._next_slot = slot + self.min_interval
        if slot > now:
            self._sleep(slot - now)

    def payload(self, prompt: str, decode: Decode) -> dict[str, Any]:
        messages = []
        if self.system_prompt:
            messages.append({"role": "system", "content": self.system_prompt})
        messages.append({"role": "user", "content": prompt})
        body: dict[str, Any] = {
            "model": self.model,
            "messages": messages,
            "temperature": decode.temperature,
            "max_tokens": decode.max_tokens,
        }
        if decode.seed is not None:
            body["seed"] = decode.seed
        return body

    def complete(self, req: OracleRequest) -> str:
        return self.complete_text(req.render(), req.decode)

    def complete_text(self, prompt: str, decode: Decode | None = None) -> str:
        body = self.payload(prompt, decode or Decode())
        url = f"{self.base_url}/chat/completions"
        reason = ""
        for attempt in range(1, self.max_attempts + 1):
            self._throttle()
            try:
                resp = self._client.post(url, json=body)
            except httpx.TimeoutException as exc:
                reason = f"timeout: {exc}"
            except httpx.TransportError as exc:
                reason = f"transport: {exc}"
            else:
                if resp.status_code == 429 or resp.status_code >= 500:
                    reason = f"HTTP {resp.status_code}"
                elif resp.status_code >= 400:
                    raise PermanentError(
                        f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code
                    )
                else:
                    return _content(resp)
            if attempt == self.max_attempts:
                break
            delay = self.backoff(attempt)
            with self._lock:
                self.retry_log.append(RetryEvent(attempt, reason, delay))
            log.info("oracle attempt %d failed (%s); retrying in %.2fs", attempt, reason, delay)
            self._sleep(delay)
        raise RetryableExhausted(
            f"gave up after {self.max_attempts} attempts: {reason}", self.max_attempts
        )


def _content(resp: httpx.Response) -> str:
    try:
        data = resp.json()
        content = data["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise MalformedResponse(f"no choices[0].message.content in response: {exc!r}") from None
    if not isinstance(content, str):
        raise MalformedResponse("message content is not a string")
    return content
