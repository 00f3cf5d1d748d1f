"""Chat-completion backends: an HTTP client, a deterministic mock, and bounded batching."""
from __future__ import annotations

import logging
import os
import threading
import time
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Any

import httpx

from radlabel.promptgen import PromptBundle

logger = logging.getLogger(__name__)

DEFAULT_MAX_IN_FLIGHT = 64
API_KEY_ENV = "RADLABEL_API_KEY"


class BackendError(RuntimeError):
    pass


class AuthenticationError(BackendError):
    pass


class TransientError(BackendError):
    """Transport or server-side failure worth retrying."""


@dataclass(frozen=True)
class GenerationParams:
    temperature: float = 0.5
    min_p: float = 0.1
    seed: int = 42
    stop: str | None = "}"
    max_sequence_tokens: int = 2048

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_p <= 1.0:
            raise ValueError("min_p must be in [0, 1]")
        if self.max_sequence_tokens < 1:
            raise ValueError("max_sequence_tokens must be positive")

    def token_budget(self, n_shots: int) -> int:
        """Sequence budget for a prompt; doubled whenever in-context examples are present."""
        return self.max_sequence_tokens * 2 if n_shots > 0 else self.max_sequence_tokens

    def without_stop(self) -> GenerationParams:
        return replace(self, stop=None)


@dataclass(frozen=True)
class RawAnswer:
    text: str
    finished_by: str  # "stop", "length" or "error"
    latency: float = 0.0
    endpoint_id: str = ""
    completion_tokens: int | None = None
    error: str = ""


def _close_stop(text: str, finish_reason: str | None, stop: str | None) -> tuple[str, str]:
    """Map a server result to (text, finished_by), restoring a consumed stop sequence."""
    if finish_reason == "length":
        return text, "length"
    if stop and finish_reason == "stop":
        cut = text.find(stop)
        if cut >= 0:
            return text[: cut + len(stop)], "stop"
        # server removes the stop sequence; an object always needs it back
        if "{" in text:
            return text + stop, "stop"
    return text, "stop"


class Backend:
    """Base class. Subclasses implement :meth:`_request`."""

    endpoint_id = "backend"

    def _request(self, bundle: PromptBundle, params: GenerationParams) -> tuple[str, str | None, int | None]:
        raise NotImplementedError

    def complete(self, bundle: PromptBundle, params: GenerationParams) -> RawAnswer:
        start = time.perf_counter()
        try:
            text, reason, tokens = self._request(bundle, params)
        except AuthenticationError:
            raise
        except Exception as exc:  # noqa: BLE001 - any failure becomes an error answer
            logger.warning("%s: request failed: %s", self.endpoint_id, exc)
            return RawAnswer("", "error", time.perf_counter() - start, self.endpoint_id, None, str(exc))
        text, finished_by = _close_stop(text, reason, params.stop)
        return RawAnswer(text, finished_by, time.perf_counter() - start, self.endpoint_id, tokens)

    def complete_batch(
        self,
        bundles: Sequence[PromptBundle],
        params: GenerationParams,
        max_in_flight: int = DEFAULT_MAX_IN_FLIGHT,
    ) -> list[RawAnswer]:
        """Complete all bundles with at most ``max_in_flight`` outstanding requests.

        Results are returned in input order. Failures are recorded in place
        as error answers; only authentication failures abort the batch.
        """
        if not bundles:
            raise ValueError("empty batch")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        with ThreadPoolExecutor(max_workers=min(max_in_flight, len(bundles))) as pool:
            return list(pool.map(lambda b: self.complete(b, params), bundles))


class ChatCompletionsBackend(Backend):
    """Client for servers speaking the OpenAI-style ``/chat/completions`` protocol."""

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key: str | None = None,
        max_attempts: int = 3,
        backoff: float = 1.0,
        timeout: float = 120.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV)
        self.max_attempts = max_attempts
        self.backoff = backoff
        self.endpoint_id = f"{self.base_url}#{model}"
        self._sleep = sleep
        self._send_min_p = True
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def close(self) -> None:
        self._client.close()

    def payload(self, bundle: PromptBundle, params: GenerationParams) -> dict[str, Any]:
        body: dict[str, Any] = {
            "model": self.model,
            "messages": bundle.messages(),
            "temperature": params.temperature,
            "seed": params.seed,
            "max_tokens": params.token_budget(len(bundle.shots)),
        }
        if params.stop:
            body["stop"] = [params.stop]
        if self._send_min_p:
            body["min_p"] = params.min_p
        return body

    def _post(self, body: dict[str, Any]) -> httpx.Response:
        try:
            resp = self._client.post(f"{self.base_url}/chat/completions", json=body)
        except httpx.TransportError as exc:
            raise TransientError(f"transport error: {exc}") from exc
        if resp.status_code in (401, 403):
            raise AuthenticationError(f"authentication failed ({resp.status_code})")
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransientError(f"server error {resp.status_code}")
        return resp

    def _request(self, bundle, params):
        delay = self.backoff
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._post(self.payload(bundle, params))
                if resp.status_code == 400 and self._send_min_p and "min_p" in resp.text:
                    logger.warning("%s rejected min_p; continuing without it", self.endpoint_id)
                    self._send_min_p = False
                    resp = self._post(self.payload(bundle, params))
                break
            except TransientError as exc:
                if attempt == self.max_attempts:
                    raise BackendError(f"giving up after {attempt} attempts: {exc}") from exc
                logger.info("%s: attempt %d failed (%s); retrying in %.1fs", self.endpoint_id, attempt, exc, delay)
                self._sleep(delay)
                delay *= 2
        if resp.status_code >= 400:
            raise BackendError(f"request rejected ({resp.status_code}): {resp.text[:200]}")
        data = resp.json()
        choice = data["choices"][0]
        usage = data.get("usage") or {}
        return choice["message"]["content"] or "", choice.get("finish_reason"), usage.get("completion_tokens")


Responder = Callable[[PromptBundle], str]


class MockBackend(Backend):
    """Deterministic stand-in for an endpoint.

    Answers are looked up by the bundle's target text, or produced by a
    ``responder`` callable. Like a real server, output is cut before the
    first stop sequence and reported as ``finish_reason="stop"``. A canned
    answer that is an exception instance is raised instead, which exercises
    the error path.
    """

    endpoint_id = "mock"

    def __init__(
        self,
        answers: Mapping[str, str | BaseException] | None = None,
        responder: Responder | None = None,
        default: str | None = None,
        delay: float = 0.0,
    ):
        self.answers = dict(answers or {})
        self.responder = responder
        self.default = default
        self.delay = delay
        self._lock = threading.Lock()
        self.in_flight = 0
        self.max_seen_in_flight = 0
        self.calls = 0
        self.requests: list[tuple[PromptBundle, GenerationParams]] = []

    def register(self, report_text: str, answer: str | BaseException) -> None:
        self.answers[report_text] = answer

    def _generate(self, bundle: PromptBundle) -> str | BaseException:
        if bundle.target_text in self.answers:
            return self.answers[bundle.target_text]
        if self.responder is not None:
            return self.responder(bundle)
        if self.default is not None:
            return self.default
        return BackendError(f"no mock answer for {bundle.target_text[:40]!r}")

    def _request(self, bundle, params):
        with self._lock:
            self.calls += 1
            self.in_flight += 1
            self.max_seen_in_flight = max(self.max_seen_in_flight, self.in_flight)
            self.requests.append((bundle, params))
        try:
            if self.delay:
                time.sleep(self.delay)
            out = self._generate(bundle)
        finally:
            with self._lock:
                self.in_flight -= 1
        if isinstance(out, BaseException):
            raise out
        if params.stop and params.stop in out:
            out = out[: out.index(params.stop)]
        return out, "stop", len(out.split())
