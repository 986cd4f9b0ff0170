"""Completion providers: scripted mocks, replay fixtures, recording and live HTTP."""

from __future__ import annotations

import base64
import hashlib
import json
import math
import threading
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol

from lifejournal.errors import MissingFixture, ProviderUnavailable, TransportError


def image_digest(image: bytes | None) -> str | None:
    return hashlib.sha256(image).hexdigest() if image is not None else None


def mock_token_count(text: str) -> int:
    """Offline token estimate: one token per four characters, rounded up."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class CompletionRequest:
    template_id: str
    model: str
    prompt: str
    image: bytes | None = None

    @property
    def image_digest(self) -> str | None:
        return image_digest(self.image)

    def digest(self) -> str:
        h = hashlib.sha256()
        for part in (self.model, self.prompt, self.image_digest or ""):
            h.update(part.encode("utf-8"))
            h.update(b"\x00")
        return h.hexdigest()


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int
    live: bool = False  # offline completions report zero latency


def offline_completion(request: CompletionRequest, text: str) -> Completion:
    return Completion(text, mock_token_count(request.prompt), mock_token_count(text))


class Provider(Protocol):
    def complete(self, request: CompletionRequest) -> Completion: ...


class MockProvider:
    """Scripted provider: canned replies by request digest, else a responder callable."""

    def __init__(
        self,
        responses: Mapping[str, str] | None = None,
        responder: Callable[[CompletionRequest], str] | None = None,
    ) -> None:
        self.responses = dict(responses or {})
        self.responder = responder
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, request: CompletionRequest) -> Completion:
        with self._lock:
            self.calls += 1
        digest = request.digest()
        if digest in self.responses:
            text = self.responses[digest]
        elif self.responder is not None:
            text = self.responder(request)
        else:
            raise MissingFixture(digest, "mock script")
        return offline_completion(request, text)


class ReplayProvider:
    """Serves ``<dir>/<request digest>.txt`` fixture files."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def path_for(self, request: CompletionRequest) -> Path:
        return self.directory / f"{request.digest()}.txt"

    def complete(self, request: CompletionRequest) -> Completion:
        path = self.path_for(request)
        try:
            text = path.read_text(encoding="utf-8")
        except FileNotFoundError:
            raise MissingFixture(request.digest(), str(self.directory)) from None
        return offline_completion(request, text)


class RecordingProvider:
    """Passes requests through and stores each reply as a replay fixture."""

    def __init__(self, inner: Provider, directory: str | Path) -> None:
        self.inner = inner
        self.directory = Path(directory)

    def complete(self, request: CompletionRequest) -> Completion:
        result = self.inner.complete(request)
        self.directory.mkdir(parents=True, exist_ok=True)
        (self.directory / f"{request.digest()}.txt").write_text(result.text, encoding="utf-8")
        return result


REFUSAL = "I'm sorry, but I can't help with that request."


class HallucinatingProvider:
    """Wraps a provider and, with probability ``rate``, replies without a summary.

    Each draw is a hash of (seed, request digest, occurrence of that digest),
    so outcomes do not depend on the order in which concurrent calls arrive.
    """

    def __init__(
        self,
        inner: Provider,
        rate: float,
        seed: int = 0,
        template_ids: set[str] | None = None,
    ) -> None:
        if not 0.0 <= rate <= 1.0:
            raise ValueError("rate must be in [0, 1]")
        self.inner = inner
        self.rate = rate
        self.seed = seed
        self.template_ids = template_ids
        self._seen: dict[str, int] = {}
        self._lock = threading.Lock()

    def _draw(self, digest: str) -> float:
        with self._lock:
            n = self._seen.get(digest, 0)
            self._seen[digest] = n + 1
        h = hashlib.sha256(f"{self.seed}:{digest}:{n}".encode()).digest()
        return int.from_bytes(h[:8], "big") / 2**64

    def complete(self, request: CompletionRequest) -> Completion:
        if self.template_ids is None or request.template_id in self.template_ids:
            if self._draw(request.digest()) < self.rate:
                return offline_completion(request, REFUSAL)
        return self.inner.complete(request)


class HttpChatProvider:
    """OpenAI-compatible ``/chat/completions`` endpoint.

    Connection failures and 5xx replies raise ``TransportError`` (retried by
    the gateway); other HTTP errors raise ``ProviderUnavailable``.
    """

    def __init__(self, endpoint: str, api_key: str | None = None, timeout_s: float = 60.0) -> None:
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s

    def _payload(self, request: CompletionRequest) -> dict:
        if request.image is None:
            content: object = request.prompt
        else:
            b64 = base64.b64encode(request.image).decode("ascii")
            content = [
                {"type": "text", "text": request.prompt},
                {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}},
            ]
        return {"model": request.model, "messages": [{"role": "user", "content": content}]}

    def complete(self, request: CompletionRequest) -> Completion:
        body = json.dumps(self._payload(request)).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        req = urllib.request.Request(self.endpoint, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(req, timeout=self.timeout_s) as resp:
                data = json.loads(resp.read().decode("utf-8"))
        except urllib.error.HTTPError as exc:
            if exc.code >= 500 or exc.code == 429:
                raise TransportError(f"HTTP {exc.code} from {self.endpoint}") from exc
            raise ProviderUnavailable(f"HTTP {exc.code} from {self.endpoint}") from exc
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"{self.endpoint}: {exc}") from exc
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"unexpected response shape from {self.endpoint}") from None
        usage = data.get("usage") or {}
        return Completion(
            text=text,
            input_tokens=int(usage.get("prompt_tokens", mock_token_count(request.prompt))),
            output_tokens=int(usage.get("completion_tokens", mock_token_count(text))),
            live=True,
        )


def monotonic_ms() -> float:
    return time.perf_counter() * 1000.0
