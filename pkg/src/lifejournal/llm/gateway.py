"""Uniform completion interface over role-bound providers.

Every call goes through ``Gateway.complete``: bounded in-flight calls, retries
on transport errors, summary extraction, hallucination flagging, and an entry
in both the cost ledger and the transcript.
"""

from __future__ import annotations

import json
import logging
import threading
import time
from dataclasses import asdict, dataclass
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping

from lifejournal.errors import ConfigError, ImageMismatch, ProviderUnavailable, TransportError
from lifejournal.llm.ledger import CostLedger
from lifejournal.llm.parsing import parse_summary
from lifejournal.llm.prompts import PromptCatalog, PromptTemplate, render_prompt
from lifejournal.llm.providers import CompletionRequest, Provider, monotonic_ms

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RoleBinding:
    provider: Provider
    model: str
    price_in: Fraction | float | None = None  # $ per 1e6 input tokens
    price_out: Fraction | float | None = None


@dataclass(frozen=True)
class LlmExchange:
    id: str
    template_id: str
    role: str
    model: str
    prompt: str
    image_digest: str | None
    raw: str
    summary: str | None
    input_tokens: int
    output_tokens: int
    latency_ms: float
    retries: int = 0
    tag: str = ""

    @property
    def hallucinated(self) -> bool:
        return self.summary is None

    def to_record(self) -> dict:
        rec = asdict(self)
        rec["hallucinated"] = self.hallucinated
        return rec


def hallucination_rate(exchanges) -> float:
    exchanges = list(exchanges)
    if not exchanges:
        return 0.0
    return sum(e.hallucinated for e in exchanges) / len(exchanges)


class Gateway:
    def __init__(
        self,
        roles: Mapping[str, RoleBinding],
        catalog: PromptCatalog | None = None,
        retries: int = 2,
        backoff_s: float = 1.0,
        max_inflight: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.roles = dict(roles)
        self.catalog = catalog if catalog is not None else PromptCatalog.load()
        self.retries = retries
        self.backoff_s = backoff_s
        self.sleep = sleep
        self.ledger = CostLedger()
        for binding in self.roles.values():
            if binding.price_in is not None and binding.price_out is not None:
                self.ledger.set_price(binding.model, binding.price_in, binding.price_out)
        self._slots = threading.BoundedSemaphore(max(1, max_inflight))
        self._lock = threading.Lock()
        self._exchanges: list[LlmExchange] = []

    # -- calls -----------------------------------------------------------

    def binding(self, role: str) -> RoleBinding:
        try:
            return self.roles[role]
        except KeyError:
            raise ConfigError(f"no provider bound to role {role!r}") from None

    def complete(
        self,
        role: str,
        template_id: str,
        prompt: str,
        image: bytes | None = None,
        tag: str = "",
    ) -> LlmExchange:
        binding = self.binding(role)
        request = CompletionRequest(template_id=template_id, model=binding.model, prompt=prompt, image=image)
        attempts = 0
        while True:
            try:
                with self._slots:
                    started = monotonic_ms()
                    result = binding.provider.complete(request)
                    latency = monotonic_ms() - started
                break
            except TransportError as exc:
                if attempts >= self.retries:
                    raise ProviderUnavailable(
                        f"role {role!r} ({binding.model}) failed after {attempts + 1} attempts: {exc}"
                    ) from exc
                delay = self.backoff_s * 2**attempts
                attempts += 1
                log.warning("%s call failed (%s); retry %d in %.1f s", template_id, exc, attempts, delay)
                self.sleep(delay)

        exchange = LlmExchange(
            id=f"{template_id}:{request.digest()[:16]}",
            template_id=template_id,
            role=role,
            model=binding.model,
            prompt=prompt,
            image_digest=request.image_digest,
            raw=result.text,
            summary=parse_summary(result.text),
            input_tokens=result.input_tokens,
            output_tokens=result.output_tokens,
            latency_ms=round(latency, 1) if result.live else 0.0,
            retries=attempts,
            tag=tag,
        )
        self.ledger.record(template_id, binding.model, exchange.input_tokens, exchange.output_tokens)
        with self._lock:
            self._exchanges.append(exchange)
        return exchange

    def run(
        self,
        template: PromptTemplate | str,
        bindings: Mapping[str, object],
        image: bytes | None = None,
        tag: str = "",
    ) -> LlmExchange:
        """Render a catalog template and complete it with the template's role."""
        if isinstance(template, str):
            template = self.catalog[template]
        if template.expects_image != (image is not None):
            raise ImageMismatch(
                f"template {template.id!r} {'expects' if template.expects_image else 'does not take'} an image"
            )
        return self.complete(template.role, template.id, render_prompt(template, bindings), image, tag)

    # -- records ---------------------------------------------------------

    @property
    def exchanges(self) -> list[LlmExchange]:
        with self._lock:
            return list(self._exchanges)

    def calls(self, template_id: str) -> int:
        return sum(1 for e in self.exchanges if e.template_id == template_id)

    def transcript(self) -> list[LlmExchange]:
        """Exchanges ordered by tag; insertion order breaks ties."""
        return sorted(self.exchanges, key=lambda e: e.tag)

    def write_transcript(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.transcript():
                fh.write(json.dumps(e.to_record(), ensure_ascii=False, sort_keys=True) + "\n")
