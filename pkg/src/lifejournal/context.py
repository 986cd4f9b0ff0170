"""Location contexts per window, batched location refinement and motion calibration."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

from lifejournal.errors import MissingFixture, ProviderUnavailable
from lifejournal.geo import (
    ContextCache,
    GridProjection,
    MapProvider,
    SingleFlight,
    build_map_request,
    fetch_map,
)
from lifejournal.llm.gateway import Gateway, LlmExchange
from lifejournal.llm.parsing import parse_timed_lines
from lifejournal.motion import MotionContext, MotionLabel
from lifejournal.trace import format_clock

log = logging.getLogger(__name__)

UNKNOWN_LOCATION = "unknown"
MISSING = "none"
DEFAULT_BATCH_SIZE = 15


@dataclass
class LocationContext:
    time: float
    map_text: str | None = None
    ssid_text: str | None = None
    fused_text: str | None = None
    map_source: str | None = None  # "cache" | "vlm"
    ssid_source: str | None = None  # "llm"
    fused_source: str | None = None  # "llm" | "single" | "fallback"
    grid_key: str | None = None

    @property
    def has_context(self) -> bool:
        return self.map_text is not None or self.ssid_text is not None

    def best_available(self) -> str:
        if self.map_text is not None:
            return self.map_text
        if self.ssid_text is not None:
            return self.ssid_text
        return UNKNOWN_LOCATION

    @property
    def location_text(self) -> str:
        return self.fused_text if self.fused_text is not None else self.best_available()


@dataclass(frozen=True)
class ContextLogEntry:
    time: float
    time_label: str
    motion_text: str
    location_text: str

    def render(self) -> str:
        return f"[{self.time_label}]({self.motion_text}, {self.location_text})"


# ---------------------------------------------------------------------------
# per-window location contexts
# ---------------------------------------------------------------------------


class MapContextSource:
    """Map-image location contexts, cached per 100 m grid cell.

    Concurrent lookups for one cell share a single map fetch and VLM call.
    Hallucinated VLM replies are not cached.
    """

    def __init__(
        self,
        gateway: Gateway,
        map_provider: MapProvider,
        cache: ContextCache,
        projection: GridProjection,
    ) -> None:
        self.gateway = gateway
        self.map_provider = map_provider
        self.cache = cache
        self.projection = projection
        self._flight = SingleFlight()
        self.cache_hits = 0

    def lookup(self, lat: float, lon: float, tag: str = "") -> tuple[str | None, str | None, str]:
        """Return (context text, source, grid key)."""
        request = build_map_request(lat, lon, self.projection)
        key = request.key.render()
        cached = self.cache.get(key)
        if cached is not None:
            self.cache_hits += 1
            return cached, "cache", key

        def fetch_and_describe() -> tuple[str | None, str | None]:
            hit = self.cache.get(key)
            if hit is not None:
                return hit, "cache"
            image = fetch_map(request, self.map_provider)
            exchange = self.gateway.run("map_context", {}, image=image, tag=tag)
            if exchange.hallucinated:
                log.info("map context for %s hallucinated; not cached", key)
                return None, None
            self.cache.put(key, exchange.summary)
            return exchange.summary, "vlm"

        text, source = self._flight.do(key, fetch_and_describe)
        return text, source, key


def map_location_context(lat: float, lon: float, geo: MapContextSource) -> str | None:
    return geo.lookup(lat, lon)[0]


def ssid_location_context(ssids: Sequence[str], gateway: Gateway, tag: str = "") -> str | None:
    """LLM description of the surroundings implied by a deduplicated SSID list."""
    if not ssids:
        return None
    exchange = gateway.run("ssid_context", {"ssids": json.dumps(list(ssids), ensure_ascii=False)}, tag=tag)
    return exchange.summary


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def assemble_batches(
    times: Sequence[float], period_s: float, batch_size: int = DEFAULT_BATCH_SIZE
) -> list[list[int]]:
    """Group window indices into spans of ``batch_size`` periods aligned to the first window.

    A span holding more than ``batch_size`` windows is split so no batch
    exceeds ``batch_size`` entries.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not times:
        return []
    span = batch_size * period_s
    t0 = times[0]
    batches: list[list[int]] = []
    current_slot = None
    for i, t in enumerate(times):
        slot = int((t - t0) // span)
        if slot != current_slot or len(batches[-1]) >= batch_size:
            batches.append([])
            current_slot = slot
        batches[-1].append(i)
    return batches


def time_labels(times: Sequence[float], tz_offset_minutes: int = 0) -> list[str]:
    """``HH:MM`` labels, switching to ``HH:MM:SS`` if minutes would collide."""
    labels = [format_clock(t, tz_offset_minutes) for t in times]
    if len(set(labels)) != len(labels):
        labels = [format_clock(t, tz_offset_minutes, seconds=True) for t in times]
    return labels


# ---------------------------------------------------------------------------
# refinement
# ---------------------------------------------------------------------------


@dataclass
class RefinementOutcome:
    fused: list[str]
    llm_used: bool = False
    fallback: bool = False
    attempts: int = 0
    exchanges: list[LlmExchange] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def _fusion_lines(labels: Sequence[str], contexts: Sequence[LocationContext]) -> str:
    return "\n".join(
        f"[{label}]({c.map_text or MISSING}, {c.ssid_text or MISSING})" for label, c in zip(labels, contexts)
    )


def _aligned(summary: str | None, labels: Sequence[str]) -> list[str] | None:
    if summary is None:
        return None
    parsed = parse_timed_lines(summary)
    if sorted(label for label, _ in parsed) != sorted(labels):
        return None
    by_label = dict(parsed)
    return [by_label[label] for label in labels]


def refine_locations(
    labels: Sequence[str],
    contexts: Sequence[LocationContext],
    gateway: Gateway,
    concise: bool = True,
    tag: str = "",
) -> RefinementOutcome:
    """Fuse map/SSID contexts per time and across time for one batch.

    Every entry must carry at least one context. The reply must contain each
    input time exactly once; otherwise the call is retried once and then each
    window falls back to its best available context.
    """
    if not contexts:
        raise ValueError("empty batch")
    if any(not c.has_context for c in contexts):
        raise ValueError("every batch entry needs a map or SSID context")
    if len(contexts) == 1 and (contexts[0].map_text is None or contexts[0].ssid_text is None):
        return RefinementOutcome(fused=[contexts[0].best_available()])

    bindings = {
        "logs": _fusion_lines(labels, contexts),
        "concise_instruction": gateway.catalog.concise_instruction("location_fusion", concise),
    }
    outcome = RefinementOutcome(fused=[], llm_used=True)
    for attempt in range(2):
        outcome.attempts += 1
        try:
            exchange = gateway.run("location_fusion", bindings, tag=f"{tag}:{attempt}")
        except (MissingFixture, ProviderUnavailable) as exc:
            log.warning("refinement call for batch %s failed: %s", tag, exc)
            outcome.errors.append(str(exc))
            continue
        outcome.exchanges.append(exchange)
        fused = _aligned(exchange.summary, labels)
        if fused is not None:
            outcome.fused = fused
            return outcome
        log.info("refinement reply for batch %s malformed (attempt %d)", tag, attempt + 1)
    outcome.fallback = True
    outcome.fused = [c.best_available() for c in contexts]
    return outcome


# ---------------------------------------------------------------------------
# motion calibration
# ---------------------------------------------------------------------------


@dataclass
class CalibrationOutcome:
    labels: list[tuple[MotionLabel, ...]]
    calibrated: list[bool]
    fallbacks: int = 0
    exchanges: list[LlmExchange] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)


def calibrate_motions(
    time_labels_: Sequence[str],
    motions: Sequence[MotionContext],
    locations: Sequence[str],
    gateway: Gateway,
    concise: bool = True,
    tag: str = "",
) -> CalibrationOutcome:
    """Let the LLM pick one motion per ambiguous window given its location.

    Windows with exactly one candidate, no candidates, or an unknown location
    pass through without a call. A reply outside a window's candidate set
    leaves that window's candidate list unchanged.
    """
    out = CalibrationOutcome(labels=[m.labels for m in motions], calibrated=[False] * len(motions))
    todo = [
        i
        for i, m in enumerate(motions)
        if len(m.labels) > 1 and locations[i] != UNKNOWN_LOCATION
    ]
    if not todo:
        return out

    lines = "\n".join(
        f"[{time_labels_[i]}](candidates: {' | '.join(l.text for l in motions[i].labels)}; "
        f"location: {locations[i]})"
        for i in todo
    )
    try:
        exchange = gateway.run(
            "motion_calibration",
            {"logs": lines, "concise_instruction": gateway.catalog.concise_instruction("motion_calibration", concise)},
            tag=tag,
        )
    except (MissingFixture, ProviderUnavailable) as exc:
        log.warning("calibration call for batch %s failed: %s", tag, exc)
        out.errors.append(str(exc))
        out.fallbacks = len(todo)
        return out
    out.exchanges.append(exchange)
    answers = dict(parse_timed_lines(exchange.summary or ""))
    for i in todo:
        answer = answers.get(time_labels_[i])
        try:
            label = MotionLabel.parse(answer) if answer is not None else None
        except ValueError:
            label = None
        if label is not None and label in motions[i].labels:
            out.labels[i] = (label,)
            out.calibrated[i] = True
        else:
            out.fallbacks += 1
    return out
