"""Journal generation and cleaning over context logs, plus the raw-sensor baseline."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

from lifejournal.context import ContextLogEntry
from lifejournal.errors import EmptyHorizon, LifeJournalError
from lifejournal.llm.gateway import Gateway, LlmExchange
from lifejournal.trace import (
    DutyCycleConfig,
    SensorBurst,
    WindowFeatures,
    extract_features,
    format_clock,
)

log = logging.getLogger(__name__)

SOURCE_PIPELINE = "pipeline"
SOURCE_SENLLM = "senllm"


@dataclass
class Journal:
    period: tuple[float, float]
    source: str
    draft_text: str | None = None
    final_text: str | None = None
    hallucinated: bool = False
    cleaning_fallback: bool = False
    exchange_ids: list[str] = field(default_factory=list)

    def header(self, tz_offset_minutes: int = 0) -> str:
        start = format_clock(self.period[0], tz_offset_minutes)
        end = format_clock(self.period[1], tz_offset_minutes)
        return (
            f"period: {start}-{end} ({self.period[0]:.0f}-{self.period[1]:.0f})\n"
            f"source: {self.source}\n"
            f"hallucinated: {str(self.hallucinated).lower()}\n"
        )

    def render(self, tz_offset_minutes: int = 0) -> str:
        return self.header(tz_offset_minutes) + "\n" + (self.final_text or "") + "\n"


def assemble_context_log(
    entries: Sequence[ContextLogEntry], horizon: tuple[float, float] | None = None
) -> str:
    """``[HH:MM](motion, location), ...`` for the entries inside ``horizon`` (start inclusive)."""
    if horizon is not None:
        entries = [e for e in entries if horizon[0] <= e.time < horizon[1]]
    if not entries:
        raise EmptyHorizon("no context entries in the journaling horizon")
    return ", ".join(e.render() for e in entries)


def generate_journal(log_text: str, gateway: Gateway, tag: str = "") -> LlmExchange:
    if not log_text.strip():
        raise EmptyHorizon("empty context log")
    examples = "\n".join(f"- {e}" for e in gateway.catalog.journal_examples)
    return gateway.run("journal_generation", {"logs": log_text, "examples": examples}, tag=tag)


def clean_journal(draft: str, gateway: Gateway, tag: str = "") -> tuple[str, bool, LlmExchange | None]:
    """Strip subjective remarks. Returns (final text, fell back to draft, exchange)."""
    try:
        exchange = gateway.run("journal_cleaning", {"journal": draft}, tag=tag)
    except LifeJournalError as exc:
        log.warning("journal cleaning failed (%s); keeping draft", exc)
        return draft, True, None
    if exchange.hallucinated:
        log.info("journal cleaning hallucinated; keeping draft")
        return draft, True, exchange
    return exchange.summary, False, exchange


def journal_for_horizon(
    entries: Sequence[ContextLogEntry],
    horizon: tuple[float, float],
    gateway: Gateway,
    tag: str = "",
) -> Journal:
    """One generate call and, unless the draft hallucinated, one cleaning call."""
    log_text = assemble_context_log(entries, horizon)
    journal = Journal(period=horizon, source=SOURCE_PIPELINE)
    draft = generate_journal(log_text, gateway, tag=f"{tag}:0")
    journal.exchange_ids.append(draft.id)
    if draft.hallucinated:
        journal.hallucinated = True
        return journal
    journal.draft_text = draft.summary
    final, fallback, cleaned = clean_journal(draft.summary, gateway, tag=f"{tag}:1")
    if cleaned is not None:
        journal.exchange_ids.append(cleaned.id)
    journal.final_text = final
    journal.cleaning_fallback = fallback
    return journal


def horizons(start: float, end: float, length_s: float) -> list[tuple[float, float]]:
    """Consecutive ``[start + k*length, start + (k+1)*length)`` spans covering ``[start, end]``."""
    if length_s <= 0:
        raise ValueError("horizon length must be positive")
    out = []
    t = start
    while t <= end:
        out.append((t, t + length_s))
        t += length_s
    return out


# ---------------------------------------------------------------------------
# raw-sensor baseline
# ---------------------------------------------------------------------------


def serialize_window(f: WindowFeatures, tz_offset_minutes: int = 0) -> str:
    v = f"{f.v:.1f}" if f.flags.speed_valid else "na"
    gps = f"({f.location[0]:.5f},{f.location[1]:.5f})" if f.location else "na"
    ssids = ", ".join(f.ssids)
    return (
        f"t={format_clock(f.time, tz_offset_minutes)} steps={f.s:.0f} acc={f.a:.2f} "
        f"dh={f.delta_h:.1f} v={v} ssids=[{ssids}] gps={gps}"
    )


def senllm_baseline(
    bursts: Sequence[SensorBurst],
    gateway: Gateway,
    duty: DutyCycleConfig = DutyCycleConfig(),
    tz_offset_minutes: int = 0,
    tag: str = "senllm",
) -> Journal:
    """Feed serialized per-window features of the whole trace to one LLM call."""
    lines = []
    for burst in bursts:
        try:
            lines.append(serialize_window(extract_features(burst, duty), tz_offset_minutes))
        except LifeJournalError as exc:
            log.warning("baseline skips burst at %s: %s", burst.start_time, exc)
    if not lines:
        raise EmptyHorizon("trace has no usable windows")
    examples = "\n".join(f"- {e}" for e in gateway.catalog.journal_examples)
    exchange = gateway.run("senllm_journal", {"logs": "\n".join(lines), "examples": examples}, tag=tag)
    journal = Journal(
        period=(bursts[0].start_time, bursts[-1].start_time + duty.period_T),
        source=SOURCE_SENLLM,
        exchange_ids=[exchange.id],
    )
    if exchange.hallucinated:
        journal.hallucinated = True
    else:
        journal.draft_text = journal.final_text = exchange.summary
    return journal
