"""End-to-end orchestration: trace -> features -> motion -> location -> refinement -> journals.

All provider access goes through one ``Gateway``. Per-window and per-batch
work runs on a thread pool, but every LLM call carries a tag derived from its
window or batch index, so transcripts and reports do not depend on thread
scheduling.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from lifejournal.context import (
    UNKNOWN_LOCATION,
    ContextLogEntry,
    LocationContext,
    MapContextSource,
    assemble_batches,
    calibrate_motions,
    refine_locations,
    ssid_location_context,
    time_labels,
)
from lifejournal.errors import LifeJournalError, MissingMotionSource
from lifejournal.geo import ContextCache, GridProjection, MapProvider
from lifejournal.journal import (
    SOURCE_PIPELINE,
    SOURCE_SENLLM,
    Journal,
    horizons,
    journal_for_horizon,
    senllm_baseline,
)
from lifejournal.llm.gateway import Gateway, hallucination_rate
from lifejournal.llm.ledger import LedgerReport, ledger_report
from lifejournal.motion import DEFAULT_THRESHOLDS, MotionContext, MotionThresholds, detect_motion
from lifejournal.trace import (
    DutyCycleConfig,
    SensorBurst,
    WindowFeatures,
    extract_features,
    filter_gps,
    segment_duty_cycle,
)

log = logging.getLogger(__name__)

MODES = (SOURCE_PIPELINE, SOURCE_SENLLM)


class StageError(LifeJournalError):
    """A pipeline stage failed in a way that cannot be degraded."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class PipelineSettings:
    duty: DutyCycleConfig = DutyCycleConfig()
    batch_size: int = 15
    horizon_s: float = 3600.0
    tz_offset_minutes: int = 0
    concise: bool = True
    thinning: int = 1  # keep one window out of every `thinning`
    workers: int = 4
    thresholds: MotionThresholds = DEFAULT_THRESHOLDS

    def __post_init__(self) -> None:
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.horizon_s <= 0:
            raise ValueError("horizon_s must be > 0")
        if self.thinning < 1:
            raise ValueError("thinning must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass
class WindowState:
    index: int
    features: WindowFeatures
    motion: MotionContext
    location: LocationContext
    time_label: str = ""
    motion_text: str = ""


@dataclass
class PipelineResult:
    mode: str
    journals: list[Journal]
    entries: list[ContextLogEntry] = field(default_factory=list)
    windows: list[WindowState] = field(default_factory=list)
    report: dict = field(default_factory=dict)
    ledger: LedgerReport | None = None

    def context_log(self) -> str:
        return "".join(e.render() + "\n" for e in self.entries)

    def journal_text(self) -> str:
        """All final journal texts of the run, in time order."""
        return "\n".join(j.final_text for j in self.journals if j.final_text)


def trace_hours(times: Sequence[float], period_s: float) -> Fraction:
    if not times:
        return Fraction(0)
    return Fraction(str(times[-1] - times[0] + period_s)) / 3600


def observed_frequencies(gateway: Gateway, hours: Fraction) -> dict[str, Fraction]:
    if hours <= 0:
        return {}
    return {tid: Fraction(u.calls) / hours for tid, u in gateway.ledger.usage.items()}


def ledger_snapshot(gateway: Gateway, hours: Fraction) -> tuple[LedgerReport | None, dict]:
    """Cost report at the observed call rates; prices missing for a model yield an error entry."""
    try:
        report = ledger_report(gateway.ledger, observed_frequencies(gateway, hours))
    except LifeJournalError as exc:
        return None, {"error": str(exc)}
    return report, report.to_dict()


def first_location(bursts: Sequence[SensorBurst]) -> tuple[float, float] | None:
    for burst in bursts:
        location = filter_gps(burst.gps_fixes)[1]
        if location is not None:
            return location
    return None


def prepare_windows(
    bursts: Sequence[SensorBurst], settings: PipelineSettings, report: dict
) -> list[tuple[int, WindowFeatures]]:
    """Duty-cycle validation, thinning and feature extraction.

    Windows without any motion source are dropped and listed in the report.
    """
    issues: list[str] = []
    windows = segment_duty_cycle(bursts, settings.duty, issues)
    kept = windows[:: settings.thinning]
    dropped = []
    out = []
    for i, burst in enumerate(kept):
        try:
            out.append((i, extract_features(burst, settings.duty)))
        except MissingMotionSource as exc:
            dropped.append({"time": burst.start_time, "reason": str(exc)})
    report["windows"] = {
        "input": len(bursts),
        "thinning": settings.thinning,
        "after_thinning": len(kept),
        "used": len(out),
        "dropped": dropped,
        "duty_cycle_warnings": issues,
    }
    return out


def _reference_lat(bursts: Sequence[SensorBurst], cache: ContextCache) -> float:
    """The cache's pinned latitude, else the first valid fix of the whole (unthinned) trace."""
    if cache.reference_lat is not None:
        return cache.reference_lat
    location = first_location(bursts)
    if location is None:
        return 0.0
    cache.reference_lat = location[0]
    return location[0]


def _location_contexts(
    states: list[WindowState],
    ref_lat: float,
    gateway: Gateway,
    map_provider: MapProvider,
    cache: ContextCache,
    settings: PipelineSettings,
    report: dict,
) -> None:
    projection = GridProjection(ref_lat)
    geo = MapContextSource(gateway, map_provider, cache, projection)
    degraded: list[dict] = []

    # one lookup per distinct cell, tagged by the first window that visits it
    first_visit: dict[str, int] = {}
    for st in states:
        if st.features.location is not None:
            key = projection.key(*st.features.location).render()
            st.location.grid_key = key
            first_visit.setdefault(key, st.index)
    warm = {key for key in first_visit if key in cache}

    def cell_lookup(key: str) -> tuple[str, str | None, str | None]:
        st = next(s for s in states if s.index == first_visit[key])
        try:
            text, source, _ = geo.lookup(*st.features.location, tag=f"1:{st.index:06d}:map")
            return key, text, source
        except LifeJournalError as exc:
            degraded.append({"time": st.features.time, "stage": "map_context", "key": key, "error": str(exc)})
            return key, None, None

    def ssid_lookup(st: WindowState) -> tuple[int, str | None]:
        try:
            return st.index, ssid_location_context(st.features.ssids, gateway, tag=f"1:{st.index:06d}:ssid")
        except LifeJournalError as exc:
            degraded.append({"time": st.features.time, "stage": "ssid_context", "error": str(exc)})
            return st.index, None

    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        cells = {k: (text, source) for k, text, source in pool.map(cell_lookup, sorted(first_visit))}
        ssid_texts = dict(pool.map(ssid_lookup, states))

    cache_hits = 0
    for st in states:
        loc = st.location
        if loc.grid_key is not None:
            text, source = cells[loc.grid_key]
            if text is not None:
                loc.map_text = text
                first = st.index == first_visit[loc.grid_key]
                loc.map_source = source if first else "cache"
                cache_hits += loc.map_source == "cache"
        if ssid_texts.get(st.index) is not None:
            loc.ssid_text = ssid_texts[st.index]
            loc.ssid_source = "llm"

    report["location"] = {
        "reference_lat": projection.ref_lat,
        "distinct_cells": len(first_visit),
        "warm_cells": len(warm),
        "map_calls": gateway.calls("map_context"),
        "ssid_calls": gateway.calls("ssid_context"),
        "cache_hits": cache_hits,
        "windows_without_context": sum(not st.location.has_context for st in states),
        "degraded": sorted(degraded, key=lambda d: (d["time"], d["stage"])),
    }


def _process_batch(
    b: int, batch: list[WindowState], gateway: Gateway, settings: PipelineSettings
) -> dict:
    labels = time_labels([st.features.time for st in batch], settings.tz_offset_minutes)
    for st, label in zip(batch, labels):
        st.time_label = label

    with_ctx = [st for st in batch if st.location.has_context]
    summary: dict = {"batch": b, "windows": len(batch), "refined": len(with_ctx)}
    if with_ctx:
        outcome = refine_locations(
            [st.time_label for st in with_ctx],
            [st.location for st in with_ctx],
            gateway,
            concise=settings.concise,
            tag=f"2:{b:04d}:fusion",
        )
        source = "fallback" if outcome.fallback else ("llm" if outcome.llm_used else "single")
        for st, text in zip(with_ctx, outcome.fused):
            st.location.fused_text = text
            st.location.fused_source = source
        summary.update(
            fusion_attempts=outcome.attempts,
            malformed_replies=outcome.attempts - len(outcome.errors) - (0 if outcome.fallback else 1)
            if outcome.llm_used
            else 0,
            fallback=outcome.fallback,
            errors=outcome.errors,
        )
    for st in batch:
        if not st.location.has_context:
            st.location.fused_text = UNKNOWN_LOCATION

    calib = calibrate_motions(
        [st.time_label for st in batch],
        [st.motion for st in batch],
        [st.location.location_text for st in batch],
        gateway,
        concise=settings.concise,
        tag=f"3:{b:04d}:calibration",
    )
    for st, labs, done in zip(batch, calib.labels, calib.calibrated):
        st.motion_text = MotionContext(st.motion.time, labs, len(labs) != 1).text()
    summary.update(
        calibrated=sum(calib.calibrated),
        calibration_fallbacks=calib.fallbacks,
        calibration_errors=calib.errors,
    )
    return summary


def run_pipeline(
    bursts: Sequence[SensorBurst],
    gateway: Gateway,
    map_provider: MapProvider,
    cache: ContextCache | None = None,
    settings: PipelineSettings = PipelineSettings(),
) -> PipelineResult:
    """Full multi-stage journaling of one trace.

    Single misbehaving replies degrade one window or one batch. A failing
    journal generation call aborts with ``StageError``.
    """
    cache = cache if cache is not None else ContextCache()
    report: dict = {"mode": SOURCE_PIPELINE}
    prepared = prepare_windows(bursts, settings, report)
    states = [
        WindowState(i, f, detect_motion(f, settings.thresholds), LocationContext(time=f.time))
        for i, f in prepared
    ]
    report["motion"] = {
        "ambiguous_windows": sum(st.motion.ambiguous for st in states),
        "empty_windows": sum(not st.motion.labels for st in states),
    }
    hours = trace_hours([st.features.time for st in states], settings.duty.period_T * settings.thinning)
    if not states:
        report["journals"] = []
        report["hallucination_rate"] = 0.0
        ledger, report["ledger"] = ledger_snapshot(gateway, hours)
        return PipelineResult(SOURCE_PIPELINE, [], report=report, ledger=ledger)

    _location_contexts(states, _reference_lat(bursts, cache), gateway, map_provider, cache, settings, report)

    batches = assemble_batches([st.features.time for st in states], settings.duty.period_T, settings.batch_size)
    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        batch_reports = list(
            pool.map(lambda ib: _process_batch(ib[0], [states[i] for i in ib[1]], gateway, settings), enumerate(batches))
        )
    report["refinement"] = {
        "batches": len(batches),
        "llm_batches": sum(1 for r in batch_reports if r.get("fusion_attempts")),
        "fallback_batches": sum(1 for r in batch_reports if r.get("fallback")),
        "malformed_replies": sum(r.get("malformed_replies", 0) for r in batch_reports),
        "calibrated_windows": sum(r["calibrated"] for r in batch_reports),
        "calibration_fallbacks": sum(r["calibration_fallbacks"] for r in batch_reports),
        "per_batch": batch_reports,
    }

    entries = [
        ContextLogEntry(st.features.time, st.time_label, st.motion_text, st.location.location_text)
        for st in states
    ]
    spans = horizons(entries[0].time, entries[-1].time, settings.horizon_s)

    def one_horizon(ih: tuple[int, tuple[float, float]]) -> Journal | None:
        h, span = ih
        if not any(span[0] <= e.time < span[1] for e in entries):
            return None
        try:
            return journal_for_horizon(entries, span, gateway, tag=f"4:{h:04d}:journal")
        except LifeJournalError as exc:
            raise StageError(f"journal generation for horizon {h}", exc) from exc

    with ThreadPoolExecutor(max_workers=settings.workers) as pool:
        journals = [j for j in pool.map(one_horizon, enumerate(spans)) if j is not None]

    report["journals"] = [
        {
            "period": list(j.period),
            "hallucinated": j.hallucinated,
            "cleaning_fallback": j.cleaning_fallback,
            "entries": sum(1 for e in entries if j.period[0] <= e.time < j.period[1]),
            "exchange_ids": j.exchange_ids,
        }
        for j in journals
    ]
    report["hallucination_rate"] = journal_hallucination_rate(journals)
    report["exchange_hallucination_rate"] = hallucination_rate(gateway.exchanges)
    ledger, report["ledger"] = ledger_snapshot(gateway, hours)
    return PipelineResult(SOURCE_PIPELINE, journals, entries, states, report, ledger)


def run_senllm(
    bursts: Sequence[SensorBurst],
    gateway: Gateway,
    settings: PipelineSettings = PipelineSettings(),
) -> PipelineResult:
    """Raw-sensor baseline: one LLM call over the serialized trace."""
    report: dict = {"mode": SOURCE_SENLLM}
    windows = segment_duty_cycle(bursts, settings.duty)[:: settings.thinning]
    report["windows"] = {"input": len(bursts), "thinning": settings.thinning, "used": len(windows)}
    try:
        journal = senllm_baseline(windows, gateway, settings.duty, settings.tz_offset_minutes)
    except LifeJournalError as exc:
        raise StageError("senllm journal", exc) from exc
    hours = trace_hours([b.start_time for b in windows], settings.duty.period_T * settings.thinning)
    report["journals"] = [
        {"period": list(journal.period), "hallucinated": journal.hallucinated, "exchange_ids": journal.exchange_ids}
    ]
    report["hallucination_rate"] = journal_hallucination_rate([journal])
    ledger, report["ledger"] = ledger_snapshot(gateway, hours)
    return PipelineResult(SOURCE_SENLLM, [journal], report=report, ledger=ledger)


def journal_hallucination_rate(journals: Sequence[Journal]) -> float:
    if not journals:
        return 0.0
    return sum(j.hallucinated for j in journals) / len(journals)
