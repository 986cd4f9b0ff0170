"""Synthetic labelled traces for closure tests and benchmarks.

A ``Scenario`` is a script of segments. Each segment fixes a ground-truth
motion, the place where it happens and how long it lasts. Window features are
drawn uniformly from per-label ranges that sit well inside the motion rules'
thresholds, then rendered into raw sensor payloads (step count, 20 Hz
accelerometer noise, 1 Hz barometer and GPS, WiFi scan). The generator also
emits one map fixture per visited grid cell and two reference journals.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from lifejournal.errors import InvalidScenario
from lifejournal.geo import METERS_PER_DEGREE, GridProjection, make_png
from lifejournal.motion import DEFAULT_THRESHOLDS, MotionLabel, MotionThresholds
from lifejournal.trace import (
    STANDARD_PRESSURE_HPA,
    DutyCycleConfig,
    GpsFix,
    SensorBurst,
    dump_trace,
    filter_gps,
    format_clock,
)

L = MotionLabel
SAMPLE_RATE_HZ = 20.0
GRAVITY = 9.81
MARGIN = 0.2
BASE_TIME = 1_699_948_800  # 08:00 UTC


@dataclass(frozen=True)
class FeatureRanges:
    """Closed sampling intervals for one motion: steps/min, |a| m/s^2, dh m, v m/s."""

    s: tuple[float, float]
    a: tuple[float, float]
    dh: tuple[float, float]
    v: tuple[float, float]


FEATURE_RANGES: dict[MotionLabel, FeatureRanges] = {
    L.STATIONARY: FeatureRanges(s=(0, 0), a=(0.02, 0.06), dh=(-0.06, 0.06), v=(0.0, 0.06)),
    L.LIMITED_MOTION: FeatureRanges(s=(0, 4), a=(0.3, 0.8), dh=(-0.5, 0.5), v=(0.0, 0.35)),
    L.WALKING: FeatureRanges(s=(84, 116), a=(0.8, 2.0), dh=(-0.8, 0.8), v=(0.9, 1.4)),
    L.JOGGING_RUNNING: FeatureRanges(s=(168, 200), a=(2.0, 4.0), dh=(-0.8, 0.8), v=(2.4, 3.2)),
    L.CYCLING: FeatureRanges(s=(72, 112), a=(1.0, 2.0), dh=(-0.8, 0.8), v=(4.2, 4.8)),
    L.VEHICLE_SUBWAY_FERRY_TRAIN: FeatureRanges(s=(0, 4), a=(0.2, 1.0), dh=(-0.8, 0.8), v=(6.0, 20.0)),
    L.ESCALATOR_ELEVATOR: FeatureRanges(s=(0, 4), a=(0.1, 0.5), dh=(3.2, 10.0), v=(0.0, 0.6)),
}


def admissible_intervals(label: MotionLabel, th: MotionThresholds = DEFAULT_THRESHOLDS) -> dict[str, tuple[float, float]]:
    """Per-feature intervals inside which ``label`` is the only rule that fires.

    Derived by hand from the thresholds for the feature combinations used by
    ``FEATURE_RANGES`` (e.g. walking keeps s below the jogging threshold).
    """
    inf = math.inf
    table = {
        L.STATIONARY: dict(s=(0, th.stationary_s), a=(0, th.stationary_a), dh=(-th.stationary_dh, th.stationary_dh), v=(0, th.stationary_v)),
        L.LIMITED_MOTION: dict(s=(0, th.limited_s), a=(th.stationary_a, inf), dh=(-th.limited_dh, th.limited_dh), v=(0, th.limited_v)),
        L.WALKING: dict(s=(th.walking_s, th.jogging_s), a=(0, inf), dh=(-inf, inf), v=(0, th.walking_v)),
        L.JOGGING_RUNNING: dict(s=(th.jogging_s, inf), a=(0, inf), dh=(-inf, inf), v=(th.jogging_v_min, th.cycling_v)),
        L.CYCLING: dict(s=(th.cycling_s, th.jogging_s), a=(0, inf), dh=(-inf, inf), v=(th.cycling_v, th.vehicle_v)),
        L.VEHICLE_SUBWAY_FERRY_TRAIN: dict(s=(0, th.walking_s), a=(0, inf), dh=(-inf, inf), v=(th.vehicle_v, inf)),
        L.ESCALATOR_ELEVATOR: dict(s=(0, th.limited_s), a=(0, inf), dh=(th.lift_dh, inf), v=(0, th.lift_v)),
    }
    return table[label]


def range_margin_violations(th: MotionThresholds = DEFAULT_THRESHOLDS) -> list[str]:
    """Sampling ranges closer than 20% to an admissible bound.

    The margin is 20% of the admissible interval's width when it is bounded,
    else 20% of the magnitude of the finite bound. Zero lower bounds that are
    physical limits (s, a, v >= 0) need no margin.
    """
    out = []
    for label, ranges in FEATURE_RANGES.items():
        for name, (lo_adm, hi_adm) in admissible_intervals(label, th).items():
            lo, hi = getattr(ranges, name)
            width = hi_adm - lo_adm
            for bound, gap in ((lo_adm, lo - lo_adm), (hi_adm, hi_adm - hi)):
                if math.isinf(bound) or (bound == 0 and name != "dh" and gap >= 0):
                    continue
                need = MARGIN * (width if math.isfinite(width) else abs(bound))
                if gap < need - 1e-12:
                    out.append(f"{label.name}.{name}: {lo}..{hi} within {need:g} of bound {bound:g}")
    return out


@dataclass(frozen=True)
class Place:
    name: str  # short phrase used in reference journals, e.g. "a coffee shop"
    description: str  # what a map of the place shows
    east_m: float
    north_m: float
    ssids: tuple[str, ...] = ()


@dataclass(frozen=True)
class Segment:
    minutes: int
    label: MotionLabel
    place: Place
    to: Place | None = None  # moving segments travel from `place` to `to`
    gps_valid: bool = True
    dh: tuple[float, float] | None = None  # overrides the label's Δh range
    ssids: tuple[str, ...] = ()  # beacons seen en route (moving segments)

    @property
    def moving(self) -> bool:
        return self.to is not None


@dataclass(frozen=True)
class Scenario:
    name: str
    segments: tuple[Segment, ...]
    origin: tuple[float, float] = (22.3000, 114.1700)
    start_time: float = BASE_TIME
    altitude_m: float = 20.0

    def validate(self) -> None:
        if not self.segments:
            raise InvalidScenario(f"scenario {self.name!r} has no segments")
        for seg in self.segments:
            if seg.minutes < 1:
                raise InvalidScenario(f"scenario {self.name!r}: segment durations must be >= 1 minute")
            if seg.dh is not None:
                if seg.label in (L.STATIONARY, L.LIMITED_MOTION, L.ESCALATOR_ELEVATOR, L.VEHICLE_SUBWAY_FERRY_TRAIN):
                    raise InvalidScenario(f"scenario {self.name!r}: Δh override not allowed for {seg.label.text}")
                if seg.dh[0] > seg.dh[1]:
                    raise InvalidScenario(f"scenario {self.name!r}: empty Δh range")
        if not -80 < self.origin[0] < 80:
            raise InvalidScenario("origin latitude must be within ±80°")

    @property
    def windows(self) -> int:
        return sum(s.minutes for s in self.segments)


@dataclass
class SyntheticTrace:
    scenario: str
    seed: int
    bursts: list[SensorBurst]
    labels: list[MotionLabel]
    gps_valid: list[bool]
    references: tuple[str, str]
    map_fixtures: dict[str, bytes] = field(default_factory=dict)
    reference_lat: float | None = None

    def trace_bytes(self) -> bytes:
        return dump_trace(self.bursts)

    def labels_tsv(self, tz_offset_minutes: int = 0) -> str:
        lines = ["time\tclock\tlabel\tgps_valid"]
        for b, label, ok in zip(self.bursts, self.labels, self.gps_valid):
            lines.append(f"{b.start_time:.0f}\t{format_clock(b.start_time, tz_offset_minutes)}\t{label.text}\t{str(ok).lower()}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> Path:
        """Write an experiment directory: trace, labels, references and map fixtures."""
        out = Path(out_dir)
        (out / "fixtures" / "maps").mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_bytes(self.trace_bytes())
        (out / "labels.tsv").write_text(self.labels_tsv(), encoding="utf-8")
        (out / "ref1.txt").write_text(self.references[0] + "\n", encoding="utf-8")
        (out / "ref2.txt").write_text(self.references[1] + "\n", encoding="utf-8")
        for key, png in sorted(self.map_fixtures.items()):
            (out / "fixtures" / "maps" / f"{key}.png").write_bytes(png)
        return out


def _offset(origin: tuple[float, float], east_m: float, north_m: float) -> tuple[float, float]:
    lat = origin[0] + north_m / METERS_PER_DEGREE
    lon = origin[1] + east_m / (METERS_PER_DEGREE * math.cos(math.radians(origin[0])))
    return lat, lon


def pressure_at(h: float) -> float:
    """Inverse of the barometric formula."""
    return STANDARD_PRESSURE_HPA * (1.0 - h / 44330.0) ** (1.0 / 0.1903)


def _hotspot(rng: np.random.Generator) -> str:
    alphabet = "ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz0123456789"
    if rng.random() < 0.5:
        return f"Redmi {rng.integers(5, 13)}{'ABC'[rng.integers(0, 3)]}"
    return "".join(alphabet[i] for i in rng.integers(0, len(alphabet), 12))


def _burst(
    rng: np.random.Generator,
    start: float,
    seg: Segment,
    ranges: FeatureRanges,
    altitude: float,
    position: tuple[float, float],
    duty: DutyCycleConfig,
) -> tuple[SensorBurst, float]:
    t = duty.collect_duration_t
    steps = int(rng.integers(round(ranges.s[0] * t / 60), round(ranges.s[1] * t / 60) + 1))
    a = rng.uniform(*ranges.a)
    dh = rng.uniform(*(seg.dh or ranges.dh))
    v = rng.uniform(*ranges.v)

    n = int(t * SAMPLE_RATE_HZ)
    times = start + np.arange(n) / SAMPLE_RATE_HZ
    sigma = a / (2.0 * math.sqrt(2.0 / math.pi))  # E|N(0, s^2 I3)| = 1.596 s
    noise = rng.normal(0.0, sigma, size=(n, 3))
    accel = tuple(
        (round(float(ti), 3), round(float(x), 4), round(float(y), 4), round(float(GRAVITY + z), 4))
        for ti, (x, y, z) in zip(times, noise)
    )

    k = int(t)  # 1 Hz barometer and GPS
    pressure = tuple(
        (float(start + i), round(pressure_at(altitude + dh * i / (k - 1)), 6)) for i in range(k)
    )
    jitter = rng.uniform(-0.015, 0.015, size=k)
    fixes = []
    for i in range(k):
        east = rng.uniform(-3.0, 3.0)
        north = rng.uniform(-3.0, 3.0)
        lat = position[0] + north / METERS_PER_DEGREE
        lon = position[1] + east / (METERS_PER_DEGREE * math.cos(math.radians(position[0])))
        fixes.append(
            GpsFix(
                t=float(start + i),
                lat=round(lat, 7),
                lon=round(lon, 7),
                speed_mps=round(max(0.0, v + float(jitter[i])), 3),
                h_accuracy_m=round(float(rng.uniform(5, 20)), 1) if seg.gps_valid else 80.0,
                satellites=int(rng.integers(8, 13)) if seg.gps_valid else 3,
            )
        )

    ssids = list(seg.ssids if seg.moving else seg.place.ssids)
    for _ in range(int(rng.integers(0, 3))):
        ssids.append(_hotspot(rng))
    if ssids and rng.random() < 0.3:
        ssids.append(ssids[0])  # repeated beacons are common in real scans
    burst = SensorBurst(
        start_time=float(start),
        accel_samples=accel,
        step_count=steps,
        pressure_hpa=pressure,
        gps_fixes=tuple(fixes),
        wifi_ssids=tuple(ssids),
    )
    return burst, altitude + dh


_VERB = {
    L.STATIONARY: ("stays", "at"),
    L.LIMITED_MOTION: ("moves around", "in"),
    L.WALKING: ("walks", "along"),
    L.JOGGING_RUNNING: ("jogs", "along"),
    L.CYCLING: ("cycles", "along"),
    L.VEHICLE_SUBWAY_FERRY_TRAIN: ("travels by vehicle", "along"),
    L.ESCALATOR_ELEVATOR: ("takes an elevator", "in"),
}


def _references(scenario: Scenario, duty: DutyCycleConfig) -> tuple[str, str]:
    t = scenario.start_time
    first, second = [], []
    for seg in scenario.segments:
        end = t + (seg.minutes - 1) * duty.period_T
        a, b = format_clock(t), format_clock(end)
        verb, prep = _VERB[seg.label]
        where = f"from {seg.place.name} to {seg.to.name}" if seg.to else f"{prep} {seg.place.name}"
        first.append(f"From {a} to {b}, the user {verb} {where}.")
        second.append(f"Between {a} and {b} the user {verb} {where}.")
        t += seg.minutes * duty.period_T
    return " ".join(first), " ".join(second)


def generate_synthetic_trace(
    scenario: Scenario, seed: int, duty: DutyCycleConfig = DutyCycleConfig()
) -> SyntheticTrace:
    """Deterministic labelled trace for ``scenario``; one burst per period ``T``."""
    scenario.validate()
    rng = np.random.default_rng(seed)
    bursts: list[SensorBurst] = []
    labels: list[MotionLabel] = []
    valid: list[bool] = []
    cell_places: list[tuple[tuple[float, float], Place]] = []
    altitude = scenario.altitude_m
    start = scenario.start_time
    for seg in scenario.segments:
        a = _offset(scenario.origin, seg.place.east_m, seg.place.north_m)
        b = _offset(scenario.origin, seg.to.east_m, seg.to.north_m) if seg.to else a
        for m in range(seg.minutes):
            frac = m / max(1, seg.minutes - 1) if seg.moving else 0.0
            pos = (a[0] + (b[0] - a[0]) * frac, a[1] + (b[1] - a[1]) * frac)
            burst, altitude = _burst(rng, start, seg, FEATURE_RANGES[seg.label], altitude, pos, duty)
            bursts.append(burst)
            labels.append(seg.label)
            valid.append(seg.gps_valid)
            _, loc = filter_gps(burst.gps_fixes)
            if loc is not None:
                cell_places.append((loc, seg.place))
            start += duty.period_T

    ref_lat = cell_places[0][0][0] if cell_places else None
    fixtures: dict[str, bytes] = {}
    if ref_lat is not None:
        projection = GridProjection(ref_lat)
        for loc, place in cell_places:
            key = projection.key(*loc).render()
            if key not in fixtures:
                fixtures[key] = make_png(text={"Description": place.description, "Key": key})
    return SyntheticTrace(
        scenario=scenario.name,
        seed=seed,
        bursts=bursts,
        labels=labels,
        gps_valid=valid,
        references=_references(scenario, duty),
        map_fixtures=fixtures,
        reference_lat=ref_lat,
    )


# ---------------------------------------------------------------------------
# named scenarios
# ---------------------------------------------------------------------------

OFFICE = Place("an office building", "An office tower in a commercial district.", 0, 0, ("ACME-Corp-Staff", "ACME-Guest"))
CAFE = Place("a coffee shop", "A shopping street lined with small shops.", 400, 150, ("Starbucks-Guest",))
PARK_TRAIL = Place("a park trail", "A hillside country park with walking trails.", 900, 900)
VIEWPOINT = Place("a hilltop viewpoint", "A hilltop lookout point in a country park.", 1500, 1600)
TRAIL_END = Place("a park trail", "A hillside country park with walking trails.", 2100, 2300)
ROAD = Place("a main road", "A multi-lane main road with traffic.", 600, -200)
HOME = Place("a residential flat", "A residential estate with apartment blocks.", 3500, -900, ("Home-Flat-5G",))
LIBRARY = Place("a library", "A university campus with teaching buildings.", -800, 500, ("eduroam", "Library-Public"))
LECTURE = Place("a lecture hall", "A university campus with teaching buildings.", -1100, 650, ("eduroam",))
WATERFRONT = Place("a waterfront promenade", "A waterfront promenade along the harbour.", 200, -1200)
PIER = Place("a waterfront promenade", "A waterfront promenade along the harbour.", 1400, -1500)
SEASIDE_PARK = Place("a seaside park", "A seaside park with lawns by the water.", 4200, -1800)
STATION = Place("a subway line", "A subway station entrance beside a main road.", -300, -400)
MALL = Place("a shopping mall", "A large shopping mall complex.", 5200, 300, ("Mall-Free-WiFi", "H&M-Store"))
RESTAURANT = Place("a noodle restaurant", "A shopping street lined with small shops.", 350, 120, ("Noodle-House-2F",))


def _scenarios() -> dict[str, Scenario]:
    s = [
        Scenario("stationary_10min", (Segment(10, L.STATIONARY, OFFICE),)),
        Scenario(
            "hike",
            (
                Segment(30, L.WALKING, PARK_TRAIL, to=VIEWPOINT, dh=(0.5, 0.8)),
                Segment(10, L.STATIONARY, VIEWPOINT),
                Segment(20, L.WALKING, VIEWPOINT, to=TRAIL_END, dh=(-0.8, -0.5)),
            ),
        ),
        Scenario(
            "commute",
            (
                Segment(8, L.WALKING, HOME, to=ROAD),
                Segment(25, L.VEHICLE_SUBWAY_FERRY_TRAIN, ROAD, to=OFFICE),
                Segment(7, L.WALKING, OFFICE, to=CAFE),
                Segment(20, L.STATIONARY, OFFICE),
            ),
        ),
        Scenario(
            "cafe_break",
            (
                Segment(30, L.STATIONARY, CAFE, gps_valid=False),
                Segment(10, L.WALKING, CAFE, to=MALL),
                Segment(20, L.LIMITED_MOTION, MALL),
            ),
        ),
        Scenario(
            "campus_day",
            (
                Segment(40, L.STATIONARY, LIBRARY, gps_valid=False),
                Segment(10, L.WALKING, LIBRARY, to=LECTURE),
                Segment(30, L.STATIONARY, LECTURE),
            ),
        ),
        Scenario(
            "morning_run",
            (
                Segment(30, L.JOGGING_RUNNING, WATERFRONT, to=PIER),
                Segment(10, L.WALKING, PIER, to=CAFE),
                Segment(15, L.STATIONARY, CAFE),
            ),
        ),
        Scenario(
            "bike_ride",
            (
                Segment(40, L.CYCLING, WATERFRONT, to=SEASIDE_PARK),
                Segment(20, L.STATIONARY, SEASIDE_PARK),
            ),
        ),
        Scenario(
            "subway_trip",
            (
                Segment(10, L.WALKING, OFFICE, to=STATION),
                Segment(30, L.VEHICLE_SUBWAY_FERRY_TRAIN, STATION, to=MALL, gps_valid=False, ssids=("Metro-Train-WiFi",)),
                Segment(10, L.WALKING, MALL, to=RESTAURANT),
                Segment(20, L.STATIONARY, RESTAURANT),
            ),
        ),
        Scenario(
            "office_lift",
            (
                Segment(20, L.STATIONARY, OFFICE),
                Segment(3, L.ESCALATOR_ELEVATOR, OFFICE),
                Segment(15, L.LIMITED_MOTION, OFFICE),
                Segment(12, L.WALKING, OFFICE, to=RESTAURANT),
                Segment(2, L.ESCALATOR_ELEVATOR, RESTAURANT),
                Segment(30, L.STATIONARY, RESTAURANT),
            ),
        ),
        Scenario(
            "errands",
            (
                Segment(15, L.WALKING, HOME, to=MALL),
                Segment(25, L.LIMITED_MOTION, MALL),
                Segment(20, L.VEHICLE_SUBWAY_FERRY_TRAIN, MALL, to=HOME),
                Segment(20, L.STATIONARY, HOME),
            ),
        ),
    ]
    return {sc.name: sc for sc in s}


SCENARIOS: dict[str, Scenario] = _scenarios()


def scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise InvalidScenario(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}") from None


def write_labels_json(trace: SyntheticTrace, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps({"scenario": trace.scenario, "seed": trace.seed, "labels": [l.text for l in trace.labels]}, indent=1),
        encoding="utf-8",
    )
