"""Trace data model, trace-file parsing, duty-cycle segmentation and per-window features.

A trace is a newline-delimited JSON file with one object per duty-cycle burst
(see ``docs/trace-format.md``). Every burst is reduced to the four quantities
the motion rules consume: steps per minute, mean linear acceleration, altitude
change and horizontal speed, plus the GPS location and the scanned SSIDs.
"""

from __future__ import annotations

import io
import json
import logging
import math
from dataclasses import dataclass, replace
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import IO, Iterable, Sequence

import numpy as np
from scipy import signal

from lifejournal.errors import (
    InsufficientSamples,
    MalformedRecord,
    MissingBarometer,
    MissingMotionSource,
    NonMonotonicTime,
    PressureOutOfRange,
)

log = logging.getLogger(__name__)

STANDARD_PRESSURE_HPA = 1013.25
MIN_SATELLITES = 5  # fewer satellites: speed unreliable
MAX_H_ACCURACY_M = 50.0

# step counter
STEP_BAND_HZ = (0.5, 3.0)
STEP_THRESHOLD = 1.0  # m/s^2 on the band-passed magnitude
STEP_REFRACTORY_S = 0.3

GRAVITY_TIME_CONSTANT_S = 0.5

AccelSample = tuple[float, float, float, float]
PressureSample = tuple[float, float]


@dataclass(frozen=True)
class GpsFix:
    t: float
    lat: float
    lon: float
    speed_mps: float
    h_accuracy_m: float
    satellites: int

    def __post_init__(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 < self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")
        if self.h_accuracy_m < 0:
            raise ValueError("h_accuracy_m must be >= 0")
        if self.satellites < 0:
            raise ValueError("satellites must be >= 0")


@dataclass(frozen=True)
class SensorBurst:
    """One duty-cycle activation. Optional streams are ``None`` when not recorded."""

    start_time: float
    accel_samples: tuple[AccelSample, ...] | None = None
    step_count: int | None = None
    pressure_hpa: tuple[PressureSample, ...] | None = None
    gps_fixes: tuple[GpsFix, ...] = ()
    wifi_ssids: tuple[str, ...] = ()

    def span(self) -> float:
        """Seconds from ``start_time`` to the latest sample of any stream."""
        last = self.start_time
        if self.accel_samples:
            last = max(last, self.accel_samples[-1][0])
        if self.pressure_hpa:
            last = max(last, self.pressure_hpa[-1][0])
        if self.gps_fixes:
            last = max(last, max(f.t for f in self.gps_fixes))
        return last - self.start_time

    def sample_count(self) -> int:
        return (
            len(self.accel_samples or ())
            + len(self.pressure_hpa or ())
            + len(self.gps_fixes)
        )

    def to_record(self) -> dict:
        rec: dict = {"start_time": self.start_time}
        if self.accel_samples is not None:
            rec["accel_samples"] = [list(s) for s in self.accel_samples]
        if self.step_count is not None:
            rec["step_count"] = self.step_count
        if self.pressure_hpa is not None:
            rec["pressure_hpa"] = [list(p) for p in self.pressure_hpa]
        rec["gps_fixes"] = [
            {
                "t": f.t,
                "lat": f.lat,
                "lon": f.lon,
                "speed_mps": f.speed_mps,
                "h_accuracy_m": f.h_accuracy_m,
                "satellites": f.satellites,
            }
            for f in self.gps_fixes
        ]
        rec["wifi_ssids"] = list(self.wifi_ssids)
        return rec


@dataclass(frozen=True)
class FeatureFlags:
    speed_valid: bool
    location_valid: bool
    altitude_valid: bool


@dataclass(frozen=True)
class WindowFeatures:
    time: float
    s: float  # steps per minute
    a: float  # mean linear-acceleration magnitude, m/s^2
    delta_h: float  # m, signed
    v: float  # m/s, meaningful only when flags.speed_valid
    flags: FeatureFlags
    location: tuple[float, float] | None = None
    ssids: tuple[str, ...] = ()


@dataclass(frozen=True)
class DutyCycleConfig:
    collect_duration_t: float = 15.0
    period_T: float = 60.0

    def __post_init__(self) -> None:
        if not 0 < self.collect_duration_t <= self.period_T:
            raise ValueError(
                f"duty cycle needs 0 < t <= T, got t={self.collect_duration_t}, T={self.period_T}"
            )


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _number(value, what: str, line_no: int) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise MalformedRecord(line_no, f"{what} must be a number, got {value!r}")
    if not math.isfinite(value):
        raise MalformedRecord(line_no, f"{what} must be finite")
    return float(value)


def _parse_record(obj, line_no: int) -> SensorBurst:
    if not isinstance(obj, dict):
        raise MalformedRecord(line_no, "record is not an object")
    if "start_time" not in obj:
        raise MalformedRecord(line_no, "missing start_time")
    start = _number(obj["start_time"], "start_time", line_no)

    accel = None
    if obj.get("accel_samples") is not None:
        raw = obj["accel_samples"]
        if not isinstance(raw, list):
            raise MalformedRecord(line_no, "accel_samples must be a list")
        rows = []
        for i, row in enumerate(raw):
            if not isinstance(row, list) or len(row) != 4:
                raise MalformedRecord(line_no, f"accel_samples[{i}] must be [t, x, y, z]")
            rows.append(tuple(_number(v, f"accel_samples[{i}]", line_no) for v in row))
        for prev, cur in zip(rows, rows[1:]):
            if cur[0] <= prev[0]:
                raise MalformedRecord(line_no, "accel sample timestamps must be strictly increasing")
        accel = tuple(rows)

    steps = obj.get("step_count")
    if steps is not None:
        if isinstance(steps, bool) or not isinstance(steps, int) or steps < 0:
            raise MalformedRecord(line_no, f"step_count must be a non-negative integer, got {steps!r}")

    pressure = None
    if obj.get("pressure_hpa") is not None:
        raw = obj["pressure_hpa"]
        if not isinstance(raw, list):
            raise MalformedRecord(line_no, "pressure_hpa must be a list")
        rows = []
        for i, row in enumerate(raw):
            if not isinstance(row, list) or len(row) != 2:
                raise MalformedRecord(line_no, f"pressure_hpa[{i}] must be [t, p]")
            t = _number(row[0], f"pressure_hpa[{i}].t", line_no)
            p = _number(row[1], f"pressure_hpa[{i}].p", line_no)
            if p <= 0:
                raise MalformedRecord(line_no, f"pressure_hpa[{i}] must be > 0")
            rows.append((t, p))
        pressure = tuple(rows)

    fixes = []
    for i, fx in enumerate(obj.get("gps_fixes") or []):
        if not isinstance(fx, dict):
            raise MalformedRecord(line_no, f"gps_fixes[{i}] is not an object")
        try:
            sats = fx["satellites"]
            if isinstance(sats, bool) or not isinstance(sats, int):
                raise MalformedRecord(line_no, f"gps_fixes[{i}].satellites must be an integer")
            fixes.append(
                GpsFix(
                    t=_number(fx["t"], f"gps_fixes[{i}].t", line_no),
                    lat=_number(fx["lat"], f"gps_fixes[{i}].lat", line_no),
                    lon=_number(fx["lon"], f"gps_fixes[{i}].lon", line_no),
                    speed_mps=_number(fx["speed_mps"], f"gps_fixes[{i}].speed_mps", line_no),
                    h_accuracy_m=_number(fx["h_accuracy_m"], f"gps_fixes[{i}].h_accuracy_m", line_no),
                    satellites=sats,
                )
            )
        except KeyError as exc:
            raise MalformedRecord(line_no, f"gps_fixes[{i}] missing field {exc.args[0]}") from None
        except ValueError as exc:
            raise MalformedRecord(line_no, f"gps_fixes[{i}]: {exc}") from None

    ssids = obj.get("wifi_ssids") or []
    if not isinstance(ssids, list) or not all(isinstance(s, str) for s in ssids):
        raise MalformedRecord(line_no, "wifi_ssids must be a list of strings")

    return SensorBurst(
        start_time=start,
        accel_samples=accel,
        step_count=steps,
        pressure_hpa=pressure,
        gps_fixes=tuple(fixes),
        wifi_ssids=tuple(ssids),
    )


def parse_trace(stream: IO[bytes] | IO[str] | bytes | str) -> list[SensorBurst]:
    """Parse newline-delimited burst records.

    Blank lines are skipped. Unknown fields (e.g. gyroscope samples) are ignored.
    Raises ``MalformedRecord`` or ``NonMonotonicTime`` with the offending line number.
    """
    if isinstance(stream, (bytes, str)):
        stream = io.BytesIO(stream.encode() if isinstance(stream, str) else stream)
    bursts: list[SensorBurst] = []
    for line_no, line in enumerate(stream, start=1):
        if isinstance(line, bytes):
            try:
                line = line.decode("utf-8")
            except UnicodeDecodeError:
                raise MalformedRecord(line_no, "not valid UTF-8") from None
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedRecord(line_no, f"invalid JSON ({exc.msg})") from None
        burst = _parse_record(obj, line_no)
        if bursts and burst.start_time < bursts[-1].start_time:
            raise NonMonotonicTime(line_no, burst.start_time, bursts[-1].start_time)
        bursts.append(burst)
    return bursts


def load_trace(path: str | Path) -> list[SensorBurst]:
    with open(path, "rb") as fh:
        return parse_trace(fh)


def dump_trace(bursts: Iterable[SensorBurst]) -> bytes:
    lines = [json.dumps(b.to_record(), separators=(",", ":")) for b in bursts]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


# ---------------------------------------------------------------------------
# duty cycle
# ---------------------------------------------------------------------------


def _truncate(burst: SensorBurst, end: float) -> SensorBurst:
    accel = burst.accel_samples
    if accel is not None:
        accel = tuple(s for s in accel if s[0] <= end)
    pressure = burst.pressure_hpa
    if pressure is not None:
        pressure = tuple(p for p in pressure if p[0] <= end)
    fixes = tuple(f for f in burst.gps_fixes if f.t <= end)
    return replace(burst, accel_samples=accel, pressure_hpa=pressure, gps_fixes=fixes)


def segment_duty_cycle(
    bursts: Sequence[SensorBurst],
    config: DutyCycleConfig = DutyCycleConfig(),
    issues: list[str] | None = None,
) -> list[SensorBurst]:
    """Validate bursts against the duty cycle.

    Bursts longer than ``t + 2`` seconds keep only their leading ``t`` seconds.
    Bursts starting less than ``T/2`` after their predecessor are kept but
    logged. Warning texts are also appended to ``issues`` when given.
    """
    def warn(msg: str) -> None:
        log.warning(msg)
        if issues is not None:
            issues.append(msg)

    out: list[SensorBurst] = []
    t = config.collect_duration_t
    for i, burst in enumerate(bursts):
        if burst.span() > t + 2.0:
            warn(f"burst at {burst.start_time:.0f} spans {burst.span():.1f} s; truncated to {t:.0f} s")
            burst = _truncate(burst, burst.start_time + t)
        if i > 0:
            gap = burst.start_time - bursts[i - 1].start_time
            if gap < 0.5 * config.period_T:
                warn(
                    f"burst at {burst.start_time:.0f} follows the previous one after {gap:.1f} s "
                    f"(< T/2 = {0.5 * config.period_T:.0f} s)"
                )
        out.append(burst)
    return out


# ---------------------------------------------------------------------------
# accelerometer
# ---------------------------------------------------------------------------


def _accel_arrays(samples: Sequence[AccelSample]) -> tuple[np.ndarray, np.ndarray]:
    arr = np.asarray(samples, dtype=float)
    return arr[:, 0], arr[:, 1:4]


def count_steps(accel_samples: Sequence[AccelSample] | None) -> int:
    """Count steps in one burst of raw accelerometer samples.

    The acceleration magnitude is resampled onto a uniform grid, band-passed
    (0.5-3 Hz, zero-phase Butterworth) and every upward crossing of 1.0 m/s^2
    at least 0.3 s after the previous one counts as a step.
    """
    if not accel_samples or len(accel_samples) < 2:
        raise InsufficientSamples("step counting needs at least 2 accelerometer samples")
    t, xyz = _accel_arrays(accel_samples)
    duration = t[-1] - t[0]
    if duration < 1.0:
        raise InsufficientSamples(f"step counting needs >= 1 s of samples, got {duration:.2f} s")
    fs = (len(t) - 1) / duration
    nyquist = fs / 2.0
    low, high = STEP_BAND_HZ
    high = min(high, 0.9 * nyquist)
    if high <= low:
        raise InsufficientSamples(f"sampling rate {fs:.2f} Hz too low to resolve steps")

    grid = t[0] + np.arange(len(t)) / fs
    mag = np.interp(grid, t, np.linalg.norm(xyz, axis=1))
    mag = mag - mag.mean()
    sos = signal.butter(2, [low, high], btype="bandpass", fs=fs, output="sos")
    padlen = min(len(mag) - 1, 3 * (2 * len(sos) + 1))
    filtered = signal.sosfiltfilt(sos, mag, padlen=padlen)

    steps = 0
    last = -math.inf
    for i in range(1, len(filtered)):
        if filtered[i - 1] < STEP_THRESHOLD <= filtered[i] and grid[i] - last >= STEP_REFRACTORY_S:
            steps += 1
            last = grid[i]
    return steps


def linear_accel_mean(accel_samples: Sequence[AccelSample] | None) -> float:
    """Mean magnitude of acceleration with gravity removed.

    Gravity is tracked by a first-order low-pass (time constant 0.5 s) seeded
    with the mean of the samples inside the first time constant.
    """
    if not accel_samples or len(accel_samples) < 2:
        raise InsufficientSamples("linear acceleration needs at least 2 samples")
    t, xyz = _accel_arrays(accel_samples)
    seed = xyz[t <= t[0] + GRAVITY_TIME_CONSTANT_S].mean(axis=0)
    dt = np.diff(t)
    alpha = dt / (GRAVITY_TIME_CONSTANT_S + dt)
    gravity = np.empty_like(xyz)
    gravity[0] = seed
    if np.allclose(alpha, alpha[0]):
        # uniform sampling: the recursion g[k] = g[k-1] + a (x[k] - g[k-1]) as a linear filter
        a0 = alpha[0]
        zi = (1.0 - a0) * seed
        gravity[1:] = signal.lfilter([a0], [1.0, a0 - 1.0], xyz[1:], axis=0, zi=zi[None, :])[0]
    else:
        g = seed.copy()
        for k in range(1, len(t)):
            g = g + alpha[k - 1] * (xyz[k] - g)
            gravity[k] = g
    return float(np.linalg.norm(xyz - gravity, axis=1).mean())


# ---------------------------------------------------------------------------
# barometer
# ---------------------------------------------------------------------------


def altitude_from_pressure(p: float) -> float:
    """International barometric formula, metres above the 1013.25 hPa level."""
    if not 300.0 < p < 1100.0:
        raise PressureOutOfRange(f"pressure {p} hPa outside (300, 1100)")
    return 44330.0 * (1.0 - (p / STANDARD_PRESSURE_HPA) ** 0.1903)


def altitude_change(burst: SensorBurst) -> float:
    """Altitude at the last pressure sample minus altitude at the first."""
    p = burst.pressure_hpa
    if not p or len(p) < 2:
        raise MissingBarometer(f"burst at {burst.start_time} has fewer than 2 pressure samples")
    return altitude_from_pressure(p[-1][1]) - altitude_from_pressure(p[0][1])


# ---------------------------------------------------------------------------
# GPS / WiFi
# ---------------------------------------------------------------------------


def filter_gps(fixes: Sequence[GpsFix]) -> tuple[float | None, tuple[float, float] | None]:
    """Return (median speed of fixes with >= 5 satellites, last fix with accuracy <= 50 m)."""
    speeds = [f.speed_mps for f in fixes if f.satellites >= MIN_SATELLITES]
    speed = float(np.median(speeds)) if speeds else None
    location = None
    for f in fixes:
        if f.h_accuracy_m <= MAX_H_ACCURACY_M:
            location = (f.lat, f.lon)
    return speed, location


def dedup_ssids(ssids: Iterable[str]) -> list[str]:
    seen: set[str] = set()
    out = []
    for s in ssids:
        if s and s not in seen:
            seen.add(s)
            out.append(s)
    return out


# ---------------------------------------------------------------------------
# features
# ---------------------------------------------------------------------------


def extract_features(
    burst: SensorBurst, config: DutyCycleConfig = DutyCycleConfig()
) -> WindowFeatures:
    if burst.step_count is not None:
        steps = burst.step_count
    elif burst.accel_samples:
        steps = count_steps(burst.accel_samples)
    else:
        raise MissingMotionSource(
            f"burst at {burst.start_time} has neither accelerometer samples nor a step count"
        )
    s = steps * 60.0 / config.collect_duration_t

    a = 0.0
    if burst.accel_samples and len(burst.accel_samples) >= 2:
        a = linear_accel_mean(burst.accel_samples)

    try:
        delta_h = altitude_change(burst)
        altitude_valid = True
    except (MissingBarometer, PressureOutOfRange):
        delta_h = 0.0
        altitude_valid = False

    speed, location = filter_gps(burst.gps_fixes)
    return WindowFeatures(
        time=burst.start_time,
        s=s,
        a=a,
        delta_h=delta_h,
        v=speed if speed is not None else 0.0,
        flags=FeatureFlags(
            speed_valid=speed is not None,
            location_valid=location is not None,
            altitude_valid=altitude_valid,
        ),
        location=location,
        ssids=tuple(dedup_ssids(burst.wifi_ssids)),
    )


def format_clock(epoch_s: float, tz_offset_minutes: int = 0, seconds: bool = False) -> str:
    """Render a UTC epoch timestamp as local ``HH:MM`` (or ``HH:MM:SS``)."""
    tz = timezone(timedelta(minutes=tz_offset_minutes))
    dt = datetime.fromtimestamp(epoch_s, tz)
    return dt.strftime("%H:%M:%S" if seconds else "%H:%M")
