"""Rule-based multi-label motion detection.

Thresholds come from gait and activity-analysis rules of thumb; they are fixed
defaults here and can only be overridden through an expert YAML file
(``MotionThresholds.from_yaml``).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, fields
from pathlib import Path

import yaml

from lifejournal.trace import WindowFeatures


class MotionLabel(enum.Enum):
    STATIONARY = "stationary"
    LIMITED_MOTION = "limited motion"
    JOGGING_RUNNING = "jogging/running"
    WALKING = "walking"
    CYCLING = "cycling"
    VEHICLE_SUBWAY_FERRY_TRAIN = "vehicle/subway/ferry/train"
    ESCALATOR_ELEVATOR = "escalator/elevator"

    @property
    def text(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> MotionLabel:
        """Accept either the display text or the identifier, case-insensitively."""
        key = text.strip().strip("'\"").lower()
        for label in cls:
            if key in (label.value, label.name.lower()):
                return label
        raise ValueError(f"unknown motion label: {text!r}")


# rule order; labels are emitted in this order
LABEL_ORDER = tuple(MotionLabel)


@dataclass(frozen=True)
class MotionThresholds:
    stationary_s: float = 2.0
    stationary_a: float = 0.1
    stationary_dh: float = 0.1
    stationary_v: float = 0.1
    limited_s: float = 10.0
    limited_dh: float = 1.0
    limited_v: float = 0.5
    jogging_s: float = 140.0
    jogging_v_min: float = 2.0
    jogging_v_max: float = 5.0
    walking_s: float = 50.0
    walking_v: float = 1.8
    cycling_s: float = 50.0
    cycling_v: float = 4.0
    vehicle_s: float = 5.0
    vehicle_v_low_steps: float = 2.0
    vehicle_v: float = 5.0
    lift_s: float = 10.0
    lift_dh: float = 2.5
    lift_v: float = 2.0

    @classmethod
    def from_yaml(cls, path: str | Path) -> MotionThresholds:
        data = yaml.safe_load(Path(path).read_text()) or {}
        if not isinstance(data, dict):
            raise ValueError("thresholds file must be a mapping of name: value")
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown threshold keys: {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})

    def probe_speeds(self) -> tuple[float, ...]:
        """One speed from every interval the speed rules distinguish, plus 0 and +inf.

        The interval strictly between the stationary and limited-motion speed
        limits is skipped: it only separates those two labels, which must not
        be reported together.
        """
        return (
            0.0,
            (self.limited_v + self.walking_v) / 2,
            (self.jogging_v_min + self.cycling_v) / 2,
            (self.cycling_v + self.jogging_v_max) / 2,
            math.inf,
        )


DEFAULT_THRESHOLDS = MotionThresholds()


@dataclass(frozen=True)
class MotionContext:
    time: float
    labels: tuple[MotionLabel, ...]
    ambiguous: bool

    def text(self) -> str:
        if not self.labels:
            return "unknown"
        return " or ".join(label.text for label in self.labels)


def classify(
    s: float,
    a: float,
    delta_h: float,
    v: float,
    th: MotionThresholds = DEFAULT_THRESHOLDS,
    allow_lift: bool = True,
) -> list[MotionLabel]:
    """Apply the rules to one fully known feature vector."""
    labels: list[MotionLabel] = []
    if s <= th.stationary_s and a <= th.stationary_a and abs(delta_h) <= th.stationary_dh and v <= th.stationary_v:
        labels.append(MotionLabel.STATIONARY)
    elif s <= th.limited_s and abs(delta_h) <= th.limited_dh and v < th.limited_v:
        labels.append(MotionLabel.LIMITED_MOTION)
    if s >= th.jogging_s and th.jogging_v_min <= v <= th.jogging_v_max:
        labels.append(MotionLabel.JOGGING_RUNNING)
    if s >= th.walking_s and v < th.walking_v:
        labels.append(MotionLabel.WALKING)
    if s >= th.cycling_s and v >= th.cycling_v:
        labels.append(MotionLabel.CYCLING)
    if (s <= th.vehicle_s and v > th.vehicle_v_low_steps) or v > th.vehicle_v:
        labels.append(MotionLabel.VEHICLE_SUBWAY_FERRY_TRAIN)
    if allow_lift and s <= th.lift_s and delta_h > th.lift_dh and v < th.lift_v:
        labels.append(MotionLabel.ESCALATOR_ELEVATOR)
    return labels


def detect_motion(features: WindowFeatures, th: MotionThresholds = DEFAULT_THRESHOLDS) -> MotionContext:
    """Motion candidates for one window.

    Without a valid speed the rules are evaluated at one probe speed per
    speed interval and the union is returned (always marked ambiguous).
    Without a barometer the altitude change is taken as 0 and the
    escalator/elevator rule is disabled.
    """
    dh = features.delta_h if features.flags.altitude_valid else 0.0
    allow_lift = features.flags.altitude_valid
    if features.flags.speed_valid:
        labels = classify(features.s, features.a, dh, features.v, th, allow_lift)
        return MotionContext(features.time, tuple(labels), len(labels) != 1)

    found: set[MotionLabel] = set()
    for v in th.probe_speeds():
        found.update(classify(features.s, features.a, dh, v, th, allow_lift))
    labels = tuple(label for label in LABEL_ORDER if label in found)
    return MotionContext(features.time, labels, True)
