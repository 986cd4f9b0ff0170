from __future__ import annotations

import itertools
import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifejournal.motion import DEFAULT_THRESHOLDS, LABEL_ORDER, MotionLabel, MotionThresholds, classify, detect_motion
from lifejournal.trace import FeatureFlags, WindowFeatures

L = MotionLabel

# Oracle: the rule set re-transcribed as (label, predicate) rows with literal
# thresholds. The elif between the first two rows is encoded explicitly.
TRUTH_TABLE = (
    (L.STATIONARY, lambda s, a, dh, v: s <= 2 and a <= 0.1 and -0.1 <= dh <= 0.1 and v <= 0.1),
    (L.LIMITED_MOTION, lambda s, a, dh, v: not (s <= 2 and a <= 0.1 and -0.1 <= dh <= 0.1 and v <= 0.1)
        and s <= 10 and -1.0 <= dh <= 1.0 and v < 0.5),
    (L.JOGGING_RUNNING, lambda s, a, dh, v: s >= 140 and 2.0 <= v <= 5.0),
    (L.WALKING, lambda s, a, dh, v: s >= 50 and v < 1.8),
    (L.CYCLING, lambda s, a, dh, v: s >= 50 and v >= 4.0),
    (L.VEHICLE_SUBWAY_FERRY_TRAIN, lambda s, a, dh, v: (s <= 5 and v > 2) or v > 5),
    (L.ESCALATOR_ELEVATOR, lambda s, a, dh, v: s <= 10 and dh > 2.5 and v < 2),
)

GRID_S = (0, 2, 3, 5, 6, 10, 11, 49, 50, 139, 140, 141)
GRID_A = (0, 0.1, 0.11)
GRID_DH = (-1.1, -1, -0.1, 0, 0.1, 1, 2.5, 2.6)
GRID_V = (0, 0.1, 0.11, 0.49, 0.5, 1.79, 1.8, 2, 2.01, 4, 4.01, 5, 5.01)


def oracle(s, a, dh, v):
    return [label for label, rule in TRUTH_TABLE if rule(s, a, dh, v)]


def features(s, a, dh, v, speed_valid=True, altitude_valid=True):
    return WindowFeatures(
        time=0.0, s=s, a=a, delta_h=dh, v=v if speed_valid else 0.0,
        flags=FeatureFlags(speed_valid=speed_valid, location_valid=False, altitude_valid=altitude_valid),
    )


@pytest.mark.parametrize(
    "s, a, dh, v, expected",
    [
        (0, 0, 0, 0, [L.STATIONARY]),
        (150, 1.5, 0, 4.5, [L.JOGGING_RUNNING, L.CYCLING]),
        (0, 0.05, 0, 10, [L.VEHICLE_SUBWAY_FERRY_TRAIN]),
        (3, 0.3, 3.0, 0.5, [L.ESCALATOR_ELEVATOR]),
        (60, 0.8, 0, 1.0, [L.WALKING]),
    ],
)
def test_reference_cases(s, a, dh, v, expected):
    ctx = detect_motion(features(s, a, dh, v))
    assert list(ctx.labels) == expected
    assert ctx.ambiguous == (len(expected) != 1)


def test_boundary_grid_matches_truth_table():
    for s, a, dh, v in itertools.product(GRID_S, GRID_A, GRID_DH, GRID_V):
        assert list(detect_motion(features(s, a, dh, v)).labels) == oracle(s, a, dh, v), (s, a, dh, v)


def test_label_texts():
    assert [l.text for l in LABEL_ORDER] == [
        "stationary", "limited motion", "jogging/running", "walking",
        "cycling", "vehicle/subway/ferry/train", "escalator/elevator",
    ]
    assert MotionLabel.parse(" Walking ") is L.WALKING
    assert MotionLabel.parse("vehicle_subway_ferry_train") is L.VEHICLE_SUBWAY_FERRY_TRAIN
    with pytest.raises(ValueError):
        MotionLabel.parse("swimming")


class TestMissingSensors:
    def test_no_speed_is_union_and_ambiguous(self):
        ctx = detect_motion(features(0, 0.05, 0, 0, speed_valid=False))
        assert set(ctx.labels) >= {L.STATIONARY, L.VEHICLE_SUBWAY_FERRY_TRAIN}
        assert ctx.ambiguous

    def test_no_speed_includes_both_sentinels(self):
        for s, a, dh in itertools.product(GRID_S, GRID_A, GRID_DH):
            labels = set(detect_motion(features(s, a, dh, 0, speed_valid=False)).labels)
            assert set(oracle(s, a, dh, 0.0)) <= labels
            assert set(oracle(s, a, dh, math.inf)) <= labels

    def test_no_speed_walking_candidates(self):
        labels = detect_motion(features(100, 1.2, 0, 0, speed_valid=False)).labels
        assert labels == (L.WALKING, L.CYCLING, L.VEHICLE_SUBWAY_FERRY_TRAIN)

    def test_no_barometer_suppresses_lift(self):
        ctx = detect_motion(features(3, 0.3, 3.0, 0.4, altitude_valid=False))
        assert L.ESCALATOR_ELEVATOR not in ctx.labels
        assert ctx.labels == (L.LIMITED_MOTION,)


def test_thresholds_from_yaml(tmp_path):
    path = tmp_path / "th.yaml"
    path.write_text("walking_s: 40\n")
    th = MotionThresholds.from_yaml(path)
    assert th.walking_s == 40.0
    assert classify(45, 1.0, 0, 1.0, th) == [L.WALKING]
    path.write_text("walking_steps: 40\n")
    with pytest.raises(ValueError):
        MotionThresholds.from_yaml(path)


feature_values = st.tuples(
    st.floats(0, 250), st.floats(0, 5), st.floats(-10, 10), st.floats(0, 40),
    st.booleans(), st.booleans(),
)


@given(feature_values)
def test_label_set_invariants(values):
    s, a, dh, v, speed_ok, alt_ok = values
    labels = detect_motion(features(s, a, dh, v, speed_ok, alt_ok)).labels
    assert len(set(labels)) == len(labels)
    assert set(labels) <= set(MotionLabel)
    assert list(labels) == sorted(labels, key=LABEL_ORDER.index)
    assert not {L.STATIONARY, L.LIMITED_MOTION} <= set(labels)
    if speed_ok:
        for pair in ((L.STATIONARY, L.VEHICLE_SUBWAY_FERRY_TRAIN), (L.WALKING, L.JOGGING_RUNNING), (L.WALKING, L.CYCLING)):
            assert not set(pair) <= set(labels)


@given(feature_values)
def test_pure_function(values):
    f = features(*values[:4], *values[4:])
    assert detect_motion(f) == detect_motion(f)


@given(st.floats(0, 250), st.floats(0, 5), st.floats(-10, 10), st.floats(0, 40))
def test_classify_matches_oracle_everywhere(s, a, dh, v):
    assert classify(s, a, dh, v, DEFAULT_THRESHOLDS) == oracle(s, a, dh, v)
