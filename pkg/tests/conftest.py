from __future__ import annotations

import math
from fractions import Fraction
from pathlib import Path

import pytest

from lifejournal.config import RunConfig
from lifejournal.eval.benchmark import run_benchmark
from lifejournal.eval.simulate import SCENARIOS, SyntheticTrace, generate_synthetic_trace
from lifejournal.llm.gateway import Gateway, RoleBinding
from lifejournal.llm.providers import Provider
from lifejournal.llm.scripted import scripted_provider
from lifejournal.trace import GpsFix, SensorBurst

ROOT = Path(__file__).resolve().parents[1]
SAMPLE_DIR = ROOT / "sample"
PRICE = (Fraction(15, 100), Fraction(60, 100))
ROLES = ("vlm", "light", "mid")


def role_config(kind: str, **extra: str) -> str:
    """Config text binding every role to ``kind`` with the 0.15/0.60 unit prices."""
    lines = []
    for role in ROLES:
        lines += [f"role.{role}.kind = {kind}", f"role.{role}.model = test-{role}",
                  f"role.{role}.price_in = 0.15", f"role.{role}.price_out = 0.60"]
        lines += [f"role.{role}.{k} = {v}" for k, v in extra.items()]
    return "\n".join(lines) + "\n"


REPLAY_CONFIG = role_config("replay")


def write_dataset(root: Path, scenarios: dict[str, tuple[str, int]]) -> Path:
    """Simulated experiments with replay fixtures recorded from the scripted mock, for both modes."""
    for exp, (name, seed) in scenarios.items():
        generate_synthetic_trace(SCENARIOS[name], seed).write(root / exp)
    recorder = RunConfig.parse(role_config("mock", record="{experiment}/fixtures/llm"))
    report = run_benchmark(root, recorder, ("pipeline", "senllm"))
    assert all(r.status == "ok" for r in report.rows)
    return root


def make_gateway(provider: Provider | None = None, roles=("vlm", "light", "mid"), **kwargs) -> Gateway:
    """Gateway binding every role to one provider, priced at 0.15/0.60 $ per 1e6 tokens."""
    provider = provider if provider is not None else scripted_provider()
    bindings = {r: RoleBinding(provider, f"test-{r}", *PRICE) for r in roles}
    kwargs.setdefault("sleep", lambda s: None)
    return Gateway(bindings, **kwargs)


def gravity_accel(t0: float, seconds: float = 15.0, fs: float = 20.0, extra=None) -> tuple:
    """Accelerometer rows at rest, optionally adding ``extra(t) -> (x, y, z)``."""
    rows = []
    for k in range(int(seconds * fs)):
        t = t0 + k / fs
        dx, dy, dz = extra(t - t0) if extra else (0.0, 0.0, 0.0)
        rows.append((t, dx, dy, 9.81 + dz))
    return tuple(rows)


def fix(t: float, lat: float = 22.3, lon: float = 114.17, speed: float = 1.2, acc: float = 10.0, sats: int = 8) -> GpsFix:
    return GpsFix(t=t, lat=lat, lon=lon, speed_mps=speed, h_accuracy_m=acc, satellites=sats)


def burst(t0: float, steps: int | None = 0, ssids=(), fixes=(), pressure=None, accel=None) -> SensorBurst:
    return SensorBurst(
        start_time=t0,
        accel_samples=accel,
        step_count=steps,
        pressure_hpa=pressure,
        gps_fixes=tuple(fixes),
        wifi_ssids=tuple(ssids),
    )


@pytest.fixture
def gateway() -> Gateway:
    return make_gateway()


@pytest.fixture(scope="session")
def synthetic_traces() -> dict[str, SyntheticTrace]:
    """Every named scenario at seed 0, generated once per session."""
    return {name: generate_synthetic_trace(sc, seed=0) for name, sc in SCENARIOS.items()}


@pytest.fixture(scope="session")
def recorded_dataset(tmp_path_factory) -> Path:
    """Two experiments with full fixture sets (read-only: copy before mutating)."""
    return write_dataset(tmp_path_factory.mktemp("dataset"), {"exp_a": ("cafe_break", 1), "exp_b": ("hike", 2)})


@pytest.fixture(scope="session")
def sample_dir() -> Path:
    assert (SAMPLE_DIR / "trace.jsonl").exists(), "bundled sample experiment missing"
    return SAMPLE_DIR


def close(a: float, b: float, tol: float) -> bool:
    return math.isclose(a, b, rel_tol=0, abs_tol=tol)


@pytest.fixture(scope="session")
def scenario_dataset(tmp_path_factory, synthetic_traces) -> Path:
    """All named scenarios (seed 0) as experiment directories with map fixtures only."""
    root = tmp_path_factory.mktemp("scenarios")
    for name, trace in synthetic_traces.items():
        trace.write(root / name)
    return root


# -- acceptance summary ------------------------------------------------------

_CRITERIA: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    number = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
    detail = dict(report.user_properties).get("detail", "")
    _CRITERIA[number] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        outcome, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {outcome}  {detail}")
