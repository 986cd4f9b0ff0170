from __future__ import annotations

import pytest
from scipy import stats

from conftest import burst, fix, make_gateway
from lifejournal.context import ContextLogEntry
from lifejournal.errors import EmptyHorizon
from lifejournal.geo import ContextCache, FixtureMapProvider
from lifejournal.journal import (
    assemble_context_log,
    clean_journal,
    generate_journal,
    horizons,
    journal_for_horizon,
    senllm_baseline,
    serialize_window,
)
from lifejournal.llm.providers import REFUSAL, HallucinatingProvider, MockProvider
from lifejournal.llm.scripted import SUBJECTIVE_TAIL, scripted_provider
from lifejournal.pipeline import PipelineSettings, run_pipeline
from lifejournal.trace import extract_features

T0 = 1_699_948_800
FIXED = "From 08:00 to 08:10, the user is walking at a beach."


def reply(summary: str) -> str:
    return f"reasoning: scripted\nsummary: {summary}"


def entries(n, motion="walking", place="beach"):
    return [ContextLogEntry(T0 + 60 * i, f"{8 + i // 60:02d}:{i % 60:02d}", motion, place) for i in range(n)]


class TestContextLog:
    def test_one_entry(self):
        e = ContextLogEntry(T0 + 3600, "09:00", "walking", "beach")
        assert assemble_context_log([e]) == "[09:00](walking, beach)"

    def test_sixty_entries_in_order(self):
        text = assemble_context_log(entries(60))
        assert text.count("](") == 60
        assert text.startswith("[08:00](") and text.endswith("[08:59](walking, beach)")

    def test_empty(self):
        with pytest.raises(EmptyHorizon):
            assemble_context_log([])

    def test_horizon_filter(self):
        text = assemble_context_log(entries(90), (T0 + 3600, T0 + 7200))
        assert text.startswith("[09:00]") and text.count("](") == 30


class TestGeneration:
    def test_fixed_echo(self):
        gw = make_gateway(MockProvider(responder=lambda r: reply(FIXED)))
        assert generate_journal("[08:00](walking, beach)", gw).summary == FIXED

    def test_examples_from_catalog(self, gateway):
        ex = generate_journal("[08:00](walking, beach)", gateway)
        for example in gateway.catalog.journal_examples:
            assert example in ex.prompt

    def test_hallucinated_draft_skips_cleaning(self):
        gw = make_gateway(MockProvider(responder=lambda r: REFUSAL))
        journal = journal_for_horizon(entries(5), (T0, T0 + 3600), gw)
        assert journal.hallucinated and journal.final_text is None
        assert gw.calls("journal_cleaning") == 0


class TestCleaning:
    def test_strips_subjective_tail(self, gateway):
        final, fallback, _ = clean_journal(f"{FIXED} {SUBJECTIVE_TAIL}", gateway)
        assert final == FIXED and not fallback

    def test_hallucinated_cleaning_keeps_draft(self):
        gw = make_gateway(MockProvider(responder=lambda r: REFUSAL))
        final, fallback, exchange = clean_journal(FIXED, gw)
        assert final == FIXED and fallback and exchange.hallucinated

    def test_fixed_point(self, gateway):
        assert clean_journal(FIXED, gateway)[0] == FIXED

    def test_pipeline_journal_is_objective(self, gateway):
        journal = journal_for_horizon(entries(20), (T0, T0 + 3600), gateway)
        assert SUBJECTIVE_TAIL in journal.draft_text
        assert SUBJECTIVE_TAIL not in journal.final_text
        assert journal.final_text.startswith("From 08:00 to 08:19, the user is walking at beach")


@pytest.mark.parametrize(
    "start, end, length, expected",
    [(0, 0, 3600, 1), (0, 3599, 3600, 1), (0, 3600, 3600, 2), (0, 9000, 3600, 3)],
)
def test_horizons(start, end, length, expected):
    spans = horizons(start, end, length)
    assert len(spans) == expected
    assert spans[0][0] == start and all(b - a == length for a, b in spans)


def test_one_generate_and_clean_per_horizon(synthetic_traces, tmp_path):
    trace = synthetic_traces["campus_day"]  # 80 windows -> 2 horizons
    trace.write(tmp_path)
    gw = make_gateway()
    result = run_pipeline(trace.bursts, gw, FixtureMapProvider(tmp_path / "fixtures" / "maps"), ContextCache(), PipelineSettings())
    assert len(result.journals) == 2
    assert gw.calls("journal_generation") == 2 and gw.calls("journal_cleaning") == 2
    tags = sorted(e.tag for e in gw.exchanges if e.template_id.startswith("journal_"))
    assert tags == ["4:0000:journal:0", "4:0000:journal:1", "4:0001:journal:0", "4:0001:journal:1"]


def test_hallucination_rate_over_horizons():
    """Seeded 5% hallucinating mock over 100 journaling runs."""
    provider = HallucinatingProvider(scripted_provider(), 0.05, seed=11, template_ids={"journal_generation"})
    gw = make_gateway(provider)
    flags = [
        journal_for_horizon(entries(3, place=f"place {i}"), (T0, T0 + 3600), gw, tag=f"{i:03d}").hallucinated
        for i in range(100)
    ]
    lo, hi = stats.binom.interval(0.95, 100, 0.05)
    assert lo <= sum(flags) <= hi


class TestBaseline:
    def test_empty_trace(self, gateway):
        with pytest.raises(EmptyHorizon):
            senllm_baseline([], gateway)

    def test_serialization(self):
        f = extract_features(burst(T0, steps=25, ssids=["eduroam"], fixes=[fix(T0 + 1, speed=1.25)]))
        assert serialize_window(f) == "t=08:00 steps=100 acc=0.00 dh=0.0 v=1.2 ssids=[eduroam] gps=(22.30000,114.17000)"
        f = extract_features(burst(T0, steps=0))
        assert serialize_window(f).endswith("v=na ssids=[] gps=na")

    def test_deterministic_single_call(self, synthetic_traces):
        trace = synthetic_traces["hike"]
        texts = []
        for _ in range(2):
            gw = make_gateway()
            journal = senllm_baseline(trace.bursts, gw)
            assert [e.template_id for e in gw.exchanges] == ["senllm_journal"]
            texts.append(journal.final_text)
        assert texts[0] == texts[1] and texts[0]
