from __future__ import annotations

import random
import shutil
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import REPLAY_CONFIG
from lifejournal.config import RunConfig
from lifejournal.errors import EmptyText, InvalidScenario
from lifejournal.eval.benchmark import EvalReport, EvalRow, hallucination_rate, ingest_scores, run_benchmark
from lifejournal.eval.chrf import best_chrf, chrf
from lifejournal.eval.simulate import SCENARIOS, generate_synthetic_trace, range_margin_violations, scenario
from lifejournal.motion import MotionLabel, detect_motion
from lifejournal.trace import extract_features

WORDS = "the user walks runs sits near a park cafe office road beach from to at and hiking went goes".split()


def naive_chrf(hyp: str, ref: str, max_n: int = 6, beta: float = 2.0) -> float:
    """Oracle: list-based n-gram matching, no Counter arithmetic."""
    hyp = hyp.replace(" ", "")
    ref = ref.replace(" ", "")
    precisions, recalls = [], []
    for n in range(1, max_n + 1):
        hg = [hyp[i:i + n] for i in range(len(hyp) - n + 1)]
        rg = [ref[i:i + n] for i in range(len(ref) - n + 1)]
        if not hg or not rg:
            continue
        pool = list(rg)
        matched = 0
        for g in hg:
            if g in pool:
                pool.remove(g)
                matched += 1
        precisions.append(matched / len(hg))
        recalls.append(matched / len(rg))
    p = sum(precisions) / len(precisions)
    r = sum(recalls) / len(recalls)
    if p + r == 0:
        return 0.0
    return (1 + beta**2) * p * r / (beta**2 * p + r)


class TestChrf:
    def test_identical(self):
        assert chrf("the user goes hiking", "the user goes hiking") == 1.0

    def test_disjoint(self):
        assert chrf("abc", "xyz") == 0.0

    def test_reference_example(self):
        cand, ref = "the user goes hiking", "the user went hiking near the beach"
        assert chrf(cand, ref) == pytest.approx(naive_chrf(cand, ref), abs=1e-6)
        assert 0.0 < chrf(cand, ref) < 1.0

    def test_whitespace_ignored(self):
        assert chrf("a b  c", "abc") == 1.0

    def test_empty(self):
        with pytest.raises(EmptyText):
            chrf("   ", "x")
        with pytest.raises(EmptyText):
            best_chrf("x", [])

    def test_recall_weighted(self):
        ref = "the user walks to the park"
        short, long = "the user", "the user walks to the park and back home again"
        # beta = 2 favours the candidate that covers the reference
        assert chrf(long, ref) > chrf(short, ref)

    def test_best_of_references(self):
        assert best_chrf("user at park", ["user at park", "nothing alike"]) == 1.0

    def test_random_pairs_against_oracle(self):
        rng = random.Random(4)
        for _ in range(20):
            a = " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))
            b = " ".join(rng.choices(WORDS, k=rng.randint(1, 12)))
            assert chrf(a, b) == pytest.approx(naive_chrf(a, b), abs=1e-6)

    @given(st.text(min_size=1).filter(lambda s: s.strip()))
    def test_self_similarity(self, x):
        assert chrf(x, x) == pytest.approx(1.0)

    @given(st.text(min_size=1).filter(lambda s: s.strip()), st.text(min_size=1).filter(lambda s: s.strip()))
    def test_bounded(self, a, b):
        assert 0.0 <= chrf(a, b) <= 1.0


class TestHallucinationRate:
    def test_none(self):
        assert hallucination_rate([False] * 10) == 0.0

    def test_one_in_ten(self):
        assert hallucination_rate([True] + [False] * 9) == 0.1

    def test_no_attempts(self):
        with pytest.raises(ValueError):
            hallucination_rate([])

    def test_from_run_report(self):
        assert hallucination_rate({"journals": [{"hallucinated": True}, {"hallucinated": False}]}) == 0.5


class TestSimulator:
    def test_margins(self):
        assert range_margin_violations() == []

    def test_stationary_scenario(self, synthetic_traces):
        trace = synthetic_traces["stationary_10min"]
        assert len(trace.bursts) == 10
        labels = {detect_motion(extract_features(b)).labels for b in trace.bursts}
        assert labels == {(MotionLabel.STATIONARY,)}

    def test_hike_schedule(self, synthetic_traces):
        trace = synthetic_traces["hike"]
        got = [detect_motion(extract_features(b)).labels for b in trace.bursts]
        expected = [(MotionLabel.WALKING,)] * 30 + [(MotionLabel.STATIONARY,)] * 10 + [(MotionLabel.WALKING,)] * 20
        assert got == expected
        assert trace.labels == [lab for (lab,) in expected]

    @pytest.mark.parametrize("name", ["hike", "subway_trip"])
    def test_same_seed_same_bytes(self, name):
        a = generate_synthetic_trace(SCENARIOS[name], seed=5)
        b = generate_synthetic_trace(SCENARIOS[name], seed=5)
        assert a.trace_bytes() == b.trace_bytes()
        assert a.map_fixtures == b.map_fixtures
        assert generate_synthetic_trace(SCENARIOS[name], seed=6).trace_bytes() != a.trace_bytes()

    def test_unknown_scenario(self):
        with pytest.raises(InvalidScenario):
            scenario("moon_walk")

    def test_written_layout(self, tmp_path, synthetic_traces):
        out = synthetic_traces["cafe_break"].write(tmp_path / "exp")
        assert (out / "trace.jsonl").read_bytes() == synthetic_traces["cafe_break"].trace_bytes()
        assert (out / "ref1.txt").read_text().strip() and (out / "ref2.txt").read_text().strip()
        assert sorted(p.stem for p in (out / "fixtures" / "maps").iterdir()) == sorted(synthetic_traces["cafe_break"].map_fixtures)
        assert (out / "labels.tsv").read_text().count("\n") == 61


@pytest.fixture
def dataset(recorded_dataset, tmp_path):
    return shutil.copytree(recorded_dataset, tmp_path / "dataset")


class TestBenchmark:
    def test_two_experiments(self, dataset):
        report = run_benchmark(dataset, RunConfig.parse(REPLAY_CONFIG))
        assert [(r.experiment, r.status) for r in sorted(report.rows, key=lambda r: r.experiment)] == [("exp_a", "ok"), ("exp_b", "ok")]
        summary = report.summary("pipeline")
        assert summary.experiments == 2 and summary.failed == 0
        assert summary.mean_chrf == float((Fraction(report.rows[0].chrf) + Fraction(report.rows[1].chrf)) / 2)
        assert "mean chrF" in report.render()

    def test_pipeline_vs_baseline_columns(self, dataset, tmp_path):
        report = run_benchmark(dataset, RunConfig.parse(REPLAY_CONFIG), ("pipeline", "senllm"))
        assert report.modes() == ["pipeline", "senllm"]
        header = report.render().splitlines()[0]
        assert "pipeline chrF" in header and "senllm chrF" in header
        report.write(tmp_path / "out")
        pairs = (tmp_path / "out" / "pairs.tsv").read_text().splitlines()
        assert pairs[0].split("\t") == ["experiment", "mode", "reference", "candidate", "reference_text"]
        assert len(pairs) == 1 + 2 * 2 * 2

    def test_missing_fixture_fails_one_row(self, dataset):
        for f in (dataset / "exp_b" / "fixtures" / "llm").iterdir():
            f.unlink()
        report = run_benchmark(dataset, RunConfig.parse(REPLAY_CONFIG))
        a, b = report.row("exp_a", "pipeline"), report.row("exp_b", "pipeline")
        assert a.status == "ok" and a.chrf is not None
        assert b.status == "failed" and "MissingFixture" in b.error
        assert report.summary("pipeline").failed == 1

    def test_missing_reference(self, dataset):
        (dataset / "exp_b" / "ref1.txt").unlink()
        (dataset / "exp_b" / "ref2.txt").unlink()
        report = run_benchmark(dataset, RunConfig.parse(REPLAY_CONFIG))
        assert report.row("exp_b", "pipeline").status == "failed"
        assert report.row("exp_a", "pipeline").status == "ok"

    def test_external_scores(self, tmp_path):
        report = EvalReport([EvalRow("e1", "pipeline", "ok", chrf=0.5), EvalRow("e2", "pipeline", "ok", chrf=0.7)])
        scores = tmp_path / "scores.tsv"
        scores.write_text("experiment\tmode\treference\tscore\ne1\tpipeline\tref1\t0.80\ne1\tpipeline\tref2\t0.90\ne2\tpipeline\tref1\t0.70\n")
        ingest_scores(report, scores)
        assert report.row("e1", "pipeline").external == 0.9
        assert report.summary("pipeline").mean_external == pytest.approx(0.8)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=10))
    def test_aggregate_is_exact_mean(self, values):
        report = EvalReport([EvalRow(f"e{i}", "pipeline", "ok", chrf=v, journals=1) for i, v in enumerate(values)])
        assert report.summary("pipeline").mean_chrf == float(sum(map(Fraction, values)) / len(values))
