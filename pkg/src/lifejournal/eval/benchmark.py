"""Benchmark runner over a directory of experiments.

Dataset layout, one directory per experiment::

    <dataset>/<experiment>/trace.jsonl
    <dataset>/<experiment>/ref1.txt
    <dataset>/<experiment>/ref2.txt          (optional)
    <dataset>/<experiment>/fixtures/maps/    (optional map images)
    <dataset>/<experiment>/fixtures/llm/     (optional replay fixtures)

Each experiment runs in isolation (own gateway, own in-memory cache unless
``cache_path`` is configured); a failing experiment becomes a failed row.

External scorer hook: ``pairs.tsv`` lists every candidate/reference pair with
columns ``experiment, mode, reference, candidate, reference_text``; an
external tool writes ``experiment, mode, reference, score`` rows which
``ingest_scores`` folds back into the report (best score per experiment).
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Sequence

from lifejournal.config import RunConfig
from lifejournal.errors import LifeJournalError
from lifejournal.eval.chrf import chrf
from lifejournal.geo import ContextCache
from lifejournal.journal import Journal
from lifejournal.pipeline import (
    SOURCE_PIPELINE,
    SOURCE_SENLLM,
    PipelineResult,
    run_pipeline,
    run_senllm,
)
from lifejournal.trace import load_trace

log = logging.getLogger(__name__)

PAIR_COLUMNS = ("experiment", "mode", "reference", "candidate", "reference_text")
SCORE_COLUMNS = ("experiment", "mode", "reference", "score")


@dataclass
class EvalRow:
    experiment: str
    mode: str
    status: str  # "ok" | "failed"
    chrf: float | None = None
    best_reference: str | None = None
    hallucinated: bool = False
    journals: int = 0
    hallucinated_journals: int = 0
    context_entries: int = 0
    entries_per_horizon: float = 0.0
    fallbacks: int = 0
    error: str | None = None
    candidate: str = ""
    external: float | None = None


def _mean(values: Iterable[float]) -> float | None:
    values = [Fraction(v) for v in values]
    if not values:
        return None
    return float(sum(values) / len(values))


@dataclass
class ModeSummary:
    mode: str
    experiments: int
    failed: int
    scored: int
    mean_chrf: float | None
    hallucination_rate: float
    journal_attempts: int
    mean_entries_per_horizon: float | None
    mean_external: float | None = None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    references: dict[str, list[tuple[str, str]]] = field(default_factory=dict)

    def modes(self) -> list[str]:
        return sorted({r.mode for r in self.rows}, key=lambda m: (m != SOURCE_PIPELINE, m))

    def summary(self, mode: str) -> ModeSummary:
        rows = [r for r in self.rows if r.mode == mode]
        ok = [r for r in rows if r.status == "ok"]
        attempts = sum(r.journals for r in ok)
        return ModeSummary(
            mode=mode,
            experiments=len(rows),
            failed=len(rows) - len(ok),
            scored=sum(r.chrf is not None for r in ok),
            mean_chrf=_mean(r.chrf for r in ok if r.chrf is not None),
            hallucination_rate=sum(r.hallucinated_journals for r in ok) / attempts if attempts else 0.0,
            journal_attempts=attempts,
            mean_entries_per_horizon=_mean(r.entries_per_horizon for r in ok),
            mean_external=_mean(r.external for r in ok if r.external is not None),
        )

    def row(self, experiment: str, mode: str) -> EvalRow:
        for r in self.rows:
            if r.experiment == experiment and r.mode == mode:
                return r
        raise KeyError((experiment, mode))

    def to_dict(self) -> dict:
        return {
            "rows": [{k: v for k, v in asdict(r).items() if k != "candidate"} for r in self.rows],
            "summary": [asdict(self.summary(m)) for m in self.modes()],
        }

    def render(self) -> str:
        """Experiments as rows, one chrF column per mode, then aggregates."""
        modes = self.modes()
        experiments = sorted({r.experiment for r in self.rows})
        width = max([len("experiment")] + [len(e) for e in experiments])
        head = f"{'experiment':<{width}}" + "".join(f"  {m + ' chrF':>14}" for m in modes)
        lines = [head, "-" * len(head)]
        for exp in experiments:
            cells = []
            for m in modes:
                try:
                    r = self.row(exp, m)
                except KeyError:
                    cells.append("-")
                    continue
                if r.status != "ok":
                    cells.append("FAILED")
                elif r.chrf is None:
                    cells.append("halluc.")
                else:
                    cells.append(f"{r.chrf:.4f}")
            lines.append(f"{exp:<{width}}" + "".join(f"  {c:>14}" for c in cells))
        lines.append("-" * len(head))
        sums = [self.summary(m) for m in modes]
        lines.append(f"{'mean chrF':<{width}}" + "".join(
            f"  {(f'{s.mean_chrf:.4f}' if s.mean_chrf is not None else '-'):>14}" for s in sums))
        lines.append(f"{'halluc. rate':<{width}}" + "".join(f"  {s.hallucination_rate:>14.4f}" for s in sums))
        lines.append(f"{'failed':<{width}}" + "".join(f"  {s.failed:>14d}" for s in sums))
        if any(s.mean_external is not None for s in sums):
            lines.append(f"{'external':<{width}}" + "".join(
                f"  {(f'{s.mean_external:.4f}' if s.mean_external is not None else '-'):>14}" for s in sums))
        for r in self.rows:
            if r.status != "ok":
                lines.append(f"failed: {r.experiment} [{r.mode}]: {r.error}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "eval.json").write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        (out / "eval.txt").write_text(self.render(), encoding="utf-8")
        write_pairs(self, out / "pairs.tsv")


def _tsv(text: str) -> str:
    return text.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def write_pairs(report: EvalReport, path: str | Path) -> None:
    lines = ["\t".join(PAIR_COLUMNS)]
    for r in report.rows:
        if r.status != "ok" or not r.candidate:
            continue
        for ref_id, ref_text in report.references.get(r.experiment, []):
            lines.append("\t".join([r.experiment, r.mode, ref_id, _tsv(r.candidate), _tsv(ref_text)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def ingest_scores(report: EvalReport, path: str | Path) -> None:
    """Attach external scores; the best score over references is kept per row."""
    best: dict[tuple[str, str], float] = {}
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or (line_no == 1 and line.startswith(SCORE_COLUMNS[0])):
            continue
        cols = line.split("\t")
        if len(cols) != len(SCORE_COLUMNS):
            raise ValueError(f"{path}:{line_no}: expected {len(SCORE_COLUMNS)} columns {SCORE_COLUMNS}")
        key = (cols[0], cols[1])
        best[key] = max(best.get(key, float("-inf")), float(cols[3]))
    for r in report.rows:
        if (r.experiment, r.mode) in best:
            r.external = best[(r.experiment, r.mode)]


def read_references(exp_dir: Path) -> list[tuple[str, str]]:
    refs = []
    for name in ("ref1", "ref2"):
        path = exp_dir / f"{name}.txt"
        if path.exists():
            text = path.read_text(encoding="utf-8").strip()
            if text:
                refs.append((name, text))
    return refs


def experiments(dataset_dir: str | Path) -> list[Path]:
    root = Path(dataset_dir)
    if (root / "trace.jsonl").exists():
        return [root]
    return sorted(p for p in root.iterdir() if p.is_dir() and (p / "trace.jsonl").exists())


def run_experiment(exp_dir: Path, config: RunConfig, mode: str) -> tuple[EvalRow, PipelineResult | None]:
    row = EvalRow(experiment=exp_dir.name, mode=mode, status="ok")
    refs = read_references(exp_dir)
    try:
        if not refs:
            raise LifeJournalError(f"{exp_dir} has no reference journal (ref1.txt)")
        bursts = load_trace(exp_dir / "trace.jsonl")
        gateway = config.gateway(mode, experiment=exp_dir)
        settings = config.settings()
        if mode == SOURCE_SENLLM:
            result = run_senllm(bursts, gateway, settings)
        else:
            cache = ContextCache(config.path("cache_path", exp_dir))
            result = run_pipeline(bursts, gateway, config.map_provider(exp_dir), cache, settings)
    except (LifeJournalError, OSError, ValueError) as exc:
        row.status = "failed"
        row.error = f"{type(exc).__name__}: {exc}"
        log.warning("experiment %s [%s] failed: %s", exp_dir.name, mode, row.error)
        return row, None

    row.journals = len(result.journals)
    row.hallucinated_journals = sum(j.hallucinated for j in result.journals)
    row.context_entries = len(result.entries)
    if result.journals and result.entries:
        row.entries_per_horizon = len(result.entries) / len(result.journals)
    refinement = result.report.get("refinement", {})
    row.fallbacks = int(refinement.get("fallback_batches", 0)) + int(refinement.get("calibration_fallbacks", 0))
    row.fallbacks += sum(1 for j in result.journals if j.cleaning_fallback)
    row.candidate = result.journal_text()
    row.hallucinated = row.hallucinated_journals > 0
    if row.candidate.strip():
        scores = [(chrf(row.candidate, text), ref_id) for ref_id, text in refs]
        row.chrf, row.best_reference = max(scores, key=lambda s: (s[0], s[1] == "ref1"))
    return row, result


def run_benchmark(
    dataset_dir: str | Path,
    config: RunConfig,
    modes: Sequence[str] = (SOURCE_PIPELINE,),
) -> EvalReport:
    """Run every experiment in every mode and score against the references."""
    for mode in modes:
        if mode not in (SOURCE_PIPELINE, SOURCE_SENLLM):
            raise ValueError(f"unknown mode {mode!r}")
    exps = experiments(dataset_dir)
    jobs = [(exp, mode) for exp in exps for mode in modes]
    workers = max(1, min(int(config.get("concurrency")), len(jobs) or 1))
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = [row for row, _ in pool.map(lambda job: run_experiment(job[0], config, job[1]), jobs)]
    return EvalReport(rows=rows, references={exp.name: read_references(exp) for exp in exps})


def hallucination_rate(source: EvalReport | dict | Sequence[Journal] | Sequence[bool]) -> float:
    """Hallucinated journals over journal attempts.

    Accepts an ``EvalReport``, a run report (``{"journals": [...]}``), journals
    or plain booleans.
    """
    if isinstance(source, EvalReport):
        total = sum(r.journals for r in source.rows if r.status == "ok")
        if not total:
            raise ValueError("no journal attempts")
        return sum(r.hallucinated_journals for r in source.rows if r.status == "ok") / total
    if isinstance(source, dict):
        source = [bool(j["hallucinated"]) for j in source.get("journals", [])]
    flags = [j.hallucinated if isinstance(j, Journal) else bool(j) for j in source]
    if not flags:
        raise ValueError("no journal attempts")
    return sum(flags) / len(flags)
