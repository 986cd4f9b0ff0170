"""Command-line entry point: run, eval, simulate, cache, ledger and motion."""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from fractions import Fraction
from pathlib import Path
from typing import Sequence

from lifejournal import __version__
from lifejournal.config import ROLES, RunConfig, describe_keys
from lifejournal.errors import ConfigError, LifeJournalError, StorageIo
from lifejournal.geo import ContextCache, cache_stats
from lifejournal.llm.ledger import DEFAULT_FREQUENCIES, CostLedger, ledger_report
from lifejournal.motion import DEFAULT_THRESHOLDS, MotionThresholds, classify, detect_motion
from lifejournal.pipeline import SOURCE_PIPELINE, SOURCE_SENLLM, StageError, run_pipeline, run_senllm
from lifejournal.trace import FeatureFlags, WindowFeatures, load_trace

log = logging.getLogger("lifejournal")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_INPUT = 4
EXIT_STAGE = 5

DEFAULTS_HELP = """\
defaults: collect 15 s every 60 s, refinement batches of 15 windows,
one journal per hour, 100 m grid cells, 500x500 px maps at zoom 18,
2 retries with 1 s exponential backoff, at most 4 in-flight provider calls.
"""


class CliError(Exception):
    def __init__(self, message: str, code: int) -> None:
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# shared option handling
# ---------------------------------------------------------------------------

# flag dest -> config key
FLAG_KEYS = {
    "batch_size": "batch_size",
    "horizon": "horizon_s",
    "tz_offset": "tz_offset_minutes",
    "thinning": "thinning",
    "concurrency": "concurrency",
    "cache": "cache_path",
    "concise": "concise",
    "map_fixtures": "map.fixtures",
}


def _add_config_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat key = value config file")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config key (repeatable)",
    )
    p.add_argument("--mock", action="store_true", help="bind every role to the scripted offline mock (role.*.kind = mock)")
    p.add_argument("--batch-size", type=int, help="windows per refinement batch (batch_size, default 15)")
    p.add_argument("--horizon", type=float, help="journal horizon in seconds (horizon_s, default 3600)")
    p.add_argument("--tz-offset", type=int, help="minutes east of UTC for clock labels (tz_offset_minutes)")
    p.add_argument("--thinning", type=int, help="keep 1 of every N windows (thinning, default 1)")
    p.add_argument("--concurrency", type=int, help="in-flight provider calls (concurrency, default 4)")
    p.add_argument("--cache", type=Path, help="grid-cell context cache file (cache_path)")
    p.add_argument("--map-fixtures", type=Path, help="map image fixture directory (map.fixtures)")
    p.add_argument(
        "--concise", choices=("on", "off"),
        help="brevity instruction in refinement prompts (concise, default on)",
    )
    p.add_argument("--force", action="store_true", help="allow writing into an existing output directory")


def load_config(args: argparse.Namespace) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    overrides: dict[str, str] = {}
    if args.mock:
        overrides.update({f"role.{r}.kind": "mock" for r in ROLES})
    for dest, key in FLAG_KEYS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides[key] = str(value)
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    return cfg.merged(overrides)


def prepare_out_dir(out: Path, force: bool) -> None:
    if out.exists() and any(out.iterdir()):
        if not force:
            raise CliError(f"output directory {out} is not empty; pass --force to overwrite it", EXIT_USAGE)
        for child in out.iterdir():
            if child.is_dir():
                shutil.rmtree(child)
            else:
                child.unlink()
    out.mkdir(parents=True, exist_ok=True)


def _dump_json(path: Path, data: object) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_config(args)
    mode = args.mode
    gateway = cfg.gateway(mode)
    map_provider = cfg.map_provider() if mode == SOURCE_PIPELINE else None
    try:
        bursts = load_trace(args.trace)
    except OSError as exc:
        raise CliError(f"cannot read trace {args.trace}: {exc}", EXIT_INPUT) from None
    prepare_out_dir(args.out, args.force)

    settings = cfg.settings()
    if mode == SOURCE_SENLLM:
        result = run_senllm(bursts, gateway, settings)
    else:
        cache = ContextCache(cfg.path("cache_path"))
        result = run_pipeline(bursts, gateway, map_provider, cache, settings)

    journals_dir = args.out / "journals"
    journals_dir.mkdir()
    for i, journal in enumerate(result.journals):
        (journals_dir / f"journal_{i:03d}.txt").write_text(journal.render(settings.tz_offset_minutes), encoding="utf-8")
    if mode == SOURCE_PIPELINE:
        (args.out / "contexts.log").write_text(result.context_log(), encoding="utf-8")
    gateway.write_transcript(args.out / "transcript.jsonl")
    report = dict(result.report)
    report["config"] = cfg.effective()
    report["trace"] = Path(args.trace).name
    _dump_json(args.out / "report.json", report)
    if result.ledger is not None:
        ledger_text = result.ledger.render()
    else:
        ledger_text = f"ledger unavailable: {result.report['ledger'].get('error')}\n"
    (args.out / "ledger.txt").write_text(ledger_text, encoding="utf-8")

    hallucinated = sum(j.hallucinated for j in result.journals)
    print(f"{len(result.journals)} journal(s) written to {journals_dir} ({hallucinated} hallucinated)")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from lifejournal.eval.benchmark import ingest_scores, run_benchmark

    cfg = load_config(args)
    modes = args.mode or [SOURCE_PIPELINE]
    prepare_out_dir(args.out, args.force)
    report = run_benchmark(args.dataset, cfg, modes)
    if args.scores:
        ingest_scores(report, args.scores)
    report.write(args.out)
    sys.stdout.write(report.render())
    return EXIT_OK


def cmd_simulate(args: argparse.Namespace) -> int:
    from lifejournal.eval.simulate import SCENARIOS, generate_synthetic_trace, scenario

    if args.list or not args.scenario:
        for name, sc in SCENARIOS.items():
            print(f"{name:<18} {sc.windows:>4} windows  " + ", ".join(f"{s.label.text} {s.minutes}m" for s in sc.segments))
        return EXIT_OK
    trace = generate_synthetic_trace(scenario(args.scenario), args.seed)
    prepare_out_dir(args.out, args.force)
    trace.write(args.out)
    print(f"{args.scenario}: {len(trace.bursts)} windows, {len(trace.map_fixtures)} map fixtures -> {args.out}")
    return EXIT_OK


def cmd_cache(args: argparse.Namespace) -> int:
    if args.action == "stats":
        stats = cache_stats(args.path)
        ref = "unset" if stats.reference_lat is None else f"{stats.reference_lat:.6f}"
        print(f"entries: {stats.records}\ndistinct cells: {stats.distinct_cells}\nreference latitude: {ref}")
        return EXIT_OK
    if not args.yes:
        print(f"refusing to clear {args.path} without --yes", file=sys.stderr)
        return EXIT_USAGE
    before = cache_stats(args.path)
    ContextCache(args.path).clear()
    print(f"cleared {before.distinct_cells} cell(s) from {args.path}")
    return EXIT_OK


def cmd_ledger(args: argparse.Namespace) -> int:
    """Recompute the cost table from a transcript."""
    cfg = load_config(args)
    ledger = CostLedger()
    for role in ROLES:
        model = cfg.values.get(f"role.{role}.model")
        p_in, p_out = cfg.values.get(f"role.{role}.price_in"), cfg.values.get(f"role.{role}.price_out")
        if model is not None and p_in is not None and p_out is not None:
            ledger.set_price(str(model), p_in, p_out)
    for p_in_out in args.price:
        model, _, prices = p_in_out.partition("=")
        p_in, _, p_out = prices.partition(",")
        ledger.set_price(model, p_in, p_out)
    models: set[str] = set()
    with open(args.transcript, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                ledger.record(rec["template_id"], rec["model"], rec["input_tokens"], rec["output_tokens"])
                models.add(rec["model"])
    if args.per_hour == "table":
        freqs = dict(DEFAULT_FREQUENCIES)
    else:
        hours = Fraction(str(args.hours))
        freqs = {tid: Fraction(u.calls) / hours for tid, u in ledger.usage.items()}
    sys.stdout.write(ledger_report(ledger, freqs).render())
    return EXIT_OK


def cmd_motion(args: argparse.Namespace) -> int:
    th = MotionThresholds.from_yaml(args.thresholds) if args.thresholds else DEFAULT_THRESHOLDS
    if args.v is None or args.altitude_invalid:
        features = WindowFeatures(
            time=0.0, s=args.s, a=args.a, delta_h=args.dh, v=args.v or 0.0,
            flags=FeatureFlags(speed_valid=args.v is not None, location_valid=False,
                               altitude_valid=not args.altitude_invalid),
        )
        labels = detect_motion(features, th).labels
    else:
        labels = tuple(classify(args.s, args.a, args.dh, args.v, th))
    for label in labels:
        print(label.text)
    if not labels:
        print("(no motion)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lifejournal",
        description="Turn smartphone sensor traces into natural-language life journals.",
        epilog=DEFAULTS_HELP + "\nconfig keys:\n" + describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
        allow_abbrev=False,  # otherwise `motion --v` is read as an abbreviation of --version/--verbose
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0, help="log progress (repeat for debug)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="journal one trace", formatter_class=argparse.RawDescriptionHelpFormatter,
                       epilog=DEFAULTS_HELP)
    p.add_argument("trace", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", choices=(SOURCE_PIPELINE, SOURCE_SENLLM), default=SOURCE_PIPELINE,
                   help="full multi-stage pipeline or the raw-sensor baseline")
    _add_config_options(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="benchmark a dataset of experiments")
    p.add_argument("dataset", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--mode", action="append", choices=(SOURCE_PIPELINE, SOURCE_SENLLM),
                   help="modes to compare (repeatable; default pipeline)")
    p.add_argument("--scores", type=Path, help="external scorer output to ingest (experiment, mode, reference, score)")
    _add_config_options(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("simulate", help="generate a labelled synthetic experiment")
    p.add_argument("scenario", nargs="?")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.add_argument("--list", action="store_true", help="list the named scenarios")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("cache", help="inspect or clear a context cache file")
    p.add_argument("action", choices=("stats", "clear"))
    p.add_argument("path", type=Path)
    p.add_argument("--yes", action="store_true", help="confirm clearing")
    p.set_defaults(func=cmd_cache)

    p = sub.add_parser("ledger", help="cost per hour from a transcript")
    p.add_argument("transcript", type=Path)
    p.add_argument("--price", action="append", default=[], metavar="MODEL=IN,OUT",
                   help="dollars per 1e6 input,output tokens for MODEL")
    p.add_argument("--per-hour", choices=("table", "observed"), default="observed",
                   help="table: default call frequencies; observed: calls / --hours")
    p.add_argument("--hours", type=float, default=1.0, help="trace duration for observed frequencies")
    _add_config_options(p)
    p.set_defaults(func=cmd_ledger)

    p = sub.add_parser("motion", help="classify one feature vector (debug)")
    p.add_argument("--s", type=float, required=True, help="steps per minute")
    p.add_argument("--a", type=float, required=True, help="mean linear acceleration, m/s^2")
    p.add_argument("--dh", type=float, required=True, help="altitude change, m")
    p.add_argument("--v", type=float, help="GPS speed, m/s (omit when unavailable)")
    p.add_argument("--altitude-invalid", action="store_true", help="no barometer reading")
    p.add_argument("--thresholds", type=Path, help="expert threshold YAML")
    p.set_defaults(func=cmd_motion)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if args.command == "simulate" and args.scenario and not args.list and args.out is None:
        parser.error("simulate needs --out")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"pipeline error in {exc}", file=sys.stderr)
        return EXIT_STAGE
    except StorageIo as exc:
        print(f"storage error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except LifeJournalError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
