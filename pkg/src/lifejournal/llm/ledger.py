"""Token accounting and per-hour cost reporting.

Token counts are integers and prices are held as ``Fraction`` so that the
report total is exactly the sum of its rows.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from lifejournal.errors import MissingPrice

PER_MILLION = 1_000_000

# Calls per hour implied by the default configuration (1-minute windows,
# 15-window batches, one journal per hour).
DEFAULT_FREQUENCIES: dict[str, Fraction] = {
    "map_context": Fraction(60),
    "ssid_context": Fraction(60),
    "location_fusion": Fraction(4),
    "motion_calibration": Fraction(4),
    "journal_generation": Fraction(1),
    "journal_cleaning": Fraction(1),
}

BATCH_STREAM_NOTE = (
    "location_fusion and motion_calibration run once per context batch "
    "(4 calls/hr with 15 one-minute windows per batch); the reference cost figures "
    "for these two streams (5.9e-4 and 3.5e-4 $/hr) correspond to 1 call/hr at the "
    "listed token counts, not 4 calls/hr"
)


def as_fraction(value: float | int | str | Fraction) -> Fraction:
    # str() first so that 0.15 becomes 3/20 rather than its binary expansion
    return value if isinstance(value, Fraction) else Fraction(str(value))


@dataclass
class TemplateUsage:
    calls: int = 0
    input_tokens: int = 0
    output_tokens: int = 0
    models: set[str] = field(default_factory=set)


class CostLedger:
    """Accumulates (calls, input tokens, output tokens) per template."""

    def __init__(self, prices: Mapping[str, tuple[float | Fraction, float | Fraction]] | None = None) -> None:
        # model -> ($ per 1e6 input tokens, $ per 1e6 output tokens)
        self.prices: dict[str, tuple[Fraction, Fraction]] = {
            model: (as_fraction(p_in), as_fraction(p_out)) for model, (p_in, p_out) in (prices or {}).items()
        }
        self.usage: dict[str, TemplateUsage] = {}
        self._lock = threading.Lock()

    def set_price(self, model: str, price_in: float | Fraction, price_out: float | Fraction) -> None:
        self.prices[model] = (as_fraction(price_in), as_fraction(price_out))

    def record(self, template_id: str, model: str, input_tokens: int, output_tokens: int) -> None:
        if input_tokens < 0 or output_tokens < 0:
            raise ValueError("token counts must be >= 0")
        with self._lock:
            u = self.usage.setdefault(template_id, TemplateUsage())
            u.calls += 1
            u.input_tokens += input_tokens
            u.output_tokens += output_tokens
            u.models.add(model)

    def calls(self, template_id: str) -> int:
        u = self.usage.get(template_id)
        return u.calls if u else 0

    def totals(self) -> TemplateUsage:
        t = TemplateUsage()
        for u in self.usage.values():
            t.calls += u.calls
            t.input_tokens += u.input_tokens
            t.output_tokens += u.output_tokens
            t.models |= u.models
        return t

    def price_for(self, template_id: str) -> tuple[Fraction, Fraction]:
        u = self.usage[template_id]
        if len(u.models) != 1:
            # mixed models under one template: use the priciest to stay conservative
            candidates = [self.prices[m] for m in u.models if m in self.prices]
            if len(candidates) != len(u.models):
                raise MissingPrice(f"no unit price for some model of template {template_id!r}")
            return max(candidates, key=lambda p: p[0] + p[1])
        (model,) = u.models
        if model not in self.prices:
            raise MissingPrice(f"no unit price configured for model {model!r} (template {template_id!r})")
        return self.prices[model]


@dataclass(frozen=True)
class LedgerRow:
    template_id: str
    calls: int
    avg_input_tokens: Fraction
    avg_output_tokens: Fraction
    frequency_per_hr: Fraction
    dollars_per_hr: Fraction


@dataclass(frozen=True)
class LedgerReport:
    rows: tuple[LedgerRow, ...]
    total_per_hr: Fraction
    notes: tuple[str, ...] = ()

    def row(self, template_id: str) -> LedgerRow:
        for r in self.rows:
            if r.template_id == template_id:
                return r
        raise KeyError(template_id)

    def render(self) -> str:
        lines = [f"{'template':<20} {'calls':>6} {'avg in':>8} {'avg out':>8} {'freq/hr':>8} {'$/hr':>9}"]
        for r in self.rows:
            lines.append(
                f"{r.template_id:<20} {r.calls:>6} {float(r.avg_input_tokens):>8.1f} "
                f"{float(r.avg_output_tokens):>8.1f} {float(r.frequency_per_hr):>8.2f} "
                f"{sig2(r.dollars_per_hr):>9}"
            )
        lines.append(f"{'total':<20} {'':>6} {'':>8} {'':>8} {'':>8} {sig2(self.total_per_hr):>9}")
        lines.extend(f"note: {n}" for n in self.notes)
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "template": r.template_id,
                    "calls": r.calls,
                    "avg_input_tokens": float(r.avg_input_tokens),
                    "avg_output_tokens": float(r.avg_output_tokens),
                    "frequency_per_hr": float(r.frequency_per_hr),
                    "dollars_per_hr": sig2(r.dollars_per_hr),
                }
                for r in self.rows
            ],
            "total_dollars_per_hr": sig2(self.total_per_hr),
            "notes": list(self.notes),
        }


def sig2(value: Fraction) -> str:
    """Two significant figures in scientific notation, e.g. ``1.5e-02``."""
    return f"{float(value):.1e}"


def ledger_report(ledger: CostLedger, frequencies: Mapping[str, float | Fraction]) -> LedgerReport:
    """Dollars per hour per template: mean tokens per call x unit price x calls per hour.

    Templates with recorded calls but no frequency are reported at 0 calls/hr.
    """
    rows = []
    for template_id in sorted(ledger.usage):
        u = ledger.usage[template_id]
        freq = as_fraction(frequencies.get(template_id, 0))
        avg_in = Fraction(u.input_tokens, u.calls)
        avg_out = Fraction(u.output_tokens, u.calls)
        p_in, p_out = ledger.price_for(template_id)
        cost = (avg_in * p_in + avg_out * p_out) / PER_MILLION * freq
        rows.append(LedgerRow(template_id, u.calls, avg_in, avg_out, freq, cost))
    notes = []
    if {"location_fusion", "motion_calibration"} & set(ledger.usage):
        notes.append(BATCH_STREAM_NOTE)
    return LedgerReport(tuple(rows), sum((r.dollars_per_hr for r in rows), Fraction(0)), tuple(notes))
