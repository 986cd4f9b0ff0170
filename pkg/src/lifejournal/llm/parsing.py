"""Extraction of the ``summary`` section from model replies."""

from __future__ import annotations

import re

# "summary:", "## Summary", "**Summary**", "**Summary:**" (case-insensitive)
_MARKER = re.compile(
    r"(?:#{1,6}[ \t]*summary\b[ \t]*:?"
    r"|\*\*[ \t]*summary[ \t]*:?[ \t]*\*\*[ \t]*:?"
    r"|\bsummary[ \t]*:)",
    re.IGNORECASE,
)


def parse_summary(raw: str) -> str | None:
    """Text after the last summary marker, or None when the reply has none.

    A reply without an extractable summary counts as a hallucination.
    """
    last = None
    for last in _MARKER.finditer(raw):
        pass
    if last is None:
        return None
    text = raw[last.end():].strip()
    return text or None


_ENTRY = re.compile(r"\[(\d{1,2}:\d{2}(?::\d{2})?)\]\s*\((.*)\)\s*,?\s*$")


def parse_timed_lines(text: str) -> list[tuple[str, str]]:
    """Parse ``[HH:MM](content)`` lines; lines that do not match are skipped.

    Several entries on one line (``[a](x), [b](y)``) are split first.
    """
    out = []
    for line in re.split(r"\n|(?<=\))\s*,?\s*(?=\[\d{1,2}:\d{2})", text):
        m = _ENTRY.match(line.strip().lstrip("-* "))
        if m:
            out.append((m.group(1), m.group(2).strip()))
    return out
