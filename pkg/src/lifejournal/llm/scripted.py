"""Rule-based stand-in for the language models.

``scripted_responder`` answers every catalog template with a deterministic,
format-following reply built from the prompt (and, for map prompts, from the
``Description`` text chunk embedded in the fixture image). It makes offline
runs and tests exercise the real parsing, fusion and fallback paths.
"""

from __future__ import annotations

import json
import re

from lifejournal.geo import png_text
from lifejournal.llm.parsing import parse_timed_lines
from lifejournal.llm.providers import CompletionRequest, MockProvider

_SSID_PLACES = (
    (("starbucks", "coffee", "cafe", "espresso"), "a coffee shop"),
    (("library",), "a public library"),
    (("eduroam", "campus", "univ", "college"), "a university campus"),
    (("mall", "shop", "store", "market"), "a shopping mall"),
    (("gym", "fitness"), "a fitness centre"),
    (("metro", "station", "rail", "transit"), "a transit station"),
    (("noodle", "pizza", "sushi", "restaurant", "diner", "bistro"), "a restaurant"),
    (("office", "corp", "staff"), "an office building"),
    (("hotel", "guest-suite"), "a hotel"),
    (("home", "flat", "apartment"), "a residential flat"),
)

NOT_INFORMATIVE = "The SSIDs are not informative."
_PLACE = re.compile(r"inside (.+?)\.?$")

_VEHICLE_HINTS = ("road", "street", "highway", "motorway", "subway", "station", "rail", "ferry", "bridge", "harbour")
_OUTDOOR_HINTS = ("park", "trail", "path", "promenade", "beach", "hill", "garden", "track", "waterfront")
_INDOOR_HINTS = ("coffee", "library", "office", "shop", "mall", "restaurant", "flat", "residential", "campus", "hotel")

_ACTIVITY = {
    "stationary": "staying",
    "limited motion": "moving around a little",
    "walking": "walking",
    "jogging/running": "jogging",
    "cycling": "cycling",
    "vehicle/subway/ferry/train": "travelling by vehicle",
    "escalator/elevator": "taking an escalator or elevator",
    "unknown": "doing something unrecorded",
}

SUBJECTIVE_TAIL = "It seems like a pleasant day overall."
_SUBJECTIVE = ("seems", "pleasant", "enjoy", "probably", "i think", "nice", "lovely")


def _reply(reasoning: str, summary: str) -> str:
    return f"reasoning: {reasoning}\nsummary: {summary}"


def _ssid_place(names: list[str]) -> str | None:
    for name in names:
        low = name.lower()
        for keys, place in _SSID_PLACES:
            if any(k in low for k in keys):
                return place
    return None


def _shorten(text: str) -> str:
    text = text.strip().rstrip(".")
    for sep in (";", " with ", " where ", ". "):
        text = text.split(sep)[0]
    return text[:1].lower() + text[1:]


def _map_context(request: CompletionRequest) -> str:
    desc = png_text(request.image or b"").get("Description")
    if not desc:
        return _reply("The map shows no labelled features near the centre.", "An unlabelled area.")
    return _reply("The centre of the map falls on a labelled area.", desc)


def _ssid_context(request: CompletionRequest) -> str:
    m = re.search(r"SSIDs: (\[.*\])", request.prompt)
    names = json.loads(m.group(1)) if m else []
    place = _ssid_place(names)
    if place is None:
        return _reply("The names look like personal hotspots or random strings.", NOT_INFORMATIVE)
    return _reply(f"At least one SSID names {place}.", f"The user is near or inside {place}.")


def _fusion_entries(prompt: str) -> list[tuple[str, str | None, str | None]]:
    out = []
    for label, content in parse_timed_lines(prompt):
        map_part, _, ssid_part = content.rpartition(", ")
        map_text = None if map_part in ("", "none") else map_part
        ssid_text = None if ssid_part in ("", "none") or "not informative" in ssid_part else ssid_part
        out.append((label, map_text, ssid_text))
    return out


def _location_fusion(request: CompletionRequest) -> str:
    entries = _fusion_entries(request.prompt)
    concise = "concisely" in request.prompt
    # specificity carried across neighbouring windows that share a map context
    place_by_map: dict[str | None, str] = {}
    for _, map_text, ssid_text in entries:
        if ssid_text and map_text not in place_by_map:
            m = _PLACE.search(ssid_text)
            place_by_map[map_text] = m.group(1) if m else ssid_text
    lines = []
    for label, map_text, ssid_text in entries:
        place = None
        if ssid_text:
            m = _PLACE.search(ssid_text)
            place = m.group(1) if m else ssid_text
        elif map_text is not None and map_text in place_by_map:
            place = place_by_map[map_text]
        if concise:
            text = place or (_shorten(map_text) if map_text else "unknown")
        elif place and map_text:
            text = f"{place} within {map_text.rstrip('.')}"
        else:
            text = place or (map_text.rstrip(".") if map_text else "unknown")
        lines.append(f"[{label}]({text})")
    return _reply("Kept the more specific context per time and propagated it to neighbours.", "\n".join(lines))


def _pick_motion(candidates: list[str], location: str) -> str:
    low = location.lower()

    def first_of(*wanted: str) -> str | None:
        return next((w for w in wanted if w in candidates), None)

    if any(h in low for h in _VEHICLE_HINTS):
        choice = first_of("vehicle/subway/ferry/train", "walking", "cycling")
    elif any(h in low for h in _OUTDOOR_HINTS):
        choice = first_of("walking", "jogging/running", "cycling", "stationary")
    elif any(h in low for h in _INDOOR_HINTS):
        choice = first_of("stationary", "limited motion", "escalator/elevator", "walking")
    else:
        choice = None
    return choice or candidates[0]


def _motion_calibration(request: CompletionRequest) -> str:
    lines = []
    for label, content in parse_timed_lines(request.prompt):
        m = re.match(r"candidates: (.*?); location: (.*)$", content)
        if not m:
            continue
        candidates = [c.strip() for c in m.group(1).split("|")]
        lines.append(f"[{label}]({_pick_motion(candidates, m.group(2))})")
    return _reply("Chose the motion most compatible with each location.", "\n".join(lines))


def _activity(motion: str) -> str:
    parts = [_ACTIVITY.get(p.strip(), p.strip()) for p in motion.split(" or ")]
    return " or ".join(parts)


def _runs(items: list[tuple[str, str]]) -> list[tuple[str, str, str]]:
    """Merge consecutive identical states: (first label, last label, state)."""
    runs: list[list[str]] = []
    for label, state in items:
        if runs and runs[-1][2] == state:
            runs[-1][1] = label
        else:
            runs.append([label, label, state])
    return [tuple(r) for r in runs]  # type: ignore[misc]


def _journal_generation(request: CompletionRequest) -> str:
    body = request.prompt.split("[HH:MM](motion, location).", 1)[-1]
    entries = []
    for label, content in parse_timed_lines(body):
        motion, _, location = content.partition(", ")
        entries.append((label, f"{motion}\t{location}"))
    sentences = []
    for start, end, state in _runs(entries):
        motion, location = state.split("\t")
        where = location.rstrip(".")
        where = where[:1].lower() + where[1:]
        at = f" at {where}" if where and where != "unknown" else ""
        span = f"At {start}" if start == end else f"From {start} to {end}"
        sentences.append(f"{span}, the user is {_activity(motion)}{at}.")
    if not sentences:
        return _reply("The logs are empty.", "No activities were recorded.")
    sentences.append(SUBJECTIVE_TAIL)
    return _reply("Merged consecutive identical contexts into activities.", " ".join(sentences))


def _journal_cleaning(request: CompletionRequest) -> str:
    journal = request.prompt.split("activities:\n", 1)[-1].split("\nRemove any subjective", 1)[0].strip()
    kept = [
        s
        for s in re.split(r"(?<=\.)\s+", journal)
        if s and not any(word in s.lower() for word in _SUBJECTIVE)
    ]
    return _reply("Removed sentences expressing opinions.", " ".join(kept) or journal)


_SENLLM_LINE = re.compile(r"t=(\S+) steps=(\S+) acc=\S+ dh=\S+ v=(\S+)")


def _senllm_journal(request: CompletionRequest) -> str:
    items = []
    for m in _SENLLM_LINE.finditer(request.prompt):
        steps = float(m.group(2))
        v = float(m.group(3)) if m.group(3) != "na" else None
        if v is not None and v > 5:
            state = "travelling"
        elif steps >= 50:
            state = "moving on foot"
        else:
            state = "mostly still"
        items.append((m.group(1), state))
    sentences = [
        (f"At {a}" if a == b else f"From {a} to {b}") + f", the sensors suggest the user is {state}."
        for a, b, state in _runs(items)
    ]
    return _reply("Grouped windows by step rate and speed.", " ".join(sentences) or "No data.")


_HANDLERS = {
    "map_context": _map_context,
    "ssid_context": _ssid_context,
    "location_fusion": _location_fusion,
    "motion_calibration": _motion_calibration,
    "journal_generation": _journal_generation,
    "journal_cleaning": _journal_cleaning,
    "senllm_journal": _senllm_journal,
}


def scripted_responder(request: CompletionRequest) -> str:
    handler = _HANDLERS.get(request.template_id)
    if handler is None:
        return _reply("Unknown task.", "No answer.")
    return handler(request)


def scripted_provider() -> MockProvider:
    return MockProvider(responder=scripted_responder)
