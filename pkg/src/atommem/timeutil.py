"""Absolute-time handling: ISO-8601 parsing and relative expression resolution.

All instants are timezone-aware UTC ``datetime`` objects internally. Stored
records use ``YYYY-MM-DDTHH:MM:SSZ``; memory content embeds the same instant
without the zone suffix (``2025-11-20T14:00:00``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone

from atommem.errors import InvalidArgument

# Tokens that must never survive into committed memory content.
RELATIVE_BLOCKLIST = ("yesterday", "tomorrow", "last week", "next month", "today")

_BLOCK_RE = re.compile(r"\b(?:" + "|".join(re.escape(t) for t in RELATIVE_BLOCKLIST) + r")\b", re.I)

_NUMBER_WORDS = {
    "one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
    "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
}
_NUM = r"(?:\d+|" + "|".join(_NUMBER_WORDS) + r")"
_TIME_OF_DAY = r"(?:\d{1,2}(?::\d{2})?\s*(?:am|pm)|\d{1,2}:\d{2}|noon|midnight)"
_DAY_EXPR = (
    r"(?:today|tonight|tomorrow|yesterday"
    r"|(?:last|next)\s+(?:week|month|year)"
    rf"|{_NUM}\s+(?:day|week)s?\s+ago"
    rf"|in\s+{_NUM}\s+(?:day|week)s?)"
)
RELATIVE_RE = re.compile(
    rf"\b(?:at\s+(?P<pre>{_TIME_OF_DAY})\s+)?(?P<day>{_DAY_EXPR})(?:\s+at\s+(?P<post>{_TIME_OF_DAY}))?\b",
    re.I,
)

_FIXED_OFFSETS = {
    "today": timedelta(0),
    "tonight": timedelta(0),
    "tomorrow": timedelta(days=1),
    "yesterday": timedelta(days=-1),
    "last week": timedelta(days=-7),
    "next week": timedelta(days=7),
    "last month": timedelta(days=-30),
    "next month": timedelta(days=30),
    "last year": timedelta(days=-365),
    "next year": timedelta(days=365),
}


@dataclass(frozen=True)
class TimeResolution:
    instant: datetime
    recognized: bool


def parse_instant(value: str | datetime) -> datetime:
    """Parse an ISO-8601 string (date or datetime); naive values are taken as UTC."""
    if isinstance(value, datetime):
        dt = value
    else:
        text = str(value).strip()
        if text.endswith(("Z", "z")):
            text = text[:-1] + "+00:00"
        try:
            dt = datetime.fromisoformat(text)
        except ValueError as exc:
            raise InvalidArgument(f"not an ISO-8601 instant: {value!r}") from exc
    if dt.tzinfo is None:
        return dt.replace(tzinfo=timezone.utc)
    return dt.astimezone(timezone.utc)


def format_instant(dt: datetime) -> str:
    return parse_instant(dt).strftime("%Y-%m-%dT%H:%M:%SZ")


def format_content_instant(dt: datetime) -> str:
    return parse_instant(dt).strftime("%Y-%m-%dT%H:%M:%S")


def is_valid_instant(value: str) -> bool:
    try:
        parse_instant(value)
    except InvalidArgument:
        return False
    return True


def contains_relative(text: str) -> bool:
    return _BLOCK_RE.search(text) is not None


def _parse_clock(text: str) -> tuple[int, int]:
    text = text.lower().replace(" ", "")
    if text == "noon":
        return 12, 0
    if text == "midnight":
        return 0, 0
    suffix = None
    if text.endswith(("am", "pm")):
        suffix, text = text[-2:], text[:-2]
    hour_s, _, minute_s = text.partition(":")
    hour, minute = int(hour_s), int(minute_s or 0)
    if suffix == "pm" and hour < 12:
        hour += 12
    elif suffix == "am" and hour == 12:
        hour = 0
    if not (0 <= hour < 24 and 0 <= minute < 60):
        raise ValueError(text)
    return hour, minute


def _day_offset(day: str) -> timedelta | None:
    day = " ".join(day.lower().split())
    if day in _FIXED_OFFSETS:
        return _FIXED_OFFSETS[day]
    m = re.fullmatch(rf"({_NUM}) (day|week)s? ago", day)
    sign = -1
    if m is None:
        m = re.fullmatch(rf"in ({_NUM}) (day|week)s?", day)
        sign = 1
    if m is None:
        return None
    count = _NUMBER_WORDS.get(m.group(1)) or int(m.group(1))
    unit = 7 if m.group(2) == "week" else 1
    return timedelta(days=sign * count * unit)


def normalize_time(expression: str, anchor: str | datetime) -> TimeResolution:
    """Resolve ``expression`` to an absolute UTC instant relative to ``anchor``.

    Absolute ISO input is passed through. Relative day expressions shift the
    anchor by a fixed offset (``last week`` is -7 days, ``next month`` +30
    days) and keep the anchor's time of day unless an explicit ``at <time>``
    is attached. Anything else yields the anchor with ``recognized=False``.
    """
    base = parse_instant(anchor)
    expr = expression.strip()
    if is_valid_instant(expr):
        return TimeResolution(parse_instant(expr), True)
    m = RELATIVE_RE.fullmatch(expr)
    if m is None:
        return TimeResolution(base, False)
    offset = _day_offset(m.group("day"))
    if offset is None:
        return TimeResolution(base, False)
    instant = base + offset
    clock = m.group("pre") or m.group("post")
    if clock is None and m.group("day").lower() == "tonight":
        clock = "8pm"
    if clock is not None:
        try:
            hour, minute = _parse_clock(clock)
        except ValueError:
            return TimeResolution(base, False)
        instant = instant.replace(hour=hour, minute=minute, second=0, microsecond=0)
    return TimeResolution(instant, True)


def absolutize(text: str, anchor: str | datetime) -> tuple[str, datetime | None]:
    """Rewrite every relative expression in ``text`` as ``on <instant>``.

    Returns the rewritten text and the first resolved instant (None when the
    text carried no relative expression).
    """
    first: list[datetime] = []

    def _sub(match: re.Match) -> str:
        res = normalize_time(match.group(0), anchor)
        if not res.recognized:
            return match.group(0)
        if not first:
            first.append(res.instant)
        return "on " + format_content_instant(res.instant)

    out = RELATIVE_RE.sub(_sub, text)
    out = re.sub(r"\bon on\b", "on", out)
    return out, (first[0] if first else None)
