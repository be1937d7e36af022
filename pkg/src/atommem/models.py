"""Core records: dialogue turns, windows and memory units."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from datetime import datetime
from typing import Any

from atommem.errors import InvalidArgument
from atommem.timeutil import contains_relative, format_instant, is_valid_instant, parse_instant

SALIENCE_LEVELS = ("low", "medium", "high")


def salience_rank(level: str) -> int:
    return SALIENCE_LEVELS.index(level)


@dataclass(frozen=True)
class DialogueTurn:
    session_id: str
    turn_index: int
    speaker: str
    text: str
    timestamp: str

    @property
    def instant(self) -> datetime:
        return parse_instant(self.timestamp)


@dataclass(frozen=True)
class Window:
    turns: tuple[DialogueTurn, ...]

    @property
    def start_time(self) -> str:
        return self.turns[0].timestamp

    @property
    def participants(self) -> frozenset[str]:
        return frozenset(t.speaker for t in self.turns)

    @property
    def session_id(self) -> str:
        return self.turns[0].session_id

    @property
    def turn_range(self) -> tuple[int, int]:
        return self.turns[0].turn_index, self.turns[-1].turn_index

    def render(self) -> str:
        return "\n".join(f"[{t.timestamp}] {t.speaker}: {t.text}" for t in self.turns)


@dataclass(frozen=True)
class UnitDraft:
    """Extractor output before the store assigns identity."""

    content: str
    entities: tuple[str, ...]
    topic: str
    timestamp: str
    salience: str = "medium"


@dataclass(frozen=True)
class MemoryUnit:
    id: str
    content: str
    entities: frozenset[str]
    topic: str
    timestamp: str
    salience: str
    session_id: str
    source_turns: tuple[int, int]
    created_at: str
    synthesized: bool = False
    tombstoned: bool = False

    @property
    def instant(self) -> datetime:
        return parse_instant(self.timestamp)

    def with_(self, **changes: Any) -> "MemoryUnit":
        return replace(self, **changes)

    def to_record(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "content": self.content,
            "entities": sorted(self.entities),
            "topic": self.topic,
            "timestamp": self.timestamp,
            "salience": self.salience,
            "session_id": self.session_id,
            "source_turns": list(self.source_turns),
            "created_at": self.created_at,
            "synthesized": self.synthesized,
            "tombstoned": self.tombstoned,
        }

    @classmethod
    def from_record(cls, rec: dict[str, Any]) -> "MemoryUnit":
        return cls(
            id=str(rec["id"]),
            content=rec["content"],
            entities=frozenset(rec.get("entities", ())),
            topic=rec.get("topic", ""),
            timestamp=rec["timestamp"],
            salience=rec.get("salience", "medium"),
            session_id=rec["session_id"],
            source_turns=tuple(rec.get("source_turns", (0, 0))),
            created_at=rec.get("created_at", rec["timestamp"]),
            synthesized=bool(rec.get("synthesized", False)),
            tombstoned=bool(rec.get("tombstoned", False)),
        )


def validate_unit(unit: MemoryUnit, *, allow_relative: bool = False) -> None:
    """Raise InvalidArgument when ``unit`` breaks a MemoryUnit invariant."""
    if not unit.content.strip():
        raise InvalidArgument("memory unit content is empty")
    if not allow_relative and contains_relative(unit.content):
        raise InvalidArgument(f"unresolved relative time in {unit.content!r}")
    if not is_valid_instant(unit.timestamp):
        raise InvalidArgument(f"bad timestamp {unit.timestamp!r}")
    if unit.salience not in SALIENCE_LEVELS:
        raise InvalidArgument(f"bad salience {unit.salience!r}")


def canonical_timestamp(value: str) -> str:
    return format_instant(parse_instant(value))


@dataclass
class Session:
    """A parsed transcript session."""

    session_id: str
    start_time: str
    turns: list[DialogueTurn] = field(default_factory=list)
