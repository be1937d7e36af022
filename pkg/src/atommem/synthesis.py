"""Write-time, intra-session consolidation of related memory units."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Protocol, Sequence

from atommem import prompts
from atommem.errors import InvalidArgument, ProviderError
from atommem.models import SALIENCE_LEVELS, MemoryUnit, salience_rank
from atommem.providers import ChatProvider, ChatProviderConfig, Embedder, chat
from atommem.store import MemoryStore
from atommem.text import content_key
from atommem.timeutil import contains_relative, format_instant

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthesisGroup:
    members: tuple[MemoryUnit, ...]
    topic: str
    entities: frozenset[str]
    session_id: str

    @property
    def member_ids(self) -> tuple[str, ...]:
        return tuple(u.id for u in self.members)


class Synthesizer(Protocol):
    def merge(self, contents: Sequence[str], context: str) -> str: ...


def _entity_keys(unit: MemoryUnit) -> frozenset[str]:
    return frozenset(e.lower() for e in unit.entities)


def related(a: MemoryUnit, b: MemoryUnit) -> bool:
    """Same session, same topic (case-insensitive) and at least one shared entity."""
    return (
        a.session_id == b.session_id
        and a.topic.strip().lower() == b.topic.strip().lower()
        and bool(_entity_keys(a) & _entity_keys(b))
    )


def _order(unit: MemoryUnit) -> tuple:
    return (unit.instant, unit.id)


def group_related(new_units: Sequence[MemoryUnit], session_units: Sequence[MemoryUnit]) -> list[SynthesisGroup]:
    """Partition units into groups whose members are pairwise related.

    Units are visited oldest first and join the first group they are related
    to in full; groups of one are dropped, so those units pass through.
    """
    pool: dict[str, MemoryUnit] = {}
    for unit in [*session_units, *new_units]:
        if not unit.tombstoned:
            pool[unit.id] = unit
    sessions = {u.session_id for u in pool.values()}
    if len(sessions) > 1:
        raise InvalidArgument(f"group_related spans sessions {sorted(sessions)}")
    buckets: list[list[MemoryUnit]] = []
    for unit in sorted(pool.values(), key=_order):
        for bucket in buckets:
            if all(related(unit, other) for other in bucket):
                bucket.append(unit)
                break
        else:
            buckets.append([unit])
    groups = []
    for bucket in buckets:
        if len(bucket) < 2:
            continue
        shared = frozenset.intersection(*(_entity_keys(u) for u in bucket))
        groups.append(SynthesisGroup(
            members=tuple(bucket),
            topic=bucket[0].topic,
            entities=shared,
            session_id=bucket[0].session_id,
        ))
    return groups


class ConcatSynthesizer:
    """Deterministic merger: distinct contents joined with "; "."""

    def merge(self, contents: Sequence[str], context: str = "") -> str:
        seen: set[str] = set()
        parts = []
        for text in contents:
            key = content_key(text)
            if key not in seen:
                seen.add(key)
                parts.append(text.strip())
        return "; ".join(parts)


class LLMSynthesizer:
    def __init__(self, provider: ChatProvider, config: ChatProviderConfig | None = None):
        self.provider = provider
        self.config = config or ChatProviderConfig()

    def build_prompt(self, contents: Sequence[str], context: str) -> str:
        return prompts.render(
            prompts.SYNTHESIS_PROMPT,
            context=context or "(none)",
            fragments="\n".join(f"- {c}" for c in contents),
        )

    def merge(self, contents: Sequence[str], context: str = "") -> str:
        reply = chat(self.build_prompt(contents, context), self.provider, self.config).strip().strip('"')
        if not reply:
            raise ProviderError("synthesizer returned an empty statement")
        if contains_relative(reply):
            raise ProviderError(f"synthesizer reintroduced relative time: {reply!r}")
        return reply


def synthesize(group: SynthesisGroup, context: str, synthesizer: Synthesizer, store: MemoryStore) -> MemoryUnit:
    """Build (but do not commit) the consolidated unit for ``group``."""
    members = sorted(group.members, key=_order)
    content = synthesizer.merge([m.content for m in members], context)
    entities: dict[str, None] = {}
    for m in members:
        for e in sorted(m.entities):
            entities.setdefault(e, None)
    salience = SALIENCE_LEVELS[max(salience_rank(m.salience) for m in members)]
    return store.make_unit(
        content=content,
        entities=entities,
        topic=group.topic,
        timestamp=format_instant(max(m.instant for m in members)),
        salience=salience,
        session_id=group.session_id,
        source_turns=(min(m.source_turns[0] for m in members), max(m.source_turns[1] for m in members)),
        synthesized=True,
    )


@dataclass
class SynthesisOutcome:
    groups: int = 0
    created: int = 0
    retired: int = 0
    failed: int = 0


def consolidate(store: MemoryStore, session_id: str, new_units: Sequence[MemoryUnit],
                synthesizer: Synthesizer, embedder: Embedder, context: str = "") -> SynthesisOutcome:
    """Group, merge and atomically swap in consolidated units for one session."""
    outcome = SynthesisOutcome()
    groups = group_related(new_units, store.live_units(session_id))
    outcome.groups = len(groups)
    for group in groups:
        try:
            unit = synthesize(group, context, synthesizer, store)
            vector = embedder.embed(unit.content)
        except ProviderError as exc:
            logger.warning("synthesis of %s left unmerged: %s", group.member_ids, exc)
            outcome.failed += 1
            continue
        store.replace([(unit, vector)], group.member_ids)
        outcome.created += 1
        outcome.retired += len(group.members)
    return outcome
