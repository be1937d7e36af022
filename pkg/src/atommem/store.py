"""Unit store: append-only JSONL log plus in-memory indexes rebuilt on open.

Every write appends complete unit records (embedding included). The latest
record for an id wins on replay, so a tombstone is the unit re-appended with
``tombstoned: true``. A truncated final line, the trace of a crash mid-write,
is ignored on open.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

from atommem.errors import ConflictError, InvalidArgument, NotFoundError
from atommem.index import IndexBundle, SymbolicPredicate
from atommem.models import MemoryUnit
from atommem.text import content_key
from atommem.timeutil import format_instant

logger = logging.getLogger(__name__)


class RWLock:
    """Many readers or one writer; writers are not starved by new readers."""

    def __init__(self):
        self._cond = threading.Condition()
        self._readers = 0
        self._writer = False
        self._waiting_writers = 0

    @contextmanager
    def read(self) -> Iterator[None]:
        with self._cond:
            while self._writer or self._waiting_writers:
                self._cond.wait()
            self._readers += 1
        try:
            yield
        finally:
            with self._cond:
                self._readers -= 1
                if not self._readers:
                    self._cond.notify_all()

    @contextmanager
    def write(self) -> Iterator[None]:
        with self._cond:
            self._waiting_writers += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._waiting_writers -= 1
            self._writer = True
        try:
            yield
        finally:
            with self._cond:
                self._writer = False
                self._cond.notify_all()


def _utcnow() -> str:
    return format_instant(datetime.now(timezone.utc))


class MemoryStore:
    """Owns the unit table, the index bundle and the on-disk log.

    ``path=None`` keeps everything in memory.
    """

    def __init__(self, dimension: int, path: str | Path | None = None, *,
                 durable: bool = False, clock: Callable[[], str] = _utcnow):
        self.path = Path(path) if path is not None else None
        self.durable = durable
        self.clock = clock
        self.lock = RWLock()
        self.index = IndexBundle(dimension)
        self.units: dict[str, MemoryUnit] = {}
        self._session_keys: dict[str, set[str]] = {}
        self._session_order: dict[str, list[str]] = {}
        self._next_id = 1
        if self.path is not None and self.path.exists():
            self._replay()

    @property
    def dimension(self) -> int:
        return self.index.dimension

    # -- persistence -------------------------------------------------------

    def _replay(self) -> None:
        latest: dict[str, dict] = {}
        order: list[str] = []
        with open(self.path, encoding="utf-8") as fh:
            lines = fh.read().split("\n")
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                if lineno >= len(lines) - 1:
                    logger.warning("ignoring truncated trailing record in %s", self.path)
                    continue
                raise InvalidArgument(f"{self.path}:{lineno}: corrupt unit record") from None
            if rec["id"] not in latest:
                order.append(rec["id"])
            latest[rec["id"]] = rec
        for uid in order:
            rec = latest[uid]
            unit = MemoryUnit.from_record(rec)
            self._remember(unit)
            if not unit.tombstoned:
                self.index.add(unit, np.asarray(rec["embedding"], dtype=np.float64))
        numeric = [int(uid[1:]) for uid in order if uid[:1] == "m" and uid[1:].isdigit()]
        self._next_id = max(numeric, default=0) + 1

    def _append(self, records: Sequence[dict]) -> None:
        if self.path is None or not records:
            return
        payload = "".join(json.dumps(r, sort_keys=True) + "\n" for r in records)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            fh.write(payload)
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())

    def _record(self, unit: MemoryUnit, embedding: np.ndarray) -> dict:
        rec = unit.to_record()
        rec["embedding"] = [float(x) for x in embedding]
        return rec

    def _remember(self, unit: MemoryUnit) -> None:
        if unit.id not in self.units:
            self._session_order.setdefault(unit.session_id, []).append(unit.id)
        self.units[unit.id] = unit
        self._session_keys.setdefault(unit.session_id, set()).add(content_key(unit.content))

    # -- writes --------------------------------------------------------------

    def new_id(self) -> str:
        uid = f"m{self._next_id:06d}"
        self._next_id += 1
        return uid

    def make_unit(self, *, content: str, entities: Iterable[str], topic: str, timestamp: str,
                  salience: str, session_id: str, source_turns: tuple[int, int],
                  synthesized: bool = False) -> MemoryUnit:
        """Build a unit with a fresh id; not yet committed."""
        with self.lock.write():
            uid = self.new_id()
        return MemoryUnit(id=uid, content=content, entities=frozenset(entities), topic=topic,
                          timestamp=timestamp, salience=salience, session_id=session_id,
                          source_turns=source_turns, created_at=self.clock(), synthesized=synthesized)

    def _normalized(self, embedding: np.ndarray) -> np.ndarray:
        vec = np.asarray(embedding, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.dimension:
            raise InvalidArgument(f"embedding has dimension {vec.shape[0]}, store uses {self.dimension}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not np.isfinite(norm):
            raise InvalidArgument("embedding must be a finite non-zero vector")
        return vec / norm

    def index_unit(self, unit: MemoryUnit, embedding: np.ndarray) -> str:
        self.add_units([(unit, embedding)])
        return unit.id

    def add_units(self, items: Sequence[tuple[MemoryUnit, np.ndarray]]) -> list[str]:
        """Commit several units in one log append and one index update."""
        prepared = []
        for unit, emb in items:
            prepared.append((unit, self._normalized(emb)))
        with self.lock.write():
            seen = set()
            for unit, _ in prepared:
                if unit.id in self.units or unit.id in seen:
                    raise ConflictError(f"unit id {unit.id} already exists")
                seen.add(unit.id)
            self._append([self._record(u, e) for u, e in prepared])
            for unit, emb in prepared:
                self._remember(unit)
                if not unit.tombstoned:
                    self.index.add(unit, emb)
        return [u.id for u, _ in prepared]

    def tombstone(self, unit_id: str) -> None:
        self.replace([], [unit_id])

    def replace(self, new_items: Sequence[tuple[MemoryUnit, np.ndarray]], retire_ids: Sequence[str]) -> None:
        """Atomically add ``new_items`` and tombstone ``retire_ids``.

        Readers never observe one half without the other, and the log
        receives all records in a single append.
        """
        prepared = [(u, self._normalized(e)) for u, e in new_items]
        with self.lock.write():
            for uid in retire_ids:
                unit = self.units.get(uid)
                if unit is None or unit.tombstoned:
                    raise NotFoundError(f"no live unit {uid}")
            for unit, _ in prepared:
                if unit.id in self.units:
                    raise ConflictError(f"unit id {unit.id} already exists")
            records = [self._record(u, e) for u, e in prepared]
            retired = []
            for uid in retire_ids:
                dead = self.units[uid].with_(tombstoned=True)
                records.append(self._record(dead, self.index.dense.vector(uid)))
                retired.append(dead)
            self._append(records)
            for dead in retired:
                self.index.remove(dead.id)
                self.units[dead.id] = dead
            for unit, emb in prepared:
                self._remember(unit)
                self.index.add(unit, emb)

    # -- reads ---------------------------------------------------------------

    def get(self, unit_id: str) -> MemoryUnit:
        try:
            return self.units[unit_id]
        except KeyError:
            raise NotFoundError(unit_id) from None

    def live_units(self, session_id: str | None = None) -> list[MemoryUnit]:
        """Live units in commit order, optionally for one session."""
        with self.lock.read():
            ids = (self._session_order.get(session_id, []) if session_id is not None
                   else [uid for order in self._session_order.values() for uid in order])
            return [self.units[uid] for uid in ids if not self.units[uid].tombstoned]

    def all_units(self) -> list[MemoryUnit]:
        with self.lock.read():
            return list(self.units.values())

    def session_keys(self, session_id: str) -> set[str]:
        """Normalized contents of every unit ever stored in the session, tombstones included."""
        with self.lock.read():
            return set(self._session_keys.get(session_id, ()))

    def search_dense(self, query: np.ndarray, n: int) -> list[tuple[str, float]]:
        with self.lock.read():
            return self.index.dense.search(query, n)

    def search_lexical(self, terms: Sequence[str], n: int) -> list[tuple[str, float]]:
        with self.lock.read():
            return self.index.lexical.search(terms, n)

    def search_symbolic(self, predicate: SymbolicPredicate, n: int) -> list[str]:
        with self.lock.read():
            return self.index.symbolic.search(predicate, n)

    def stats(self) -> dict:
        with self.lock.read():
            total = len(self.units)
            live = sum(1 for u in self.units.values() if not u.tombstoned)
            return {
                "units": total,
                "live": live,
                "tombstoned": total - live,
                "synthesized_live": sum(1 for u in self.units.values() if u.synthesized and not u.tombstoned),
                "sessions": len(self._session_order),
                "layers": self.index.sizes(),
                "dimension": self.dimension,
            }
