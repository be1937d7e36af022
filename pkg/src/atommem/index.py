"""The three coupled index layers over committed memory units.

* dense: exact flat cosine search over L2-normalized vectors
* lexical: inverted index scored with Okapi BM25
* symbolic: metadata records filtered by predicate, ranked by recency

Ties in the scored layers go to the newer unit, then to the smaller id.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from datetime import datetime
from typing import Iterable, Sequence

import numpy as np

from atommem.errors import ConflictError, InvalidArgument, NotFoundError
from atommem.models import MemoryUnit, salience_rank
from atommem.text import tokenize
from atommem.timeutil import parse_instant

BM25_K1 = 1.2
BM25_B = 0.75


def _rank_key(score: float, epoch: float, unit_id: str) -> tuple[float, float, str]:
    return (-score, -epoch, unit_id)


class DenseIndex:
    def __init__(self, dimension: int):
        if dimension <= 0:
            raise InvalidArgument("dimension must be positive")
        self.dimension = dimension
        self._matrix = np.zeros((16, dimension), dtype=np.float64)
        self._ids: list[str] = []
        self._row: dict[str, int] = {}
        self._live = np.zeros(16, dtype=bool)
        self._epoch = np.zeros(16, dtype=np.float64)

    def __len__(self) -> int:
        return len(self._row)

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self._row

    def add(self, unit_id: str, vector: np.ndarray, epoch: float) -> None:
        vec = np.asarray(vector, dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.dimension:
            raise InvalidArgument(f"embedding has dimension {vec.shape[0]}, store uses {self.dimension}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0 or not math.isfinite(norm):
            raise InvalidArgument("embedding must be a finite non-zero vector")
        n = len(self._ids)
        if n == self._matrix.shape[0]:
            grow = self._matrix.shape[0] * 2
            self._matrix = np.resize(self._matrix, (grow, self.dimension))
            self._live = np.concatenate([self._live, np.zeros(grow - n, dtype=bool)])
            self._epoch = np.concatenate([self._epoch, np.zeros(grow - n)])
        self._matrix[n] = vec / norm
        self._live[n] = True
        self._epoch[n] = epoch
        self._ids.append(unit_id)
        self._row[unit_id] = n

    def remove(self, unit_id: str) -> None:
        row = self._row.pop(unit_id)
        self._live[row] = False

    def vector(self, unit_id: str) -> np.ndarray:
        return self._matrix[self._row[unit_id]].copy()

    def search(self, query: np.ndarray, n: int) -> list[tuple[str, float]]:
        if n <= 0:
            raise InvalidArgument("n must be positive")
        q = np.asarray(query, dtype=np.float64).reshape(-1)
        if q.shape[0] != self.dimension:
            raise InvalidArgument(f"query has dimension {q.shape[0]}, store uses {self.dimension}")
        if not self._row:
            return []
        rows = np.flatnonzero(self._live[: len(self._ids)])
        scores = self._matrix[rows] @ q
        if n < len(rows):
            # keep everything tied with the n-th best so tie-breaking stays exact
            cutoff = np.partition(scores, len(rows) - n)[len(rows) - n]
            keep = scores >= cutoff
            rows, scores = rows[keep], scores[keep]
        ranked = sorted(
            zip(rows.tolist(), scores.tolist()),
            key=lambda rs: _rank_key(rs[1], self._epoch[rs[0]], self._ids[rs[0]]),
        )
        return [(self._ids[r], s) for r, s in ranked[:n]]


class LexicalIndex:
    """Inverted index with incrementally maintained corpus statistics."""

    def __init__(self, k1: float = BM25_K1, b: float = BM25_B):
        self.k1 = k1
        self.b = b
        self.postings: dict[str, dict[str, int]] = defaultdict(dict)
        self.doc_len: dict[str, int] = {}
        self.total_len = 0
        self._terms: dict[str, tuple[str, ...]] = {}
        self._epoch: dict[str, float] = {}

    def __len__(self) -> int:
        return len(self.doc_len)

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self.doc_len

    @property
    def avgdl(self) -> float:
        return self.total_len / len(self.doc_len) if self.doc_len else 0.0

    def add(self, unit_id: str, text: str, epoch: float) -> None:
        tokens = tokenize(text)
        for tok in tokens:
            bucket = self.postings[tok]
            bucket[unit_id] = bucket.get(unit_id, 0) + 1
        self.doc_len[unit_id] = len(tokens)
        self._terms[unit_id] = tuple(dict.fromkeys(tokens))
        self.total_len += len(tokens)
        self._epoch[unit_id] = epoch

    def remove(self, unit_id: str) -> None:
        length = self.doc_len.pop(unit_id)
        self.total_len -= length
        del self._epoch[unit_id]
        for term in self._terms.pop(unit_id):
            bucket = self.postings[term]
            del bucket[unit_id]
            if not bucket:
                del self.postings[term]

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        n = len(self.doc_len)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def scores(self, query_terms: Sequence[str]) -> dict[str, float]:
        terms = query_tokens(query_terms)
        if not terms or not self.doc_len:
            return {}
        avgdl = self.avgdl
        out: dict[str, float] = defaultdict(float)
        for term in terms:
            bucket = self.postings.get(term)
            if not bucket:
                continue
            idf = self.idf(term)
            for unit_id, tf in bucket.items():
                norm = self.k1 * (1.0 - self.b + self.b * self.doc_len[unit_id] / avgdl) if avgdl else self.k1
                out[unit_id] += idf * tf * (self.k1 + 1.0) / (tf + norm)
        return dict(out)

    def search(self, query_terms: Sequence[str], n: int) -> list[tuple[str, float]]:
        if n <= 0:
            raise InvalidArgument("n must be positive")
        scored = [(uid, s) for uid, s in self.scores(query_terms).items() if s > 0.0]
        scored.sort(key=lambda us: _rank_key(us[1], self._epoch[us[0]], us[0]))
        return scored[:n]


def query_tokens(query_terms: Sequence[str]) -> list[str]:
    """Tokenize each term and drop repeats, keeping first-occurrence order."""
    seen: dict[str, None] = {}
    for term in query_terms:
        for tok in tokenize(term):
            seen.setdefault(tok, None)
    return list(seen)


@dataclass(frozen=True)
class SymbolicRecord:
    unit_id: str
    timestamp: datetime
    entities: frozenset[str]
    topic: str
    salience: str
    session_id: str

    @classmethod
    def of(cls, unit: MemoryUnit) -> "SymbolicRecord":
        return cls(unit.id, unit.instant, frozenset(e.lower() for e in unit.entities),
                   unit.topic.lower(), unit.salience, unit.session_id)


@dataclass(frozen=True)
class SymbolicPredicate:
    start: datetime | None = None
    end: datetime | None = None
    entities: frozenset[str] | None = None
    topic: str | None = None
    min_salience: str | None = None
    session_id: str | None = None

    def __post_init__(self):
        if self.start is not None:
            object.__setattr__(self, "start", parse_instant(self.start))
        if self.end is not None:
            object.__setattr__(self, "end", parse_instant(self.end))
        if self.start is not None and self.end is not None and self.start > self.end:
            raise InvalidArgument("time range start is after end")
        if self.entities is not None:
            object.__setattr__(self, "entities", frozenset(e.lower() for e in self.entities))

    def is_empty(self) -> bool:
        return (self.start is None and self.end is None and not self.entities
                and not self.topic and self.min_salience is None and self.session_id is None)

    def matches(self, rec: SymbolicRecord) -> bool:
        if self.start is not None and rec.timestamp < self.start:
            return False
        if self.end is not None and rec.timestamp > self.end:
            return False
        if self.entities and not (self.entities & rec.entities):
            return False
        if self.topic and rec.topic != self.topic.lower():
            return False
        if self.min_salience is not None and salience_rank(rec.salience) < salience_rank(self.min_salience):
            return False
        if self.session_id is not None and rec.session_id != self.session_id:
            return False
        return True


class SymbolicIndex:
    def __init__(self):
        self.records: dict[str, SymbolicRecord] = {}

    def __len__(self) -> int:
        return len(self.records)

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self.records

    def add(self, unit: MemoryUnit) -> None:
        self.records[unit.id] = SymbolicRecord.of(unit)

    def remove(self, unit_id: str) -> None:
        del self.records[unit_id]

    def search(self, predicate: SymbolicPredicate, n: int) -> list[str]:
        if n <= 0:
            raise InvalidArgument("n must be positive")
        hits = [r for r in self.records.values() if predicate.matches(r)]
        hits.sort(key=lambda r: (-r.timestamp.timestamp(), r.unit_id))
        return [r.unit_id for r in hits[:n]]


class IndexBundle:
    """Dense, lexical and symbolic layers kept in lockstep."""

    def __init__(self, dimension: int):
        self.dense = DenseIndex(dimension)
        self.lexical = LexicalIndex()
        self.symbolic = SymbolicIndex()

    @property
    def dimension(self) -> int:
        return self.dense.dimension

    def __contains__(self, unit_id: str) -> bool:
        return unit_id in self.symbolic

    def add(self, unit: MemoryUnit, embedding: np.ndarray) -> None:
        if unit.id in self.symbolic:
            raise ConflictError(f"unit {unit.id} is already indexed")
        epoch = unit.instant.timestamp()
        self.dense.add(unit.id, embedding, epoch)  # validates first
        self.lexical.add(unit.id, unit.content, epoch)
        self.symbolic.add(unit)

    def remove(self, unit_id: str) -> None:
        if unit_id not in self.symbolic:
            raise NotFoundError(unit_id)
        self.dense.remove(unit_id)
        self.lexical.remove(unit_id)
        self.symbolic.remove(unit_id)

    def sizes(self) -> dict[str, int]:
        return {"dense": len(self.dense), "lexical": len(self.lexical), "symbolic": len(self.symbolic)}

    def live_ids(self) -> Iterable[str]:
        return self.symbolic.records.keys()
