"""Query planning, three-view retrieval, union merge and context budgeting."""

from __future__ import annotations

import json
import logging
import math
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from typing import Any, Callable, Mapping, Protocol, Sequence

from atommem import prompts
from atommem.errors import InvalidArgument, ProviderError
from atommem.index import SymbolicPredicate
from atommem.ingestion import capitalized_entities
from atommem.models import MemoryUnit
from atommem.providers import ChatProvider, ChatProviderConfig, Embedder, chat
from atommem.store import MemoryStore
from atommem.text import tokenize, whitespace_count
from atommem.timeutil import RELATIVE_RE, normalize_time, parse_instant

logger = logging.getLogger(__name__)

N_MIN = 3
N_MAX = 20
SENTINEL = "I do not have enough information in my memory."

VIEWS = ("sem", "lex", "sym")

COMPLEXITY_CUES = ("before", "after", "first time", "last time", "how many times",
                   "both", "compare", "between")
_CUE_RE = re.compile(r"\b(?:" + "|".join(re.escape(c) for c in COMPLEXITY_CUES) + r")\b", re.I)

_QUESTION_WORDS = {"what", "when", "where", "who", "whom", "which", "why", "how", "do", "does",
                   "did", "is", "are", "was", "were", "can", "could", "would", "will", "has",
                   "have", "had", "should", "tell", "please", "remember"}
_LEAD_PHRASE = re.compile(r"^(?:do you remember|can you tell me|could you tell me|tell me|please)\s+", re.I)

_MONTHS = {m: i for i, m in enumerate(
    ["january", "february", "march", "april", "may", "june", "july", "august",
     "september", "october", "november", "december"], 1)}
_MONTH_YEAR = re.compile(r"\b(" + "|".join(_MONTHS) + r")\s*,?\s+(\d{4})\b", re.I)
_ISO_DAY = re.compile(r"\b(\d{4}-\d{2}-\d{2})(?:T[\d:]+Z?)?\b")


@dataclass(frozen=True)
class RetrievalPlan:
    complexity: str
    rationale: str
    lexical_keywords: tuple[str, ...]
    temporal_constraints: tuple[datetime, datetime] | None
    semantic_query: str
    entity_filters: frozenset[str] | None
    limit: int

    def __post_init__(self):
        if self.complexity not in ("LOW", "HIGH"):
            raise InvalidArgument(f"complexity must be LOW or HIGH, got {self.complexity!r}")
        if not self.semantic_query.strip():
            raise InvalidArgument("semantic_query must be non-empty")
        if self.limit < 1:
            raise InvalidArgument("limit must be positive")

    def predicate(self) -> SymbolicPredicate:
        start, end = self.temporal_constraints or (None, None)
        return SymbolicPredicate(start=start, end=end, entities=self.entity_filters or None)

    def to_dict(self) -> dict[str, Any]:
        tc = None
        if self.temporal_constraints:
            tc = {"start": self.temporal_constraints[0].strftime("%Y-%m-%dT%H:%M:%SZ"),
                  "end": self.temporal_constraints[1].strftime("%Y-%m-%dT%H:%M:%SZ")}
        return {
            "complexity": self.complexity,
            "retrieval_rationale": self.rationale,
            "lexical_keywords": list(self.lexical_keywords),
            "temporal_constraints": tc,
            "semantic_query": self.semantic_query,
            "entity_filters": sorted(self.entity_filters) if self.entity_filters else None,
            "limit": self.limit,
        }


def clamp_limit(value: int, n_min: int = N_MIN, n_max: int = N_MAX) -> int:
    return max(n_min, min(n_max, int(value)))


def depth_to_limit(complexity: str, override: int | None = None,
                   n_min: int = N_MIN, n_max: int = N_MAX) -> int:
    """LOW -> n_min, HIGH -> n_max; an explicit override is clamped to the range."""
    if override is not None:
        return clamp_limit(override, n_min, n_max)
    return n_max if str(complexity).upper() == "HIGH" else n_min


class Planner(Protocol):
    def plan(self, query: str, history: str = "") -> RetrievalPlan: ...


def _day_span(dt: datetime, days: int = 1) -> tuple[datetime, datetime]:
    start = dt.replace(hour=0, minute=0, second=0, microsecond=0)
    return start, start + timedelta(days=days) - timedelta(seconds=1)


def _month_span(year: int, month: int) -> tuple[datetime, datetime]:
    start = datetime(year, month, 1, tzinfo=timezone.utc)
    nxt = datetime(year + (month == 12), month % 12 + 1, 1, tzinfo=timezone.utc)
    return start, nxt - timedelta(seconds=1)


def temporal_range(query: str, now: datetime) -> tuple[datetime, datetime] | None:
    """Union span of every explicit date or relative expression in ``query``."""
    spans = []
    for m in _ISO_DAY.finditer(query):
        try:
            spans.append(_day_span(parse_instant(m.group(1))))
        except InvalidArgument:
            continue
    for m in _MONTH_YEAR.finditer(query):
        spans.append(_month_span(int(m.group(2)), _MONTHS[m.group(1).lower()]))
    for m in RELATIVE_RE.finditer(query):
        res = normalize_time(m.group(0), now)
        if not res.recognized:
            continue
        day = m.group("day").lower()
        width = 30 if "month" in day else 365 if "year" in day else 7 if "week" in day else 1
        spans.append(_day_span(res.instant, width))
    if not spans:
        return None
    return min(s for s, _ in spans), max(e for _, e in spans)


def declarative(query: str) -> str:
    """Strip interrogative lead words and the question mark."""
    text = _LEAD_PHRASE.sub("", query.strip()).rstrip(" ?")
    words = text.split()
    while len(words) > 1 and words[0].lower().strip(",") in _QUESTION_WORDS:
        words.pop(0)
    out = " ".join(words).strip()
    return out or query.strip() or "?"


def query_entities(query: str) -> frozenset[str]:
    return frozenset(e for e in capitalized_entities(query)
                     if e.lower() not in _QUESTION_WORDS and e.lower() != "i")


class HeuristicPlanner:
    """Rule-table planner; never calls a model."""

    def __init__(self, n_min: int = N_MIN, n_max: int = N_MAX, now: Callable[[], datetime] | None = None):
        self.n_min = n_min
        self.n_max = n_max
        self.now = now or (lambda: datetime.now(timezone.utc))

    def plan(self, query: str, history: str = "") -> RetrievalPlan:
        if not query.strip():
            raise InvalidArgument("query must be non-empty")
        cue = _CUE_RE.search(query)
        complexity = "HIGH" if cue else "LOW"
        rationale = (f"cue {cue.group(0).lower()!r} signals multi-event reasoning" if cue
                     else "direct fact lookup")
        entities = query_entities(query)
        return RetrievalPlan(
            complexity=complexity,
            rationale=rationale,
            lexical_keywords=tuple(tokenize(query)),
            temporal_constraints=temporal_range(query, self.now()),
            semantic_query=declarative(query),
            entity_filters=entities or None,
            limit=depth_to_limit(complexity, n_min=self.n_min, n_max=self.n_max),
        )


def _as_number(value: Any) -> float | None:
    if isinstance(value, bool) or value is None:
        return None
    try:
        num = float(value)
    except (TypeError, ValueError):
        return None
    return num if math.isfinite(num) else None


def coerce_plan(raw: Any, fallback: RetrievalPlan, n_min: int = N_MIN, n_max: int = N_MAX) -> RetrievalPlan:
    """Turn an arbitrary planner reply into a valid plan, borrowing from ``fallback``."""
    if not isinstance(raw, Mapping):
        return fallback
    complexity = str(raw.get("complexity", "")).strip().upper()
    if complexity not in ("LOW", "HIGH"):
        complexity = fallback.complexity

    keywords = raw.get("lexical_keywords")
    if isinstance(keywords, list) and all(isinstance(k, str) for k in keywords) and any(k.strip() for k in keywords):
        keywords = tuple(k.strip() for k in keywords if k.strip())
    else:
        keywords = fallback.lexical_keywords

    temporal = None
    tc = raw.get("temporal_constraints")
    if isinstance(tc, Mapping):
        try:
            start, end = parse_instant(str(tc.get("start"))), parse_instant(str(tc.get("end")))
            if start <= end:
                temporal = (start, end)
        except InvalidArgument:
            temporal = None

    semantic = raw.get("semantic_query")
    if not isinstance(semantic, str) or not semantic.strip():
        semantic = fallback.semantic_query

    entities = raw.get("entity_filters")
    if isinstance(entities, list) and entities and all(isinstance(e, str) for e in entities):
        entities = frozenset(entities)
    else:
        entities = fallback.entity_filters

    explicit = None
    for key in ("limit", "n", "depth"):
        explicit = _as_number(raw.get(key))
        if explicit is not None:
            break
    limit = depth_to_limit(complexity, None if explicit is None else round(explicit), n_min, n_max)

    rationale = raw.get("retrieval_rationale")
    return RetrievalPlan(
        complexity=complexity,
        rationale=rationale if isinstance(rationale, str) else "",
        lexical_keywords=keywords,
        temporal_constraints=temporal,
        semantic_query=semantic,
        entity_filters=entities,
        limit=limit,
    )


def _json_object(reply: str) -> Any:
    text = reply.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.S)
    if fence:
        text = fence.group(1)
    return json.loads(text)


class LLMPlanner:
    """Planner speaking the retrieval-planning prompt; falls back to heuristics on any failure."""

    def __init__(self, provider: ChatProvider, config: ChatProviderConfig | None = None,
                 fallback: HeuristicPlanner | None = None):
        self.provider = provider
        self.config = config or ChatProviderConfig()
        self.fallback = fallback or HeuristicPlanner()

    def build_prompt(self, query: str) -> str:
        return prompts.render(prompts.PLANNING_PROMPT, user_query=query)

    def plan(self, query: str, history: str = "") -> RetrievalPlan:
        base = self.fallback.plan(query, history)
        try:
            raw = _json_object(chat(self.build_prompt(query), self.provider, self.config))
        except (ProviderError, ValueError) as exc:
            logger.warning("planner fell back to heuristics: %s", exc)
            return base
        return coerce_plan(raw, base, self.fallback.n_min, self.fallback.n_max)


# ---------------------------------------------------------------------------
# Execution and merge
# ---------------------------------------------------------------------------

@dataclass
class RetrievalResult:
    sem: list[tuple[str, float]]
    lex: list[tuple[str, float]]
    sym: list[str]
    limit: int
    degraded: bool = False


_POOL = ThreadPoolExecutor(max_workers=3, thread_name_prefix="atommem-view")


def execute(plan: RetrievalPlan, store: MemoryStore, embedder: Embedder, limit: int | None = None) -> RetrievalResult:
    """Run the three views with limit ``n`` against one consistent snapshot."""
    n = plan.limit if limit is None else int(limit)
    if n <= 0:
        raise InvalidArgument("limit must be positive")
    degraded = False
    try:
        qvec = embedder.embed(plan.semantic_query)
    except ProviderError as exc:
        logger.warning("semantic view skipped: %s", exc)
        qvec, degraded = None, True
    predicate = plan.predicate()
    index = store.index
    with store.lock.read():
        f_sem = _POOL.submit(index.dense.search, qvec, n) if qvec is not None else None
        f_lex = _POOL.submit(index.lexical.search, list(plan.lexical_keywords), n)
        f_sym = _POOL.submit(index.symbolic.search, predicate, n)
        sem = f_sem.result() if f_sem is not None else []
        lex, sym = f_lex.result(), f_sym.result()
    return RetrievalResult(sem=sem, lex=lex, sym=sym, limit=n, degraded=degraded)


def render_unit(unit: MemoryUnit) -> str:
    return f"[{unit.timestamp}] {unit.content}"


def render_units(units: Sequence[MemoryUnit]) -> str:
    return "\n".join(render_unit(u) for u in units)


@dataclass
class ContextBundle:
    units: tuple[MemoryUnit, ...]
    provenance: dict[str, dict[str, int]]
    token_count: int
    budget_exceeded: bool = False
    dropped: tuple[str, ...] = ()

    @property
    def ids(self) -> list[str]:
        return [u.id for u in self.units]

    @property
    def rendered(self) -> str:
        return render_units(self.units)

    def most_relevant(self) -> MemoryUnit | None:
        """Unit returned by the most views, then best rank in any view, then newest."""
        if not self.units:
            return None

        def key(u: MemoryUnit):
            prov = self.provenance.get(u.id, {})
            return (-len(prov), min(prov.values(), default=1 << 30), -u.instant.timestamp(), u.id)

        return min(self.units, key=key)

    def to_dict(self) -> dict[str, Any]:
        return {
            "units": [
                {**u.to_record(), "views": sorted(self.provenance.get(u.id, {}), key=VIEWS.index)}
                for u in self.units
            ],
            "token_count": self.token_count,
            "budget_exceeded": self.budget_exceeded,
            "dropped": list(self.dropped),
            "context": self.rendered,
        }


def _ids(results: Sequence) -> list[str]:
    return [r[0] if isinstance(r, (tuple, list)) else r for r in results]


def merge(sem: Sequence, lex: Sequence, sym: Sequence,
          lookup: Callable[[str], MemoryUnit] | Mapping[str, MemoryUnit],
          count_tokens: Callable[[str], int] = whitespace_count) -> ContextBundle:
    """ID-deduplicated union of the three views, ordered by timestamp ascending.

    Provenance maps each unit id to ``{view: rank}`` for every view that returned it.
    """
    get = lookup.__getitem__ if isinstance(lookup, Mapping) else lookup
    provenance: dict[str, dict[str, int]] = {}
    for view, results in zip(VIEWS, (sem, lex, sym)):
        for rank, uid in enumerate(_ids(results)):
            provenance.setdefault(uid, {}).setdefault(view, rank)
    units = sorted((get(uid) for uid in provenance), key=lambda u: (u.instant, u.id))
    return ContextBundle(units=tuple(units), provenance=provenance,
                         token_count=count_tokens(render_units(units)))


def build_context(bundle: ContextBundle, token_budget: int,
                  count_tokens: Callable[[str], int] = whitespace_count) -> ContextBundle:
    """Drop units from the oldest end until the rendered context fits the budget.

    The most relevant unit is never dropped; if it alone overflows the budget
    the result carries ``budget_exceeded=True``.
    """
    if token_budget <= 0:
        raise InvalidArgument("token budget must be positive")
    keep = bundle.most_relevant()
    units = list(bundle.units)
    dropped = list(bundle.dropped)
    total = count_tokens(render_units(units))
    while total > token_budget and len(units) > 1:
        victim = next(u for u in units if u.id != keep.id)
        units.remove(victim)
        dropped.append(victim.id)
        total = count_tokens(render_units(units))
    provenance = {u.id: bundle.provenance[u.id] for u in units if u.id in bundle.provenance}
    return ContextBundle(units=tuple(units), provenance=provenance, token_count=total,
                         budget_exceeded=total > token_budget, dropped=tuple(dropped))


# ---------------------------------------------------------------------------
# Answering
# ---------------------------------------------------------------------------

@dataclass
class Answer:
    text: str
    degraded: bool = False
    prompt: str | None = field(default=None, repr=False)


class FallbackAnswerer:
    """Returns the unit sharing the most query tokens, newest on ties, else the sentinel."""

    def answer(self, query: str, bundle: ContextBundle) -> Answer:
        wanted = set(tokenize(query))
        best, best_key = None, None
        for unit in bundle.units:
            overlap = len(wanted & set(tokenize(unit.content)))
            if overlap == 0:
                continue
            key = (overlap, unit.instant, unit.id)
            if best_key is None or key > best_key:
                best, best_key = unit, key
        return Answer(best.content if best is not None else SENTINEL)


class LLMAnswerer:
    def __init__(self, provider: ChatProvider, config: ChatProviderConfig | None = None):
        self.provider = provider
        self.config = config or ChatProviderConfig()

    def build_prompt(self, query: str, bundle: ContextBundle) -> str:
        abstracts = [u for u in bundle.units if u.synthesized]
        details = [u for u in bundle.units if not u.synthesized]
        return prompts.render(
            prompts.ANSWER_PROMPT,
            user_query=query,
            retrieved_abstracts=render_units(abstracts) or "(none)",
            retrieved_units=render_units(details) or "(none)",
        )

    def answer(self, query: str, bundle: ContextBundle) -> Answer:
        prompt = self.build_prompt(query, bundle)
        try:
            reply = chat(prompt, self.provider, self.config).strip()
        except ProviderError as exc:
            logger.warning("answer generation failed: %s", exc)
            return Answer(SENTINEL, degraded=True, prompt=prompt)
        return Answer(reply or SENTINEL, prompt=prompt)


def answer(query: str, bundle: ContextBundle, answerer: FallbackAnswerer | LLMAnswerer | None = None) -> Answer:
    return (answerer or FallbackAnswerer()).answer(query, bundle)
