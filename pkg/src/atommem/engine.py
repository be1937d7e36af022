"""The memory engine: one code path shared by the CLI, the service and the eval harness."""

from __future__ import annotations

import dataclasses
import logging
import os
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime
from typing import Any, Callable, Iterator, Sequence

from atommem.errors import ExtractionFailed, InvalidArgument, ProviderError
from atommem.ingestion import (
    LLMExtractor,
    RawChunkExtractor,
    RuleBasedExtractor,
    build_session,
    dedup_drafts,
    sanitize_draft,
    segment,
)
from atommem.models import MemoryUnit, Session, UnitDraft, Window, validate_unit
from atommem.providers import (
    CachedEmbedder,
    ChatProviderConfig,
    HashingEmbedder,
    RemoteChatProvider,
    RemoteEmbedder,
)
from atommem.retrieval import (
    Answer,
    ContextBundle,
    FallbackAnswerer,
    HeuristicPlanner,
    LLMAnswerer,
    LLMPlanner,
    RetrievalPlan,
    RetrievalResult,
    answer as answer_query,
    build_context,
    depth_to_limit,
    execute,
    merge,
)
from atommem.store import MemoryStore
from atommem.synthesis import ConcatSynthesizer, LLMSynthesizer, consolidate
from atommem.text import tokenize, whitespace_count

logger = logging.getLogger(__name__)

ENV_PREFIX = "ATOMMEM_"


@dataclass
class EngineConfig:
    """Engine settings; every field is also a CLI flag and an ATOMMEM_* variable."""

    store_path: str | None = None
    window_size: int = 20
    stride: int = 5
    embedding_dim: int = 1024
    n_min: int = 3
    n_max: int = 20
    token_budget: int = 600
    provider: str = "deterministic"
    chat_model: str = "gpt-4.1-mini"
    temperature: float = 0.0
    max_retries: int = 1
    history_units: int = 10
    # ablation switches
    compression: bool = True
    synthesis: bool = True
    planning: bool = True
    fixed_depth: int = 5
    limit_override: int | None = None

    def __post_init__(self):
        if self.window_size <= 0 or self.stride <= 0 or self.stride > self.window_size:
            raise InvalidArgument("need 0 < stride <= window_size")
        if self.embedding_dim <= 0:
            raise InvalidArgument("embedding_dim must be positive")
        if not (1 <= self.n_min <= self.n_max):
            raise InvalidArgument("need 1 <= n_min <= n_max")
        if self.token_budget <= 0:
            raise InvalidArgument("token_budget must be positive")
        if self.provider not in ("deterministic", "remote"):
            raise InvalidArgument(f"unknown provider {self.provider!r}")
        if self.fixed_depth <= 0:
            raise InvalidArgument("fixed_depth must be positive")
        if self.limit_override is not None and self.limit_override <= 0:
            raise InvalidArgument("limit_override must be positive")

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def replace(self, **changes: Any) -> "EngineConfig":
        return dataclasses.replace(self, **changes)

    @classmethod
    def from_env(cls, environ: dict[str, str] | None = None, **overrides: Any) -> "EngineConfig":
        """Defaults, then ``ATOMMEM_<FIELD>`` variables, then non-None ``overrides``."""
        environ = os.environ if environ is None else environ
        values: dict[str, Any] = {}
        for f in dataclasses.fields(cls):
            raw = environ.get(ENV_PREFIX + f.name.upper())
            if raw is not None:
                values[f.name] = _coerce(f.name, raw, f.type)
        values.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**values)


def _coerce(name: str, raw: str, annotation: Any) -> Any:
    ann = str(annotation)
    try:
        if ann.startswith("bool"):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if ann.startswith("int"):
            return int(raw) if raw.strip().lower() not in ("", "none") else None
        if ann.startswith("float"):
            return float(raw)
    except ValueError as exc:
        raise InvalidArgument(f"{ENV_PREFIX}{name.upper()}={raw!r} is not a valid {ann}") from exc
    return raw or None if "None" in ann else raw


@dataclass
class IngestSummary:
    sessions: int = 0
    turns: int = 0
    windows: int = 0
    skipped_windows: int = 0
    units_extracted: int = 0
    units_synthesized: int = 0
    units_retired: int = 0
    config: dict[str, Any] = field(default_factory=dict)

    @property
    def units_after_synthesis(self) -> int:
        return self.units_extracted - self.units_retired + self.units_synthesized

    def add(self, other: "IngestSummary") -> None:
        for name in ("sessions", "turns", "windows", "skipped_windows", "units_extracted",
                     "units_synthesized", "units_retired"):
            setattr(self, name, getattr(self, name) + getattr(other, name))

    def to_dict(self) -> dict[str, Any]:
        return {
            "sessions": self.sessions,
            "turns": self.turns,
            "windows": self.windows,
            "skipped_windows": self.skipped_windows,
            "units_extracted": self.units_extracted,
            "units_synthesized": self.units_synthesized,
            "units_retired": self.units_retired,
            "units_after_synthesis": self.units_after_synthesis,
            "config": self.config,
        }


@dataclass
class QueryTrace:
    question: str
    plan: RetrievalPlan
    result: RetrievalResult
    merged: ContextBundle
    context: ContextBundle
    answer: Answer | None = None

    @property
    def limit(self) -> int:
        return self.result.limit

    @property
    def token_count(self) -> int:
        return self.context.token_count

    @property
    def degraded(self) -> bool:
        return self.result.degraded or (self.answer is not None and self.answer.degraded)

    def to_dict(self) -> dict[str, Any]:
        out = {
            "question": self.question,
            "plan": self.plan.to_dict(),
            "limit": self.limit,
            "views": {
                "sem": [[uid, round(score, 6)] for uid, score in self.result.sem],
                "lex": [[uid, round(score, 6)] for uid, score in self.result.lex],
                "sym": list(self.result.sym),
            },
            "merged_ids": self.merged.ids,
            "context": self.context.to_dict(),
            "token_count": self.token_count,
            "degraded": self.degraded,
        }
        if self.answer is not None:
            out["answer"] = self.answer.text
        return out

    def render(self) -> str:
        p = self.plan
        lines = [
            f"question: {self.question}",
            f"plan: complexity={p.complexity} n={self.limit} rationale={p.rationale!r}",
            f"  q_sem: {p.semantic_query}",
            f"  q_lex: {', '.join(p.lexical_keywords) or '-'}",
            f"  q_sym: time={p.to_dict()['temporal_constraints'] or '-'} "
            f"entities={sorted(p.entity_filters) if p.entity_filters else '-'}",
            "R_sem: " + (" ".join(f"{u}({s:.3f})" for u, s in self.result.sem) or "-"),
            "R_lex: " + (" ".join(f"{u}({s:.3f})" for u, s in self.result.lex) or "-"),
            "R_sym: " + (" ".join(self.result.sym) or "-"),
            f"merged: {len(self.merged.units)} units, {self.merged.token_count} tokens",
            f"context ({self.context.token_count} tokens"
            + (", budget exceeded" if self.context.budget_exceeded else "") + "):",
        ]
        lines += [f"  {u.id} {line}" for u, line in zip(self.context.units, self.context.rendered.split("\n"))]
        if self.degraded:
            lines.append("degraded: true")
        if self.answer is not None:
            lines.append(f"answer: {self.answer.text}")
        return "\n".join(lines)


class MemoryEngine:
    def __init__(self, config: EngineConfig | None = None, *, extractor=None, synthesizer=None,
                 planner=None, answerer=None, embedder=None, chat_provider=None,
                 count_tokens: Callable[[str], int] = whitespace_count,
                 clock: Callable[[], str] | None = None, now: Callable[[], datetime] | None = None):
        self.config = config or EngineConfig()
        cfg = self.config
        chat_cfg = ChatProviderConfig(model=cfg.chat_model, temperature=cfg.temperature,
                                      max_retries=cfg.max_retries)
        remote = cfg.provider == "remote"
        if remote and chat_provider is None:
            chat_provider = RemoteChatProvider()
        heuristic = HeuristicPlanner(cfg.n_min, cfg.n_max, now=now)
        if extractor is None:
            extractor = LLMExtractor(chat_provider, chat_cfg) if remote else RuleBasedExtractor()
        if not cfg.compression:
            extractor = RawChunkExtractor()
        self.extractor = extractor
        self.synthesizer = synthesizer or (LLMSynthesizer(chat_provider, chat_cfg) if remote else ConcatSynthesizer())
        self.planner = planner or (LLMPlanner(chat_provider, chat_cfg, heuristic) if remote else heuristic)
        self.answerer = answerer or (LLMAnswerer(chat_provider, chat_cfg) if remote else FallbackAnswerer())
        if embedder is None:
            embedder = RemoteEmbedder(cfg.embedding_dim) if remote else HashingEmbedder(cfg.embedding_dim)
        if embedder.dimension != cfg.embedding_dim:
            raise InvalidArgument(f"embedder dimension {embedder.dimension} != configured {cfg.embedding_dim}")
        self.embedder = CachedEmbedder(embedder)
        self.count_tokens = count_tokens
        store_kwargs = {"clock": clock} if clock else {}
        self.store = MemoryStore(cfg.embedding_dim, cfg.store_path, **store_kwargs)
        self._session_locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    # -- ingestion -------------------------------------------------------------

    @contextmanager
    def session_lock(self, session_id: str, timeout: float = -1) -> Iterator[None]:
        with self._locks_guard:
            lock = self._session_locks.setdefault(session_id, threading.Lock())
        if not lock.acquire(timeout=timeout):
            raise TimeoutError(f"session {session_id!r} is busy")
        try:
            yield
        finally:
            lock.release()

    def history_digest(self, session_id: str) -> str:
        units = self.store.live_units(session_id)[-self.config.history_units:]
        return "\n".join(u.content for u in units)

    def _extract(self, window: Window, history: str) -> list[UnitDraft] | None:
        """Extract and sanitize; one retry on malformed output, then skip (None)."""
        for attempt in (1, 2):
            try:
                drafts = self.extractor.extract(window, history)
                return [sanitize_draft(d, window, absolute=self.config.compression) for d in drafts]
            except ExtractionFailed as exc:
                logger.warning("window %s turns %s attempt %d: %s",
                               window.session_id, window.turn_range, attempt, exc)
        logger.warning("skipping window %s turns %s", window.session_id, window.turn_range)
        return None

    def ingest_session(self, session: Session, timeout: float = -1) -> IngestSummary:
        summary = IngestSummary(sessions=1, turns=len(session.turns))
        with self.session_lock(session.session_id, timeout):
            seen = self.store.session_keys(session.session_id)
            for window in segment(session.turns, self.config.window_size, self.config.stride):
                summary.windows += 1
                history = self.history_digest(session.session_id)
                drafts = self._extract(window, history)
                if drafts is None:
                    summary.skipped_windows += 1
                    continue
                fresh = dedup_drafts(drafts, set(seen))
                try:
                    items = [(self._unit_from_draft(d, window), self.embedder.embed(d.content)) for d in fresh]
                except (ProviderError, InvalidArgument) as exc:
                    logger.warning("skipping window %s turns %s: %s", window.session_id, window.turn_range, exc)
                    summary.skipped_windows += 1
                    continue
                self.store.add_units(items)
                seen.update(self.store.session_keys(session.session_id))
                summary.units_extracted += len(items)
                if self.config.synthesis and items:
                    outcome = consolidate(self.store, session.session_id, [u for u, _ in items],
                                          self.synthesizer, self.embedder, context=history)
                    summary.units_synthesized += outcome.created
                    summary.units_retired += outcome.retired
        summary.config = self.config.to_dict()
        return summary

    def _unit_from_draft(self, draft: UnitDraft, window: Window) -> MemoryUnit:
        unit = self.store.make_unit(
            content=draft.content,
            entities=draft.entities,
            topic=draft.topic,
            timestamp=draft.timestamp,
            salience=draft.salience,
            session_id=window.session_id,
            source_turns=window.turn_range,
        )
        validate_unit(unit, allow_relative=not self.config.compression)
        return unit

    def ingest(self, sessions: Sequence[Session]) -> IngestSummary:
        total = IngestSummary()
        for session in sessions:
            total.add(self.ingest_session(session))
        total.config = self.config.to_dict()
        return total

    def ingest_turns(self, session_id: str, turns: Sequence[dict], start_time: str | None = None,
                     timeout: float = -1) -> IngestSummary:
        """Append raw ``{speaker, text, timestamp?}`` turns to a session and run the pipeline."""
        if not turns:
            return IngestSummary(config=self.config.to_dict())
        first = turns[0].get("timestamp") if isinstance(turns[0], dict) else None
        start = start_time or first
        if not start:
            raise InvalidArgument("need start_time or a timestamp on the first turn")
        next_index = max((u.source_turns[1] + 1 for u in self.store.all_units()
                          if u.session_id == session_id), default=0)
        session = build_session(session_id, start, turns, first_index=next_index)
        return self.ingest_session(session, timeout)

    # -- query path ------------------------------------------------------------

    def plan(self, question: str) -> RetrievalPlan:
        if not question.strip():
            raise InvalidArgument("question must be non-empty")
        if self.config.planning:
            return self.planner.plan(question, "")
        return RetrievalPlan(
            complexity="LOW",
            rationale="planning disabled: fixed depth",
            lexical_keywords=tuple(tokenize(question)),
            temporal_constraints=None,
            semantic_query=question.strip(),
            entity_filters=None,
            limit=self.config.fixed_depth,
        )

    def query(self, question: str, limit: int | None = None) -> QueryTrace:
        plan = self.plan(question)
        # an explicit per-call limit (the k-sweep) is taken as is; the configured override is clamped
        n = limit
        if n is None and self.config.limit_override is not None:
            n = depth_to_limit(plan.complexity, self.config.limit_override, self.config.n_min, self.config.n_max)
        result = execute(plan, self.store, self.embedder, n)
        merged = merge(result.sem, result.lex, result.sym, self.store.get, self.count_tokens)
        context = build_context(merged, self.config.token_budget, self.count_tokens)
        return QueryTrace(question=question, plan=plan, result=result, merged=merged, context=context)

    def answer(self, question: str, limit: int | None = None) -> QueryTrace:
        trace = self.query(question, limit)
        trace.answer = answer_query(question, trace.context, self.answerer)
        return trace

    def stats(self) -> dict[str, Any]:
        out = self.store.stats()
        out["config"] = self.config.to_dict()
        return out
