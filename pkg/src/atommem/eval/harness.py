"""Desk-scale evaluation: ingest a transcript, answer a QA set, aggregate metrics."""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Sequence

from atommem.engine import EngineConfig, MemoryEngine
from atommem.errors import InvalidInput
from atommem.eval.metrics import bleu1, f1
from atommem.models import Session

CATEGORIES = ("MultiHop", "Temporal", "OpenDomain", "SingleHop")

EngineFactory = Callable[[EngineConfig], MemoryEngine]


@dataclass(frozen=True)
class QAItem:
    question: str
    answer: str
    category: str

    def __post_init__(self):
        if not self.question.strip():
            raise InvalidInput("QA item has an empty question")
        if not self.answer.strip():
            raise InvalidInput("QA item has an empty gold answer")
        if self.category not in CATEGORIES:
            raise InvalidInput(f"unknown QA category {self.category!r}; expected one of {', '.join(CATEGORIES)}")


def _qa_from_record(rec: Any, line: int, path: str | None) -> QAItem:
    if not isinstance(rec, dict):
        raise InvalidInput("QA record is not an object", line=line, path=path)
    try:
        return QAItem(str(rec["question"]), str(rec["answer"]), str(rec["category"]))
    except KeyError as exc:
        raise InvalidInput(f"QA record is missing {exc.args[0]!r}", line=line, path=path) from None
    except InvalidInput as exc:
        raise InvalidInput(str(exc), line=line, path=path) from None


def parse_qa(text: str, path: str | None = None) -> list[QAItem]:
    """Accept JSON Lines (one record per line) or a single JSON array."""
    stripped = text.strip()
    if not stripped:
        return []
    if stripped.startswith("["):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InvalidInput(exc.msg, line=exc.lineno, path=path) from exc
        # report the line each record starts on, approximately, by position in the array
        return [_qa_from_record(rec, i + 1, path) for i, rec in enumerate(data)]
    items = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise InvalidInput(exc.msg, line=lineno, path=path) from exc
        items.append(_qa_from_record(rec, lineno, path))
    return items


def load_qa(path: str | Path) -> list[QAItem]:
    path = Path(path)
    return parse_qa(path.read_text(encoding="utf-8"), str(path))


@dataclass
class ItemResult:
    question: str
    category: str
    gold: str
    prediction: str
    f1: float
    bleu1: float
    token_count: int
    limit: int
    context_ids: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "category": self.category,
            "gold": self.gold,
            "prediction": self.prediction,
            "f1": round(self.f1, 6),
            "bleu1": round(self.bleu1, 6),
            "token_count": self.token_count,
            "limit": self.limit,
            "context_ids": self.context_ids,
        }


def _mean(values: Sequence[float]) -> float:
    return sum(values) / len(values) if values else 0.0


@dataclass
class EvalReport:
    items: list[ItemResult]
    config: dict[str, Any]
    store: dict[str, Any]
    timings: dict[str, float] = field(default_factory=dict)

    def category_scores(self) -> dict[str, dict[str, float]]:
        out = {}
        for cat in CATEGORIES:
            rows = [r for r in self.items if r.category == cat]
            out[cat] = {"f1": _mean([r.f1 for r in rows]), "bleu1": _mean([r.bleu1 for r in rows]), "count": len(rows)}
        return out

    @property
    def average_f1(self) -> float:
        return _mean([r.f1 for r in self.items])

    @property
    def average_bleu1(self) -> float:
        return _mean([r.bleu1 for r in self.items])

    @property
    def token_cost(self) -> float:
        return _mean([r.token_count for r in self.items])

    def to_dict(self) -> dict[str, Any]:
        """Everything except wall-clock timings, which vary run to run."""
        cats = self.category_scores()
        return {
            "categories": {c: {k: round(v, 6) if k != "count" else v for k, v in s.items()} for c, s in cats.items()},
            "average": {"f1": round(self.average_f1, 6), "bleu1": round(self.average_bleu1, 6)},
            "token_cost": round(self.token_cost, 3),
            "items": [r.to_dict() for r in self.items],
            "store": self.store,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _engine_for(config: EngineConfig, factory: EngineFactory | None) -> MemoryEngine:
    # evaluation always runs against a fresh in-memory store
    config = config.replace(store_path=None)
    return factory(config) if factory else MemoryEngine(config)


def _score(engine: MemoryEngine, items: Sequence[QAItem], limit: int | None, workers: int) -> list[ItemResult]:
    def one(item: QAItem) -> ItemResult:
        trace = engine.answer(item.question, limit)
        prediction = trace.answer.text
        return ItemResult(
            question=item.question,
            category=item.category,
            gold=item.answer,
            prediction=prediction,
            f1=f1(prediction, item.answer),
            bleu1=bleu1(prediction, item.answer),
            token_count=trace.token_count,
            limit=trace.limit,
            context_ids=trace.context.ids,
        )

    if workers <= 1 or len(items) <= 1:
        return [one(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, items))


def run_eval(sessions: Sequence[Session], items: Sequence[QAItem], config: EngineConfig | None = None, *,
             engine_factory: EngineFactory | None = None, workers: int = 4,
             limit: int | None = None) -> EvalReport:
    """Ingest every session, then answer every question (two-phase)."""
    config = config or EngineConfig()
    engine = _engine_for(config, engine_factory)
    t0 = time.perf_counter()
    engine.ingest(sessions)
    t1 = time.perf_counter()
    results = _score(engine, items, limit, workers)
    t2 = time.perf_counter()
    stats = engine.stats()
    stats.pop("config", None)
    return EvalReport(
        items=results,
        config=engine.config.to_dict(),
        store=stats,
        timings={
            "construction_s": t1 - t0,
            "retrieval_s": t2 - t1,
            "retrieval_per_item_s": (t2 - t1) / len(items) if items else 0.0,
        },
    )


@dataclass(frozen=True)
class SweepRow:
    k: int
    f1: float
    bleu1: float
    token_cost: float


def sensitivity_sweep(sessions: Sequence[Session], items: Sequence[QAItem], ks: Sequence[int] = (1, 3, 5, 10, 20),
                      config: EngineConfig | None = None, *, engine_factory: EngineFactory | None = None,
                      workers: int = 4) -> list[SweepRow]:
    """Average scores with the per-view limit fixed to each k (bypasses planning depth)."""
    if any(k <= 0 for k in ks):
        raise ValueError("k values must be positive")
    engine = _engine_for(config or EngineConfig(), engine_factory)
    engine.ingest(sessions)
    rows = []
    for k in ks:
        results = _score(engine, items, k, workers)
        rows.append(SweepRow(
            k=k,
            f1=_mean([r.f1 for r in results]),
            bleu1=_mean([r.bleu1 for r in results]),
            token_cost=_mean([r.token_count for r in results]),
        ))
    return rows


ABLATIONS = (
    ("w/o compression", {"compression": False}),
    ("w/o synthesis", {"synthesis": False}),
    ("w/o planning", {"planning": False}),
)


@dataclass(frozen=True)
class AblationRow:
    name: str
    f1: float
    bleu1: float
    token_cost: float
    live_units: int
    limits: tuple[int, ...]
    diff_pct: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "f1": round(self.f1, 6),
            "bleu1": round(self.bleu1, 6),
            "token_cost": round(self.token_cost, 3),
            "live_units": self.live_units,
            "limits": list(self.limits),
            "diff_pct": round(self.diff_pct, 3),
        }


def _ablation_row(name: str, report: EvalReport, baseline_f1: float) -> AblationRow:
    diff = (report.average_f1 - baseline_f1) / baseline_f1 * 100.0 if baseline_f1 else 0.0
    return AblationRow(
        name=name,
        f1=report.average_f1,
        bleu1=report.average_bleu1,
        token_cost=report.token_cost,
        live_units=report.store["live"],
        limits=tuple(r.limit for r in report.items),
        diff_pct=diff,
    )


def ablation_table(sessions: Sequence[Session], items: Sequence[QAItem], config: EngineConfig | None = None, *,
                   engine_factory: EngineFactory | None = None, workers: int = 4,
                   baseline: EvalReport | None = None) -> list[AblationRow]:
    """Full pipeline row followed by one row per disabled stage, with Diff% against full."""
    config = config or EngineConfig()
    full = baseline or run_eval(sessions, items, config, engine_factory=engine_factory, workers=workers)
    rows = [_ablation_row("full", full, full.average_f1)]
    for name, changes in ABLATIONS:
        report = run_eval(sessions, items, config.replace(**changes), engine_factory=engine_factory, workers=workers)
        rows.append(_ablation_row(name, report, full.average_f1))
    return rows
