"""HTTP service exposing one engine: ingest-turns, query, answer, stats.

Handlers are synchronous, so FastAPI runs them on its worker pool: queries
proceed concurrently, while ingestion is serialized per session by the
engine's session lock.
"""

from __future__ import annotations

from typing import Any, Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from atommem.engine import MemoryEngine
from atommem.errors import ConflictError, InvalidArgument, InvalidInput, NotFoundError, ProviderError

WRITE_LOCK_TIMEOUT = 5.0


class TurnIn(BaseModel):
    speaker: str = Field(min_length=1)
    text: str
    timestamp: Optional[str] = None


class IngestTurnsRequest(BaseModel):
    session_id: str = Field(min_length=1)
    start_time: Optional[str] = None
    turns: list[TurnIn]


class QueryRequest(BaseModel):
    question: str = Field(min_length=1)
    limit: Optional[int] = Field(default=None, ge=1)


def create_app(engine: MemoryEngine, write_timeout: float = WRITE_LOCK_TIMEOUT) -> FastAPI:
    app = FastAPI(title="atommem", version="0.1.0")
    app.state.engine = engine

    @app.exception_handler(InvalidArgument)
    @app.exception_handler(InvalidInput)
    async def _bad_request(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": "invalid_input", "detail": str(exc)})

    @app.exception_handler(NotFoundError)
    async def _not_found(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=404, content={"error": "not_found", "detail": str(exc)})

    @app.exception_handler(ConflictError)
    @app.exception_handler(TimeoutError)
    async def _conflict(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=409, headers={"Retry-After": "1"},
                            content={"error": "write_conflict", "detail": str(exc)})

    @app.exception_handler(ProviderError)
    async def _provider(request: Request, exc: Exception) -> JSONResponse:
        return JSONResponse(status_code=502, content={"error": "provider_failure", "detail": str(exc)})

    @app.post("/ingest-turns")
    def ingest_turns(req: IngestTurnsRequest) -> dict[str, Any]:
        turns = [t.model_dump(exclude_none=True) for t in req.turns]
        summary = engine.ingest_turns(req.session_id, turns, req.start_time, timeout=write_timeout)
        return summary.to_dict()

    @app.post("/query")
    def query(req: QueryRequest) -> dict[str, Any]:
        # same call as the CLI query command, so both surfaces return identical traces
        return engine.answer(req.question, req.limit).to_dict()

    @app.post("/answer")
    def answer(req: QueryRequest) -> dict[str, Any]:
        trace = engine.answer(req.question, req.limit)
        return {
            "answer": trace.answer.text,
            "degraded": trace.degraded,
            "token_count": trace.token_count,
            "context": trace.context.rendered,
        }

    @app.get("/stats")
    def stats() -> dict[str, Any]:
        return engine.stats()

    return app
