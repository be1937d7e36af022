"""Agent memory engine: atomic memory units, a three-layer index and planned retrieval."""

from atommem.engine import EngineConfig, IngestSummary, MemoryEngine, QueryTrace
from atommem.errors import (
    AtomMemError,
    ConflictError,
    ExtractionFailed,
    InvalidArgument,
    InvalidInput,
    NotFoundError,
    ProviderError,
    StoreLocked,
)
from atommem.ingestion import load_transcript, parse_transcript
from atommem.models import DialogueTurn, MemoryUnit, Session, Window
from atommem.retrieval import SENTINEL, ContextBundle, RetrievalPlan

__version__ = "0.1.0"

__all__ = [
    "EngineConfig", "IngestSummary", "MemoryEngine", "QueryTrace", "AtomMemError", "ConflictError",
    "ExtractionFailed", "InvalidArgument", "InvalidInput", "NotFoundError", "ProviderError", "StoreLocked",
    "load_transcript", "parse_transcript", "DialogueTurn", "MemoryUnit", "Session", "Window", "SENTINEL",
    "ContextBundle", "RetrievalPlan",
]
