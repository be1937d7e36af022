from pathlib import Path

import numpy as np
import pytest

from atommem.engine import EngineConfig, MemoryEngine
from atommem.ingestion import build_session, load_transcript
from atommem.models import MemoryUnit
from atommem.store import MemoryStore

DATA = Path(__file__).parent / "data"
DIM = 64


@pytest.fixture(scope="session")
def transcript_path() -> Path:
    return DATA / "transcript.json"


@pytest.fixture(scope="session")
def qa_path() -> Path:
    return DATA / "qa.jsonl"


@pytest.fixture(scope="session")
def sessions(transcript_path):
    return load_transcript(transcript_path)


@pytest.fixture
def config() -> EngineConfig:
    return EngineConfig(embedding_dim=DIM)


@pytest.fixture(scope="session")
def ingested(sessions) -> MemoryEngine:
    """Engine with the scripted corpus ingested; treat as read-only."""
    engine = MemoryEngine(EngineConfig(embedding_dim=DIM))
    engine.ingest(sessions)
    return engine


def make_unit(uid: str, content: str, *, ts: str = "2024-01-01T00:00:00Z", entities=("X",),
              topic: str = "misc", salience: str = "medium", session: str = "s1", synthesized=False) -> MemoryUnit:
    return MemoryUnit(id=uid, content=content, entities=frozenset(entities), topic=topic, timestamp=ts,
                      salience=salience, session_id=session, source_turns=(0, 0),
                      created_at="2024-01-01T00:00:00Z", synthesized=synthesized)


def random_unit_vector(rng: np.random.Generator, dim: int = DIM) -> np.ndarray:
    v = rng.normal(size=dim)
    return v / np.linalg.norm(v)


def coffee_session(session_id: str = "c1"):
    turns = [
        {"speaker": "User", "text": "Hi!"},
        {"speaker": "Assistant", "text": "Hello!"},
        {"speaker": "User", "text": "I prefer oat milk."},
        {"speaker": "User", "text": "I want coffee."},
        {"speaker": "User", "text": "I like it hot."},
        {"speaker": "Assistant", "text": "Noted."},
    ]
    return build_session(session_id, "2024-03-01T08:00:00Z", turns)


__all__ = ["DIM", "make_unit", "random_unit_vector", "coffee_session", "MemoryStore"]


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
