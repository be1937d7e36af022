import json
import threading

import numpy as np
import pytest

from atommem.errors import ConflictError, InvalidArgument, NotFoundError
from atommem.index import SymbolicPredicate
from atommem.store import MemoryStore

from conftest import DIM, random_unit_vector


def _fill(store, n=3, rng=None):
    rng = rng or np.random.default_rng(0)
    units = []
    for i in range(n):
        u = store.make_unit(content=f"Alice item{i}", entities=["Alice"], topic="t",
                            timestamp=f"2024-01-0{i + 1}T00:00:00Z", salience="medium",
                            session_id="s1", source_turns=(i, i))
        store.add_units([(u, random_unit_vector(rng))])
        units.append(u)
    return units


def test_ids_are_sequential_and_add_conflicts():
    store = MemoryStore(DIM)
    units = _fill(store)
    assert [u.id for u in units] == ["m000001", "m000002", "m000003"]
    with pytest.raises(ConflictError):
        store.add_units([(units[0], np.ones(DIM))])


def test_tombstone_semantics():
    store = MemoryStore(DIM)
    units = _fill(store)
    vec = store.index.dense.vector(units[0].id)
    store.tombstone(units[0].id)
    assert units[0].id not in {u for u, _ in store.search_dense(vec, 5)}
    assert len(store.search_symbolic(SymbolicPredicate(), 10)) == 2
    with pytest.raises(NotFoundError):
        store.tombstone(units[0].id)
    with pytest.raises(NotFoundError):
        store.tombstone("m999999")
    assert store.stats()["tombstoned"] == 1


def test_persistence_round_trip(tmp_path):
    path = tmp_path / "units.jsonl"
    store = MemoryStore(DIM, path)
    units = _fill(store)
    store.tombstone(units[1].id)
    reopened = MemoryStore(DIM, path)
    assert [u.id for u in reopened.live_units()] == [units[0].id, units[2].id]
    assert reopened.get(units[1].id).tombstoned
    assert reopened.index.sizes() == {"dense": 2, "lexical": 2, "symbolic": 2}
    assert reopened.new_id() == "m000004"
    q = store.index.dense.vector(units[2].id)
    assert reopened.search_dense(q, 3) == store.search_dense(q, 3)


def test_truncated_trailing_record_is_ignored(tmp_path):
    path = tmp_path / "units.jsonl"
    store = MemoryStore(DIM, path)
    _fill(store, 2)
    with open(path, "a") as fh:
        fh.write('{"id": "m000003", "content": "half')
    reopened = MemoryStore(DIM, path)
    assert len(reopened.live_units()) == 2


def test_corrupt_middle_record_is_an_error(tmp_path):
    path = tmp_path / "units.jsonl"
    store = MemoryStore(DIM, path)
    _fill(store, 2)
    lines = path.read_text().splitlines()
    path.write_text(lines[0] + "\n{broken\n" + lines[1] + "\n")
    with pytest.raises(InvalidArgument):
        MemoryStore(DIM, path)


def test_replace_writes_one_append(tmp_path):
    path = tmp_path / "units.jsonl"
    store = MemoryStore(DIM, path)
    units = _fill(store)
    merged = store.make_unit(content="Alice merged", entities=["Alice"], topic="t", timestamp="2024-01-03T00:00:00Z",
                             salience="high", session_id="s1", source_turns=(0, 2), synthesized=True)
    before = len(path.read_text().splitlines())
    store.replace([(merged, np.ones(DIM))], [u.id for u in units])
    records = [json.loads(line) for line in path.read_text().splitlines()[before:]]
    assert [r["id"] for r in records] == [merged.id] + [u.id for u in units]
    assert [u.id for u in store.live_units()] == [merged.id]
    assert store.stats()["synthesized_live"] == 1


def test_replace_rejects_dead_ids_without_side_effects():
    store = MemoryStore(DIM)
    units = _fill(store)
    merged = store.make_unit(content="x", entities=["A"], topic="t", timestamp="2024-01-03T00:00:00Z",
                             salience="high", session_id="s1", source_turns=(0, 2))
    with pytest.raises(NotFoundError):
        store.replace([(merged, np.ones(DIM))], [units[0].id, "m999"])
    assert len(store.live_units()) == 3 and merged.id not in store.units


def test_readers_never_see_half_a_replace():
    store = MemoryStore(DIM)
    rng = np.random.default_rng(5)
    units = _fill(store, 2, rng)
    stop = threading.Event()
    seen = []

    def reader():
        while not stop.is_set():
            seen.append(len(store.search_symbolic(SymbolicPredicate(), 50)))

    threads = [threading.Thread(target=reader) for _ in range(3)]
    for t in threads:
        t.start()
    live = [u.id for u in units]
    for i in range(200):
        new = store.make_unit(content=f"v{i}", entities=["A"], topic="t", timestamp="2024-02-01T00:00:00Z",
                              salience="low", session_id="s1", source_turns=(0, 0))
        new2 = store.make_unit(content=f"w{i}", entities=["A"], topic="t", timestamp="2024-02-01T00:00:00Z",
                               salience="low", session_id="s1", source_turns=(0, 0))
        store.replace([(new, random_unit_vector(rng)), (new2, random_unit_vector(rng))], live)
        live = [new.id, new2.id]
    stop.set()
    for t in threads:
        t.join()
    assert seen and set(seen) == {2}


def test_stats_on_fresh_store():
    stats = MemoryStore(DIM).stats()
    assert stats["units"] == stats["live"] == stats["tombstoned"] == 0
    assert stats["layers"] == {"dense": 0, "lexical": 0, "symbolic": 0}
