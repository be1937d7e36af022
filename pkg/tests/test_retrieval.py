from datetime import datetime, timezone

import pytest

from atommem.errors import ProviderError
from atommem.providers import (
    CallableChatProvider,
    ChatProviderConfig,
    FailingEmbedder,
    HashingEmbedder,
    ScriptedChatProvider,
)
from atommem.retrieval import (
    SENTINEL,
    ContextBundle,
    FallbackAnswerer,
    HeuristicPlanner,
    LLMAnswerer,
    LLMPlanner,
    answer,
    build_context,
    coerce_plan,
    depth_to_limit,
    execute,
    merge,
    render_units,
)
from atommem.store import MemoryStore

from conftest import DIM, make_unit

NOW = datetime(2024, 6, 15, 12, 0, tzinfo=timezone.utc)


def planner():
    return HeuristicPlanner(now=lambda: NOW)


def test_hawaii_query_is_high_complexity():
    plan = planner().plan("Do you remember what I got the last time I went to Hawaii?")
    assert plan.complexity == "HIGH" and plan.limit == 20
    assert "hawaii" in plan.lexical_keywords
    assert plan.entity_filters == frozenset({"Hawaii"})


def test_simple_lookup_is_low():
    plan = planner().plan("What is Bob's surname?")
    assert plan.complexity == "LOW" and plan.limit == 3


def test_temporal_constraints_from_query():
    plan = planner().plan("What did Sarah paint between 2024-03-01 and 2024-03-14?")
    start, end = plan.temporal_constraints
    assert start == datetime(2024, 3, 1, tzinfo=timezone.utc)
    assert end == datetime(2024, 3, 14, 23, 59, 59, tzinfo=timezone.utc)
    plan = planner().plan("What happened yesterday?")
    assert plan.temporal_constraints[0] == datetime(2024, 6, 14, tzinfo=timezone.utc)


@pytest.mark.parametrize("complexity, override, expected", [
    ("LOW", None, 3), ("HIGH", None, 20), ("LOW", 50, 20), ("HIGH", 0, 3), ("LOW", 7, 7),
])
def test_depth_to_limit(complexity, override, expected):
    assert depth_to_limit(complexity, override) == expected


def test_coerce_plan_handles_garbage():
    base = planner().plan("What is Bob's surname?")
    assert coerce_plan("nope", base) is base
    plan = coerce_plan({"complexity": "EXTREME", "limit": "1e9", "lexical_keywords": [1, 2],
                        "temporal_constraints": {"start": "2024-02-01", "end": "2024-01-01"},
                        "semantic_query": ""}, base)
    assert plan.limit == 20 and plan.complexity == "LOW"
    assert plan.lexical_keywords == base.lexical_keywords and plan.temporal_constraints is None
    assert coerce_plan({"complexity": "high", "n": -4}, base).limit == 3


def test_llm_planner_reply_and_fallback():
    provider = ScriptedChatProvider()
    p = LLMPlanner(provider, ChatProviderConfig(max_retries=0), planner())
    q = "When did Bob move?"
    provider.register(p.build_prompt(q), '{"complexity": "HIGH", "retrieval_rationale": "r", '
                                         '"lexical_keywords": ["Bob", "move"], "semantic_query": "Bob moved"}')
    plan = p.plan(q)
    assert plan.limit == 20 and plan.semantic_query == "Bob moved"
    fallback = p.plan("Where does Ann live?")  # unregistered prompt: provider failure
    assert fallback == planner().plan("Where does Ann live?")


def test_llm_planner_survives_non_json():
    p = LLMPlanner(CallableChatProvider(lambda prompt: "I think it's complex"), fallback=planner())
    assert 3 <= p.plan("How many times did Ann call before May?").limit <= 20


def _store(units):
    store = MemoryStore(DIM)
    emb = HashingEmbedder(DIM)
    store.add_units([(u, emb.embed(u.content)) for u in units])
    return store, emb


def test_execute_single_keyword_hit_and_empty_store():
    units = [make_unit("a", "Alice likes tea"), make_unit("b", "Bob rides bikes"), make_unit("c", "Carol sings")]
    store, emb = _store(units)
    plan = planner().plan("Who rides?")
    res = execute(plan, store, emb)
    assert [u for u, _ in res.lex] == ["b"]
    empty = execute(plan, MemoryStore(DIM), emb)
    assert (empty.sem, empty.lex, empty.sym) == ([], [], [])


def test_execute_planted_unit_in_all_views():
    units = [make_unit("a", "Sarah painted a sunset", entities=("Sarah",), ts="2024-03-02T10:00:00Z"),
             make_unit("b", "Tom fixed the car", entities=("Tom",), ts="2024-03-03T10:00:00Z"),
             make_unit("c", "Tom walked the dog", entities=("Tom",), ts="2024-05-03T10:00:00Z")]
    store, emb = _store(units)
    res = execute(planner().plan("What did Sarah paint in March 2024?"), store, emb)
    assert "a" in [u for u, _ in res.sem] and "a" in [u for u, _ in res.lex] and res.sym == ["a"]


def test_execute_degrades_without_embeddings():
    store, _ = _store([make_unit("a", "Alice likes tea")])
    res = execute(planner().plan("Does Alice like tea?"), store, FailingEmbedder(DIM))
    assert res.degraded and res.sem == [] and [u for u, _ in res.lex] == ["a"]


def _lookup(ids):
    return {uid: make_unit(uid, f"fact {uid}", ts=f"2024-01-{i + 1:02d}T00:00:00Z") for i, uid in enumerate(ids)}


def test_merge_examples():
    units = _lookup("abcdefg")
    assert len(merge(["a", "b"], ["c", "d"], ["e", "f"], units).units) == 6
    full = merge(["a"], ["a"], ["a"], units)
    assert full.ids == ["a"] and set(full.provenance["a"]) == {"sem", "lex", "sym"}
    assert merge(["a", "b"], [("b", 1.0), ("c", 0.5)], ["c", "d"], units).ids == ["a", "b", "c", "d"]


def test_merge_orders_chronologically():
    units = _lookup("abc")
    assert merge(["c", "a"], ["b"], [], units).ids == ["a", "b", "c"]


def _sized_units(n, words):
    return [make_unit(f"u{i}", " ".join(["w"] * (words - 1)), ts=f"2024-01-{i + 1:02d}T00:00:00Z") for i in range(n)]


def test_budget_keeps_newest_that_fit():
    units = _sized_units(10, 100)  # each rendered line is 100 tokens: timestamp + 99 words
    lookup = {u.id: u for u in units}
    bundle = merge([u.id for u in units], [], [], lookup)
    assert bundle.token_count == 1000
    ctx = build_context(bundle, 350)
    assert len(ctx.units) == 3 and ctx.token_count == 300 and not ctx.budget_exceeded
    assert build_context(bundle, 5000) == bundle


def test_budget_never_drops_most_relevant():
    units = _sized_units(4, 100)
    lookup = {u.id: u for u in units}
    bundle = merge(["u0"], ["u0"], ["u1", "u2", "u3"], lookup)
    ctx = build_context(bundle, 250)
    assert "u0" in ctx.ids and len(ctx.units) == 2
    floor = build_context(bundle, 10)
    assert floor.ids == ["u0"] and floor.budget_exceeded


def test_token_count_matches_rendered_context():
    units = _lookup("abc")
    ctx = build_context(merge(["a", "b"], ["c"], [], units), 600)
    assert ctx.token_count == len(ctx.rendered.split())
    assert ctx.rendered == render_units(ctx.units)


def test_fallback_answerer():
    empty = ContextBundle(units=(), provenance={}, token_count=0)
    assert answer("anything?", empty).text == SENTINEL
    one = merge(["a"], [], [], {"a": make_unit("a", "Alice likes green tea")})
    assert answer("What tea does Alice like?", one).text == "Alice likes green tea"
    conflicting = {"old": make_unit("old", "Bob lives in Paris", ts="2023-01-01T00:00:00Z"),
                   "new": make_unit("new", "Bob lives in Rome", ts="2024-01-01T00:00:00Z")}
    bundle = merge(["old", "new"], [], [], conflicting)
    assert FallbackAnswerer().answer("Where does Bob live?", bundle).text == "Bob lives in Rome"


def test_llm_answerer_and_sentinel_on_failure():
    units = {"a": make_unit("a", "Alice likes tea"), "s": make_unit("s", "Alice drinks; Alice likes tea",
                                                                   synthesized=True)}
    bundle = merge(["a", "s"], [], [], units)
    provider = ScriptedChatProvider()
    ans = LLMAnswerer(provider, ChatProviderConfig(max_retries=0))
    prompt = ans.build_prompt("What does Alice like?", bundle)
    assert "Alice drinks; Alice likes tea" in prompt
    provider.register(prompt, "Tea")
    assert ans.answer("What does Alice like?", bundle).text == "Tea"
    provider.register(prompt, ProviderError("down"))
    failed = ans.answer("What does Alice like?", bundle)
    assert failed.text == SENTINEL and failed.degraded
