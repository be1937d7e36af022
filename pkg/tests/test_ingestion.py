import json

import pytest

from atommem import prompts
from atommem.errors import ExtractionFailed, InvalidArgument, InvalidInput
from atommem.ingestion import (
    LLMExtractor,
    RawChunkExtractor,
    RuleBasedExtractor,
    build_session,
    dedup_drafts,
    load_transcript,
    parse_extraction_reply,
    parse_transcript,
    sanitize_draft,
    segment,
)
from atommem.models import UnitDraft, Window
from atommem.providers import ScriptedChatProvider


def _turns(n, start="2024-01-01T00:00:00Z"):
    return build_session("s", start, [{"speaker": "A" if i % 2 else "B", "text": f"t{i}"} for i in range(n)]).turns


def test_segment_single_window():
    windows = segment(_turns(20), 20, 5)
    assert len(windows) == 1 and len(windows[0].turns) == 20


def test_segment_empty():
    assert segment([], 20, 5) == []


def test_segment_25_turns():
    windows = segment(_turns(25), 20, 5)
    assert [w.turn_range for w in windows] == [(0, 19), (5, 24)]
    assert len(windows[1].turns) == 20


def test_segment_short_session_and_coverage():
    assert [w.turn_range for w in segment(_turns(7), 20, 5)] == [(0, 6)]
    windows = segment(_turns(40), 20, 5)
    covered = {t.turn_index for w in windows for t in w.turns}
    assert covered == set(range(40))
    assert windows[-1].turn_range[1] == 39


@pytest.mark.parametrize("size, stride", [(0, 5), (20, 0), (-1, 1)])
def test_segment_rejects_bad_arguments(size, stride):
    with pytest.raises(InvalidArgument):
        segment(_turns(3), size, stride)


def test_build_session_fills_timestamps_and_rejects_backwards():
    s = build_session("s", "2024-01-01T10:00:00Z", [{"speaker": "A", "text": "x"}, {"speaker": "B", "text": "y"}])
    assert [t.timestamp for t in s.turns] == ["2024-01-01T10:00:00Z", "2024-01-01T10:01:00Z"]
    with pytest.raises(InvalidInput):
        build_session("s", "2024-01-01T10:00:00Z", [
            {"speaker": "A", "text": "x", "timestamp": "2024-01-01T10:05:00Z"},
            {"speaker": "B", "text": "y", "timestamp": "2024-01-01T10:01:00Z"},
        ])


def test_load_transcript_reports_line(tmp_path):
    bad = tmp_path / "t.json"
    bad.write_text('{"sessions": [\n  {"session_id": "a",\n   "turns": [,]}\n]}\n')
    with pytest.raises(InvalidInput) as info:
        load_transcript(bad)
    assert info.value.line == 3
    assert str(info.value).startswith(f"{bad}:3:")


def test_load_transcript_empty_file(tmp_path):
    empty = tmp_path / "e.json"
    empty.write_text("")
    assert load_transcript(empty) == []


def test_parse_transcript_validation():
    with pytest.raises(InvalidInput):
        parse_transcript({"sessions": [{"session_id": "a", "turns": []}]})
    with pytest.raises(InvalidInput):
        parse_transcript([{"session_id": "a", "start_time": "2024-01-01", "turns": []}] * 2)


def _window(lines, start="2025-11-19T09:00:00Z"):
    raw = [{"speaker": s, "text": t} for s, t in lines]
    return Window(tuple(build_session("s1", start, raw).turns))


def test_rule_extractor_meeting_example():
    window = _window([("Alice", "Let's meet Bob at the Starbucks on 5th Ave tomorrow at 2pm."),
                      ("Bob", "Sure!")], start="2025-11-19T10:00:00Z")
    units = RuleBasedExtractor().extract(window, "")
    assert len(units) == 1
    unit = sanitize_draft(units[0], window)
    assert unit.content == "Alice agreed to meet Bob at the Starbucks on 5th Avenue on 2025-11-20T14:00:00"
    assert set(unit.entities) == {"Alice", "Bob", "Starbucks", "5th Avenue"}
    assert unit.timestamp == "2025-11-20T14:00:00Z"


def test_rule_extractor_gates_phatic_windows():
    window = _window([("A", "hi"), ("B", "how are you"), ("A", "good thanks")])
    assert RuleBasedExtractor().extract(window, "") == []


def test_rule_extractor_scripted_six_turn_window():
    # oracle produced by running the reference extractor once and checking each line by hand
    window = _window([
        ("Caroline", "Hey Mel!"),
        ("Melanie", "I adopted a puppy named Luna yesterday."),
        ("Caroline", "Aww, what breed?"),
        ("Melanie", "My husband is a nurse."),
        ("Caroline", "I will visit the Art Institute tomorrow."),
        ("Melanie", "I might paint more."),
    ], start="2023-05-25T19:00:00Z")
    units = [sanitize_draft(d, window) for d in RuleBasedExtractor().extract(window, "")]
    assert [(u.content, u.timestamp, u.salience) for u in units] == [
        ("Melanie adopted a puppy named Luna on 2023-05-24T19:01:00", "2023-05-24T19:01:00Z", "high"),
        ("Melanie's husband is a nurse", "2023-05-25T19:03:00Z", "medium"),
        ("Caroline will visit the Art Institute on 2023-05-26T19:04:00", "2023-05-26T19:04:00Z", "high"),
        ("Melanie might paint more", "2023-05-25T19:05:00Z", "low"),
    ]


def test_rule_extractor_resolves_it_from_context():
    window = _window([("User", "I prefer oat milk."), ("User", "I want coffee."), ("User", "I like it hot.")])
    contents = [d.content for d in RuleBasedExtractor().extract(window, "")]
    assert contents == ["User prefers oat milk", "User wants coffee", "User likes coffee hot"]


def test_rule_extractor_uses_history_for_antecedent():
    window = _window([("User", "I like it hot.")])
    assert RuleBasedExtractor().extract(window, "") == []
    drafts = RuleBasedExtractor().extract(window, "User wants coffee")
    assert [d.content for d in drafts] == ["User likes coffee hot"]


def test_llm_extractor_uses_prompt_template_and_parses_reply():
    window = _window([("Alice", "Let's meet Bob at the Starbucks on 5th Ave tomorrow at 2pm.")])
    provider = ScriptedChatProvider()
    ext = LLMExtractor(provider)
    prompt = ext.build_prompt(window, "")
    assert window.start_time in prompt and "Alice" in prompt
    assert prompt.startswith(prompts.EXTRACTION_PROMPT.split("{")[0])
    reply = {"memory_units": [{
        "content": "Alice agreed to meet Bob at the Starbucks on 5th Avenue tomorrow at 2pm",
        "entities": ["Alice", "Bob", "Starbucks", "5th Avenue"],
        "topic": "Meeting planning", "timestamp": "", "salience": "high"}]}
    provider.register(prompt, "```json\n" + json.dumps(reply) + "\n```")
    [draft] = ext.extract(window, "")
    unit = sanitize_draft(draft, window)
    # leftover relative expressions are resolved against the window start
    assert unit.content == "Alice agreed to meet Bob at the Starbucks on 5th Avenue on 2025-11-20T14:00:00"
    assert unit.timestamp == "2025-11-20T14:00:00Z"


@pytest.mark.parametrize("reply", [
    "not json", "[1, 2]", '{"memory_units": "x"}', '{"memory_units": [{"content": ""}]}',
    '{"memory_units": [{"content": "x", "entities": "A"}]}', '{"memory_units": [{"content": "x", "timestamp": 5}]}',
])
def test_parse_extraction_reply_rejects_malformed(reply):
    with pytest.raises(ExtractionFailed):
        parse_extraction_reply(reply)


def test_parse_extraction_reply_empty_list_is_gating():
    assert parse_extraction_reply('{"memory_units": []}') == []


def test_sanitize_rejects_bad_timestamp():
    window = _window([("A", "x")])
    with pytest.raises(ExtractionFailed):
        sanitize_draft(UnitDraft("A did x", ("A",), "t", "garbage", "medium"), window)


def test_sanitize_defaults():
    window = _window([("A", "x")])
    d = sanitize_draft(UnitDraft("Alice met Bob", (), "", "", "urgent"), window)
    assert d.entities == ("Alice", "Bob") and d.salience == "medium" and d.topic
    assert d.timestamp == "2025-11-19T09:00:00Z"


def test_raw_chunk_extractor_keeps_dialogue():
    window = _window([("A", "see you tomorrow"), ("B", "ok")])
    [draft] = RawChunkExtractor().extract(window)
    assert draft.content == "A: see you tomorrow\nB: ok"


def test_dedup_drafts():
    d = lambda c: UnitDraft(c, ("A",), "t", "2024-01-01T00:00:00Z", "low")  # noqa: E731
    assert len(dedup_drafts([d("A x"), d("A x")])) == 1
    assert len(dedup_drafts([d("A  X"), d("a x")])) == 1
    assert len(dedup_drafts([d("A x"), d("A y")])) == 2
    seen = {"a z"}
    assert dedup_drafts([d("A Z"), d("A w")], seen)[0].content == "A w"
    assert seen == {"a z", "a w"}
