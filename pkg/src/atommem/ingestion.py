"""Dialogue segmentation and window-to-memory-unit extraction."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter
from datetime import timedelta
from pathlib import Path
from typing import Any, Iterable, Protocol, Sequence

from atommem import prompts
from atommem.errors import ExtractionFailed, InvalidArgument, InvalidInput, ProviderError
from atommem.models import SALIENCE_LEVELS, DialogueTurn, Session, UnitDraft, Window
from atommem.providers import ChatProvider, ChatProviderConfig, chat
from atommem.text import content_key, tokenize
from atommem.timeutil import RELATIVE_RE, absolutize, format_instant, parse_instant

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Transcript input
# ---------------------------------------------------------------------------

def build_session(session_id: str, start_time: str, raw_turns: Sequence[dict[str, Any]],
                  first_index: int = 0) -> Session:
    """Turn ``{speaker, text, timestamp?}`` dicts into a validated Session.

    Turns without a timestamp get ``start_time`` plus one minute per position.
    """
    start = parse_instant(start_time)
    session = Session(session_id=session_id, start_time=format_instant(start))
    prev = None
    for pos, raw in enumerate(raw_turns):
        if not isinstance(raw, dict) or "speaker" not in raw or "text" not in raw:
            raise InvalidInput(f"session {session_id!r} turn {pos}: needs 'speaker' and 'text'")
        if raw.get("timestamp"):
            ts = parse_instant(raw["timestamp"])
        else:
            ts = start + timedelta(minutes=pos)
        if prev is not None and ts < prev:
            raise InvalidInput(f"session {session_id!r} turn {pos}: timestamp goes backwards")
        prev = ts
        session.turns.append(DialogueTurn(
            session_id=session_id,
            turn_index=first_index + pos,
            speaker=str(raw["speaker"]),
            text=str(raw["text"]),
            timestamp=format_instant(ts),
        ))
    return session


def parse_transcript(data: Any) -> list[Session]:
    if isinstance(data, dict):
        data = data.get("sessions")
    if not isinstance(data, list):
        raise InvalidInput("transcript must be a list of sessions (or {'sessions': [...]})")
    sessions = []
    seen = set()
    for i, raw in enumerate(data):
        if not isinstance(raw, dict):
            raise InvalidInput(f"sessions[{i}] is not an object")
        for key in ("session_id", "start_time", "turns"):
            if key not in raw:
                raise InvalidInput(f"sessions[{i}] is missing {key!r}")
        sid = str(raw["session_id"])
        if sid in seen:
            raise InvalidInput(f"sessions[{i}]: duplicate session_id {sid!r}")
        seen.add(sid)
        try:
            sessions.append(build_session(sid, raw["start_time"], raw["turns"]))
        except InvalidArgument as exc:
            raise InvalidInput(f"sessions[{i}]: {exc}") from exc
    return sessions


def load_transcript(path: str | Path) -> list[Session]:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        return []
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(exc.msg, line=exc.lineno, path=str(path)) from exc
    try:
        return parse_transcript(data)
    except InvalidInput as exc:
        raise InvalidInput(str(exc), path=str(path)) from exc


# ---------------------------------------------------------------------------
# Segmentation
# ---------------------------------------------------------------------------

def segment(turns: Sequence[DialogueTurn], window_size: int, stride: int) -> list[Window]:
    """Overlapping fixed-length windows; the last one may be shorter.

    Windows start every ``stride`` turns and stop as soon as one reaches the
    final turn, so consecutive windows overlap by ``window_size - stride``.
    """
    if window_size <= 0 or stride <= 0:
        raise InvalidArgument("window_size and stride must be positive")
    if stride > window_size:
        raise InvalidArgument("stride must not exceed window_size")
    windows = []
    start = 0
    while start < len(turns):
        chunk = tuple(turns[start:start + window_size])
        windows.append(Window(chunk))
        if start + window_size >= len(turns):
            break
        start += stride
    return windows


# ---------------------------------------------------------------------------
# Extractors
# ---------------------------------------------------------------------------

class Extractor(Protocol):
    def extract(self, window: Window, history: str) -> list[UnitDraft]: ...


_ABBREVIATIONS = {"Ave": "Avenue", "St": "Street", "Rd": "Road", "Blvd": "Boulevard"}
_ABBREV_RE = re.compile(r"\b(\d+(?:st|nd|rd|th)|[A-Z][a-z]+) (Ave|St|Rd|Blvd)\b\.?")

_CONTRACTIONS = [
    (re.compile(r"\bI'm\b", re.I), "I am"),
    (re.compile(r"\bI've\b", re.I), "I have"),
    (re.compile(r"\bI'll\b", re.I), "I will"),
    (re.compile(r"\byou're\b", re.I), "you are"),
    (re.compile(r"\bwon't\b", re.I), "will not"),
]

_INTERJECTIONS = {
    "oh", "well", "yeah", "yes", "so", "haha", "wow", "btw", "actually", "also",
    "and", "but", "anyway", "hey", "ok", "okay", "um", "lol", "honestly", "guess", "what",
}
_ADVERBS = {"really", "also", "just", "finally", "actually", "usually", "always", "often",
            "recently", "still", "never", "already", "sometimes"}

# First-person form -> third-person singular.
_BASE_VERBS = {
    "am": "is", "have": "has", "do": "does", "go": "goes", "want": "wants", "like": "likes",
    "love": "loves", "prefer": "prefers", "work": "works", "live": "lives", "play": "plays",
    "enjoy": "enjoys", "hate": "hates", "need": "needs", "plan": "plans", "own": "owns",
    "study": "studies", "teach": "teaches", "collect": "collects", "paint": "paints",
    "run": "runs", "visit": "visits", "volunteer": "volunteers", "keep": "keeps",
    "drink": "drinks", "eat": "eats", "use": "uses", "read": "reads", "write": "writes",
    "make": "makes", "attend": "attends", "miss": "misses", "know": "knows", "feel": "feels",
}
_THIRD_VERBS = set(_BASE_VERBS.values()) | {"is", "has"}
_PAST_VERBS = {
    "was", "went", "got", "bought", "visited", "started", "moved", "adopted", "painted",
    "finished", "met", "ran", "flew", "joined", "made", "took", "saw", "lost", "won", "wrote",
    "graduated", "signed", "completed", "booked", "planted", "baked", "learned", "found",
    "gave", "received", "quit", "became", "tried", "decided", "agreed", "traveled",
    "travelled", "returned", "celebrated", "had", "did", "built", "fixed", "sold", "left",
    "attended", "watched", "cooked", "hiked", "volunteered",
}
_MODALS = {"will", "can", "should", "must", "might", "would", "could"}
_HEDGES = {"maybe", "might", "probably", "perhaps", "possibly"}

# Checked in order; the first topic with a keyword in the content wins.
TOPIC_LEXICON: tuple[tuple[str, frozenset[str]], ...] = tuple(
    (topic, frozenset(words.split()))
    for topic, words in (
        ("beverage preference", "coffee tea latte espresso milk cappuccino drink drinks"),
        ("health", "dentist doctor appointment hospital therapy medicine checkup"),
        ("pets", "puppy dog dogs cat cats kitten pet pets"),
        ("music", "violin guitar piano orchestra concert band music singing"),
        ("art", "painted paint paints painting pottery sculpture art museum drawing"),
        ("travel", "flew flight trip vacation travel traveled travelled"),
        ("shopping", "bought purchased shop shopping necklace"),
        ("reading", "book books novel reading"),
        ("fitness", "race marathon ran running gym yoga hike hiked"),
        ("family", "sister brother mother father husband wife kids children family adoption son daughter"),
        ("relocation", "moving moved move apartment"),
        ("work", "work works job engineer nurse counselor career office"),
        ("education", "class classes school course degree"),
        ("community", "support group volunteer volunteering community"),
        ("meeting planning", "meet meeting"),
    )
)

_ENTITY_STOP = {
    "The", "A", "An", "On", "In", "At", "And", "Or", "But", "It", "This", "That", "My", "Our",
    "We", "They", "He", "She", "You", "Your", "His", "Her", "I",
    "January", "February", "March", "April", "May", "June", "July", "August", "September",
    "October", "November", "December",
    "Monday", "Tuesday", "Wednesday", "Thursday", "Friday", "Saturday", "Sunday",
}
_CAP_WORD = re.compile(r"^[A-Z][A-Za-z0-9&-]*$")
_ORDINAL = re.compile(r"^\d+(?:st|nd|rd|th)$")


def capitalized_entities(text: str) -> list[str]:
    """Runs of capitalized words, optionally led by an ordinal ("5th Avenue")."""
    found: list[str] = []
    run: list[str] = []

    def flush():
        if run and not (len(run) == 1 and _ORDINAL.match(run[0])):
            name = " ".join(run)
            if name not in found:
                found.append(name)
        run.clear()

    for raw in text.split():
        word = raw.strip(".,;:!?\"()[]")
        possessive = word.endswith("'s")
        if possessive:
            word = word[:-2]
        if _ORDINAL.match(word) and not run:
            flush()
            run.append(word)
        elif _CAP_WORD.match(word) and word not in _ENTITY_STOP:
            run.append(word)
        else:
            flush()
            continue
        if possessive or raw != raw.rstrip(".,;:!?\"()"):
            flush()
    flush()
    return found


def assign_topic(content: str, exclude: Iterable[str] = ()) -> str:
    tokens = tokenize(content)
    token_set = set(tokens)
    for topic, words in TOPIC_LEXICON:
        if token_set & words:
            return topic
    skip = set()
    for ent in exclude:
        skip.update(tokenize(ent))
    verbs = set(_BASE_VERBS) | _THIRD_VERBS | _PAST_VERBS | _MODALS
    counts = Counter(t for t in tokens if len(t) >= 3 and t not in skip and t not in verbs
                     and not t.isdigit())
    if not counts:
        return "general"
    best = max(counts.values())
    return next(t for t in tokens if counts.get(t) == best)


def _topic_keyword(text: str) -> str | None:
    """Last topic-lexicon keyword in ``text``; the antecedent for a bare "it"."""
    hit = None
    for tok in tokenize(text):
        if any(tok in words for _, words in TOPIC_LEXICON):
            hit = tok
    return hit


def _sentences(text: str) -> list[tuple[str, bool]]:
    """Split into (sentence, is_question) pairs."""
    out = []
    for m in re.finditer(r"[^.!?;]+[.!?;]*", text):
        chunk = m.group(0).strip()
        if not chunk:
            continue
        body = chunk.rstrip(".!?; ")
        if body:
            out.append((body, chunk.endswith("?")))
    return out


class RuleBasedExtractor:
    """Deterministic extractor used offline and as the test oracle.

    A sentence becomes a memory unit when it opens with a resolvable subject
    (``I``, ``my <noun>``, ``let's``, ``you`` with exactly two participants,
    or a capitalized name) followed by a verb from a small lexicon. Pronouns
    are rewritten to speaker names, a bare ``it`` takes the last topic keyword
    of the window (falling back to the history digest), and relative time is
    rewritten as an absolute instant anchored at the turn timestamp.
    Questions and everything else are gated out.
    """

    def extract(self, window: Window, history: str = "") -> list[UnitDraft]:
        drafts: list[UnitDraft] = []
        antecedent = None
        participants = sorted(window.participants)
        for turn in window.turns:
            others = [p for p in participants if p != turn.speaker]
            other = others[0] if len(others) == 1 else None
            text = self._prepare(turn.text)
            for sentence, is_question in _sentences(text):
                if is_question:
                    continue
                needs_antecedent = re.search(r"\bit\b", sentence, re.I) is not None
                if needs_antecedent and antecedent is None:
                    antecedent = _topic_keyword(history)
                body = self._rewrite(sentence, turn.speaker, other, antecedent)
                if body is None:
                    continue
                content, instant = absolutize(body, turn.timestamp)
                content = content.strip()
                entities = tuple(capitalized_entities(content))
                kw = _topic_keyword(content)
                if kw is not None:
                    antecedent = kw
                drafts.append(UnitDraft(
                    content=content,
                    entities=entities,
                    topic=assign_topic(content, entities),
                    timestamp=format_instant(instant or turn.instant),
                    salience=self._salience(sentence, instant is not None),
                ))
        return drafts

    @staticmethod
    def _prepare(text: str) -> str:
        text = text.replace("’", "'")
        text = _ABBREV_RE.sub(lambda m: f"{m.group(1)} {_ABBREVIATIONS[m.group(2)]}", text)
        for pattern, repl in _CONTRACTIONS:
            text = pattern.sub(repl, text)
        return text

    @staticmethod
    def _salience(sentence: str, timed: bool) -> str:
        words = set(sentence.lower().split())
        if words & _HEDGES:
            return "low"
        if timed or "will" in words or sentence.lower().startswith("let's"):
            return "high"
        return "medium"

    def _rewrite(self, sentence: str, speaker: str, other: str | None, antecedent: str | None) -> str | None:
        words = sentence.replace(",", " ,").split()
        while words and (words[0].lower().strip(",") in _INTERJECTIONS or words[0] == ","):
            words.pop(0)
        if not words:
            return None
        # Leading time expression: move it to the end ("Yesterday I went" -> "I went ... yesterday").
        joined = " ".join(words)
        lead = RELATIVE_RE.match(joined)
        if lead:
            rest = joined[lead.end():].lstrip(" ,")
            words = (rest + " " + lead.group(0)).split()
        words = [w for w in words if w != ","]
        if not words:
            return None

        first = words[0]
        low = first.lower()
        subject: str
        idx: int
        conjugate = False
        if low in ("let's", "lets") or (low == "let" and len(words) > 1 and words[1].lower() == "us"):
            rest = words[2:] if low == "let" else words[1:]
            if not rest:
                return None
            tail = self._resolve(rest, speaker, other, antecedent)
            return None if tail is None else f"{speaker} agreed to {tail}"
        if first == "I" or low == "i":
            subject, idx, conjugate = speaker, 1, True
        elif low == "you" and other is not None:
            subject, idx, conjugate = other, 1, True
        elif low in ("my", "your"):
            owner = speaker if low == "my" else other
            if owner is None:
                return None
            span = 1
            while span < len(words) and span <= 3 and not self._is_verb(words[span].lower(), False):
                span += 1
            if span == 1 or span >= len(words):
                return None
            subject, idx = f"{owner}'s " + " ".join(words[1:span]), span
        elif _CAP_WORD.match(first.rstrip("'s")) and first not in _ENTITY_STOP:
            span = 1
            while span < len(words) and _CAP_WORD.match(words[span]) and words[span] not in _ENTITY_STOP:
                span += 1
            subject, idx = " ".join(words[:span]), span
        else:
            return None

        # optional adverbs, then a lexicon verb
        j = idx
        while j < len(words) and words[j].lower() in _ADVERBS:
            j += 1
        if j >= len(words) or not self._is_verb(words[j].lower(), conjugate):
            return None
        verb = words[j].lower()
        if conjugate and verb in _BASE_VERBS:
            verb = _BASE_VERBS[verb]
        if conjugate and verb == "are":
            verb = "is"
        middle = words[idx:j]
        rest = words[j + 1:]
        if verb in _MODALS and not rest:
            return None
        tail = self._resolve(rest, speaker, other, antecedent)
        if tail is None:
            return None
        parts = [subject, *middle, verb]
        if tail:
            parts.append(tail)
        return " ".join(parts)

    @staticmethod
    def _is_verb(word: str, first_person: bool) -> bool:
        if word in _PAST_VERBS or word in _MODALS:
            return True
        if first_person:
            return word in _BASE_VERBS or word == "are"
        return word in _THIRD_VERBS

    @staticmethod
    def _resolve(words: Sequence[str], speaker: str, other: str | None, antecedent: str | None) -> str | None:
        out = []
        for w in words:
            core = w.strip(".,;:!?")
            low = core.lower()
            if low in ("my", "mine"):
                out.append(f"{speaker}'s")
            elif low in ("me", "myself") or core == "I":
                out.append(speaker)
            elif low in ("you", "your", "yours"):
                if other is None:
                    return None
                out.append(f"{other}'s" if low.startswith("your") else other)
            elif low == "it":
                if antecedent is None:
                    return None
                out.append(antecedent)
            else:
                out.append(w)
        return " ".join(out)


class LLMExtractor:
    """Extractor backed by a chat model speaking the memory-encoder prompt."""

    def __init__(self, provider: ChatProvider, config: ChatProviderConfig | None = None):
        self.provider = provider
        self.config = config or ChatProviderConfig()

    def build_prompt(self, window: Window, history: str = "") -> str:
        dialogue = window.render()
        if history:
            dialogue = f"(Recent memory: {history})\n{dialogue}"
        return prompts.render(
            prompts.EXTRACTION_PROMPT,
            window_start_time=window.start_time,
            speakers_list=", ".join(sorted(window.participants)),
            dialogue_window=dialogue,
        )

    def extract(self, window: Window, history: str = "") -> list[UnitDraft]:
        try:
            reply = chat(self.build_prompt(window, history), self.provider, self.config)
        except ProviderError as exc:
            raise ExtractionFailed(str(exc)) from exc
        return parse_extraction_reply(reply)


def _strip_fences(reply: str) -> str:
    reply = reply.strip()
    m = re.match(r"^```(?:json)?\s*(.*?)\s*```$", reply, re.S)
    return m.group(1) if m else reply


def parse_extraction_reply(reply: str) -> list[UnitDraft]:
    """Parse a ``{"memory_units": [...]}`` reply; anything malformed raises ExtractionFailed."""
    try:
        data = json.loads(_strip_fences(reply))
    except json.JSONDecodeError as exc:
        raise ExtractionFailed(f"reply is not JSON: {exc}") from exc
    if isinstance(data, dict):
        data = data.get("memory_units")
    if not isinstance(data, list):
        raise ExtractionFailed("reply has no 'memory_units' list")
    drafts = []
    for i, item in enumerate(data):
        if not isinstance(item, dict):
            raise ExtractionFailed(f"memory_units[{i}] is not an object")
        content = item.get("content")
        if not isinstance(content, str) or not content.strip():
            raise ExtractionFailed(f"memory_units[{i}] has no content")
        entities = item.get("entities") or []
        if not isinstance(entities, list) or not all(isinstance(e, str) for e in entities):
            raise ExtractionFailed(f"memory_units[{i}].entities must be a list of strings")
        timestamp = item.get("timestamp") or ""
        if not isinstance(timestamp, str):
            raise ExtractionFailed(f"memory_units[{i}].timestamp must be a string")
        drafts.append(UnitDraft(
            content=content.strip(),
            entities=tuple(e.strip() for e in entities if e.strip()),
            topic=str(item.get("topic") or ""),
            timestamp=timestamp,
            salience=str(item.get("salience") or "medium").lower(),
        ))
    return drafts


class RawChunkExtractor:
    """Ablation: store each window verbatim as a single unit, no compression."""

    def extract(self, window: Window, history: str = "") -> list[UnitDraft]:
        content = "\n".join(f"{t.speaker}: {t.text}" for t in window.turns)
        return [UnitDraft(
            content=content,
            entities=tuple(capitalized_entities(" ".join(t.text for t in window.turns))),
            topic="raw dialogue {}-{}".format(*window.turn_range),
            timestamp=window.start_time,
            salience="medium",
        )]


def sanitize_draft(draft: UnitDraft, window: Window, *, absolute: bool = True) -> UnitDraft:
    """Normalize extractor output so it satisfies the MemoryUnit invariants.

    Leftover relative expressions are resolved against the window start,
    timestamps are canonicalized, entities are filled from capitalized runs
    when the extractor reported none. A bad timestamp raises ExtractionFailed.
    """
    content = draft.content.strip()
    instant = None
    if absolute:
        content, instant = absolutize(content, window.start_time)
    raw_ts = draft.timestamp or (format_instant(instant) if instant else window.start_time)
    try:
        ts = format_instant(parse_instant(raw_ts))
    except InvalidArgument as exc:
        raise ExtractionFailed(f"bad timestamp {raw_ts!r}") from exc
    entities = tuple(dict.fromkeys(draft.entities)) or tuple(capitalized_entities(content))
    salience = draft.salience if draft.salience in SALIENCE_LEVELS else "medium"
    topic = draft.topic.strip() or assign_topic(content, entities)
    return UnitDraft(content=content, entities=entities, topic=topic, timestamp=ts, salience=salience)


def dedup_drafts(units: Iterable, seen: set[str] | None = None) -> list:
    """Drop items whose normalized content is already in ``seen`` (or earlier in ``units``).

    ``seen`` is updated in place with the keys of retained items.
    """
    seen = set() if seen is None else seen
    kept = []
    for unit in units:
        key = content_key(unit.content)
        if key in seen:
            continue
        seen.add(key)
        kept.append(unit)
    return kept

