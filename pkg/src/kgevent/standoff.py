"""BioNLP-style standoff corpora: ``.txt`` / ``.a1`` / ``.a2`` files and a JSONL twin.

Offsets are character offsets into the decoded document text. Fixtures are
ASCII, where these coincide with UTF-8 byte offsets.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

ROLES = ("Theme", "Cause")
# secondary GE'11 arguments; not modelled
_IGNORED_ROLES = re.compile(r"^(Site|CSite|ToLoc|AtLoc|FromLoc)\d*$")
_ROLE_RE = re.compile(r"^(Theme|Cause)(\d*)$")
_DETACH = set(".,;:()-!?")
_SENT_END = set(".!?")


class StandoffError(ValueError):
    """Base class for corpus parsing and validation errors."""


class MalformedLine(StandoffError):
    def __init__(self, line_no: int, detail: str = ""):
        self.line_no = line_no
        super().__init__(f"malformed line {line_no}" + (f": {detail}" if detail else ""))


class OffsetMismatch(StandoffError):
    def __init__(self, mention_id: str, detail: str = ""):
        self.mention_id = mention_id
        super().__init__(f"offset mismatch for {mention_id}" + (f": {detail}" if detail else ""))


class DanglingReference(StandoffError):
    def __init__(self, ref: str):
        self.ref = ref
        super().__init__(f"dangling reference {ref}")


class CyclicEvent(StandoffError):
    def __init__(self, event_id: str):
        self.event_id = event_id
        super().__init__(f"cyclic event structure through {event_id}")


class MissingFile(StandoffError):
    def __init__(self, path):
        self.path = str(path)
        super().__init__(f"missing file {path}")


class CorpusError(StandoffError):
    """Aggregate of every failure found while loading a corpus."""

    def __init__(self, errors: list[tuple[str, StandoffError]]):
        self.errors = errors
        lines = [f"{doc}: {err}" for doc, err in errors]
        super().__init__(f"{len(errors)} corpus error(s):\n" + "\n".join(lines))


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int
    sentence_index: int


@dataclass(frozen=True)
class Mention:
    id: str
    kind: str  # "Protein" | "Trigger"
    label: str
    char_start: int
    char_end: int
    text: str


@dataclass(frozen=True)
class EventRecord:
    id: str
    trigger_id: str
    args: tuple[tuple[str, str], ...] = ()

    def themes(self) -> list[str]:
        return [t for r, t in self.args if r == "Theme"]

    def causes(self) -> list[str]:
        return [t for r, t in self.args if r == "Cause"]


@dataclass
class Document:
    doc_id: str
    text: str
    sentences: list[list[Token]] = field(default_factory=list)
    proteins: list[Mention] = field(default_factory=list)
    triggers: list[Mention] = field(default_factory=list)
    events: list[EventRecord] = field(default_factory=list)

    @property
    def mentions(self) -> list[Mention]:
        return self.proteins + self.triggers

    def mention_map(self) -> dict[str, Mention]:
        return {m.id: m for m in self.mentions}

    def event_map(self) -> dict[str, EventRecord]:
        return {e.id: e for e in self.events}

    def sentence_of(self, mention: Mention) -> int:
        """Index of the sentence holding the mention's first character (-1 if none)."""
        for si, sent in enumerate(self.sentences):
            if sent and sent[0].char_start <= mention.char_start < sent[-1].char_end:
                return si
        return -1

    def token_of(self, mention: Mention) -> tuple[int, int]:
        """(sentence index, token index) of the first token overlapping the mention."""
        for si, sent in enumerate(self.sentences):
            for ti, tok in enumerate(sent):
                if tok.char_end > mention.char_start and tok.char_start < mention.char_end:
                    return si, ti
        return -1, -1


@dataclass
class Corpus:
    documents: list[Document] = field(default_factory=list)

    def __len__(self):
        return len(self.documents)

    def __iter__(self):
        return iter(self.documents)

    def by_id(self) -> dict[str, Document]:
        return {d.doc_id: d for d in self.documents}

    def n_sentences(self) -> int:
        return sum(len(d.sentences) for d in self.documents)


# --- tokenization ----------------------------------------------------------


def tokenize(text: str) -> list[list[Token]]:
    """Whitespace tokenization with punctuation detached, then rule-based sentence split.

    A sentence ends at a '.', '!' or '?' token followed by whitespace and an
    uppercase letter, or by the end of the text.
    """
    spans: list[tuple[int, int]] = []
    for m in re.finditer(r"\S+", text):
        start = m.start()
        for i, ch in enumerate(m.group()):
            pos = m.start() + i
            if ch in _DETACH:
                if start < pos:
                    spans.append((start, pos))
                spans.append((pos, pos + 1))
                start = pos + 1
        if start < m.end():
            spans.append((start, m.end()))

    sentences: list[list[Token]] = []
    current: list[tuple[int, int]] = []
    for s, e in spans:
        current.append((s, e))
        if text[s:e] in _SENT_END and _is_boundary(text, e):
            sentences.append(current)
            current = []
    if current:
        sentences.append(current)
    return [
        [Token(text[s:e], s, e, si) for s, e in sent]
        for si, sent in enumerate(sentences)
    ]


def _is_boundary(text: str, end: int) -> bool:
    rest = text[end:]
    if not rest.strip():
        return True
    if not rest[0].isspace():
        return False
    return rest.lstrip()[0].isupper()


# --- .a1 / .a2 -------------------------------------------------------------


def _parse_textbound(line: str, line_no: int, kind: str) -> Mention:
    fields = line.split("\t")
    if len(fields) != 3:
        raise MalformedLine(line_no, f"expected 3 tab-separated fields, got {len(fields)}")
    tid, middle, text = fields
    parts = middle.split(" ")
    if len(parts) != 3:
        raise MalformedLine(line_no, "expected 'TYPE START END'")
    label, start, end = parts
    try:
        s, e = int(start), int(end)
    except ValueError:
        raise MalformedLine(line_no, "non-integer offset") from None
    if s < 0 or e <= s:
        raise MalformedLine(line_no, f"bad span {s}-{e}")
    return Mention(tid, kind, label, s, e, text)


def _content_lines(content: str) -> Iterable[tuple[int, str]]:
    for i, raw in enumerate(content.split("\n"), start=1):
        line = raw.rstrip("\r")
        if line.strip():
            yield i, line


def parse_a1(content: str) -> list[Mention]:
    return [_parse_textbound(line, no, "Protein") for no, line in _content_lines(content)]


def parse_a2(
    content: str, entity_ids: Iterable[str] | None = None
) -> tuple[list[Mention], list[EventRecord]]:
    """Parse trigger (T) and event (E) lines.

    Argument targets naming a T-id that is not a trigger in this file are
    assumed to be ``.a1`` entities; pass ``entity_ids`` to check them here.
    Modification, equivalence and note lines are skipped, as are ``Entity``
    textbounds and secondary roles (Site, ToLoc, ...).
    """
    triggers: list[Mention] = []
    raw_events: list[tuple[int, str, str, list[tuple[str, str]]]] = []
    for no, line in _content_lines(content):
        head = line[0]
        if head == "T":
            m = _parse_textbound(line, no, "Trigger")
            if m.label != "Entity":
                triggers.append(m)
        elif head == "E":
            fields = line.split("\t")
            if len(fields) != 2:
                raise MalformedLine(no, f"expected 2 tab-separated fields, got {len(fields)}")
            eid, body = fields
            parts = body.split()
            if not parts or parts[0].count(":") != 1:
                raise MalformedLine(no, "expected TYPE:TRIGGER")
            _, trig = parts[0].split(":")
            args: list[tuple[str, str]] = []
            for part in parts[1:]:
                if part.count(":") != 1:
                    raise MalformedLine(no, f"bad argument {part!r}")
                role, target = part.split(":")
                rm = _ROLE_RE.match(role)
                if rm is None:
                    if _IGNORED_ROLES.match(role):
                        continue
                    raise MalformedLine(no, f"unknown role {role!r}")
                args.append((rm.group(1), target))
            raw_events.append((no, eid, trig, args))
        elif head in "M*#AN":
            continue
        else:
            raise MalformedLine(no, f"unknown annotation type {head!r}")

    trig_ids = {t.id for t in triggers}
    event_ids = {eid for _, eid, _, _ in raw_events}
    known_entities = set(entity_ids) if entity_ids is not None else None
    events = []
    for _, eid, trig, args in raw_events:
        if trig not in trig_ids:
            raise DanglingReference(trig)
        for _, target in args:
            if target.startswith("E"):
                if target not in event_ids:
                    raise DanglingReference(target)
            elif target not in trig_ids and known_entities is not None and target not in known_entities:
                raise DanglingReference(target)
        events.append(EventRecord(eid, trig, tuple(args)))
    topological_events(events)
    return triggers, events


def id_key(ident: str) -> tuple[str, int, str]:
    m = re.match(r"^([A-Za-z]*)(\d+)(.*)$", ident)
    if m is None:
        return (ident, -1, "")
    return (m.group(1), int(m.group(2)), m.group(3))


def topological_events(events: list[EventRecord]) -> list[EventRecord]:
    """Events ordered so that nested targets come first; ties broken by id.

    Raises CyclicEvent when the event graph is not a DAG.
    """
    by_id = {e.id: e for e in events}
    deps = {e.id: {t for _, t in e.args if t in by_id} for e in events}
    for eid, d in deps.items():
        if eid in d:
            raise CyclicEvent(eid)
    order: list[EventRecord] = []
    done: set[str] = set()
    pending = sorted(by_id, key=id_key)
    while pending:
        ready = [eid for eid in pending if deps[eid] <= done]
        if not ready:
            raise CyclicEvent(pending[0])
        eid = ready[0]
        order.append(by_id[eid])
        done.add(eid)
        pending.remove(eid)
    return order


def format_textbound(m: Mention) -> str:
    return f"{m.id}\t{m.label} {m.char_start} {m.char_end}\t{m.text}"


def serialize_a1(proteins: Iterable[Mention]) -> str:
    ordered = sorted(proteins, key=lambda m: (m.char_start, id_key(m.id)))
    return "".join(format_textbound(m) + "\n" for m in ordered)


def serialize_a2(triggers: Iterable[Mention], events: Iterable[EventRecord]) -> str:
    """Canonical ``.a2`` text: triggers by offset then id, events topologically."""
    triggers = list(triggers)
    labels = {t.id: t.label for t in triggers}
    lines = [format_textbound(t) for t in sorted(triggers, key=lambda m: (m.char_start, id_key(m.id)))]
    for ev in topological_events(list(events)):
        parts = [f"{labels.get(ev.trigger_id, 'Event')}:{ev.trigger_id}"]
        n_theme = 0
        for role, target in ev.args:
            if role == "Theme":
                n_theme += 1
                parts.append(f"Theme{n_theme if n_theme > 1 else ''}:{target}")
        parts.extend(f"Cause:{t}" for r, t in ev.args if r == "Cause")
        lines.append(f"{ev.id}\t{' '.join(parts)}")
    return "".join(line + "\n" for line in lines)


def canonical_args(ev: EventRecord) -> EventRecord:
    """Themes first then Causes, preserving relative order; matches serialize_a2."""
    args = tuple(a for a in ev.args if a[0] == "Theme") + tuple(a for a in ev.args if a[0] == "Cause")
    return EventRecord(ev.id, ev.trigger_id, args)


# --- corpus assembly -------------------------------------------------------


def validate_document(doc: Document) -> list[StandoffError]:
    errors: list[StandoffError] = []
    for m in doc.mentions:
        if m.char_end > len(doc.text) or doc.text[m.char_start:m.char_end] != m.text:
            errors.append(OffsetMismatch(m.id, f"{m.char_start}-{m.char_end} {m.text!r}"))
    ids = [m.id for m in doc.mentions] + [e.id for e in doc.events]
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            errors.append(StandoffError(f"duplicate id {i}"))
        seen.add(i)
    mention_ids = {m.id for m in doc.mentions}
    trigger_ids = {t.id for t in doc.triggers}
    event_ids = {e.id for e in doc.events}
    for ev in doc.events:
        if ev.trigger_id not in trigger_ids:
            errors.append(DanglingReference(ev.trigger_id))
        for _, target in ev.args:
            if target not in mention_ids and target not in event_ids:
                errors.append(DanglingReference(target))
    return errors


def load_document(txt_path: Path) -> Document:
    text = txt_path.read_text(encoding="utf-8")
    doc = Document(txt_path.stem, text, tokenize(text))
    a1 = txt_path.with_suffix(".a1")
    a2 = txt_path.with_suffix(".a2")
    if a1.exists():
        doc.proteins = parse_a1(a1.read_text(encoding="utf-8"))
    if a2.exists():
        doc.triggers, doc.events = parse_a2(a2.read_text(encoding="utf-8"))
    return doc


def load_corpus(directory) -> Corpus:
    """Load every ``*.txt`` document in ``directory`` with its annotations.

    All problems are collected and raised together as a CorpusError.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFile(directory)
    errors: list[tuple[str, StandoffError]] = []
    stems = {p.stem for p in directory.glob("*.txt")}
    for p in sorted(directory.glob("*.a[12]")):
        if p.stem not in stems:
            errors.append((p.stem, MissingFile(p.with_suffix(".txt"))))
    docs = []
    for txt in sorted(directory.glob("*.txt")):
        try:
            doc = load_document(txt)
        except StandoffError as exc:
            errors.append((txt.stem, exc))
            continue
        errors.extend((doc.doc_id, e) for e in validate_document(doc))
        docs.append(doc)
    if errors:
        raise CorpusError(errors)
    return Corpus(docs)


def write_corpus(corpus: Corpus, directory, with_a2: bool = True) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for doc in corpus:
        (directory / f"{doc.doc_id}.txt").write_text(doc.text, encoding="utf-8")
        (directory / f"{doc.doc_id}.a1").write_text(serialize_a1(doc.proteins), encoding="utf-8")
        if with_a2:
            (directory / f"{doc.doc_id}.a2").write_text(
                serialize_a2(doc.triggers, doc.events), encoding="utf-8"
            )


# --- JSONL -----------------------------------------------------------------


def document_to_json(doc: Document) -> dict:
    return {
        "doc_id": doc.doc_id,
        "text": doc.text,
        "mentions": [
            {"id": m.id, "kind": m.kind, "label": m.label, "start": m.char_start,
             "end": m.char_end, "text": m.text}
            for m in doc.mentions
        ],
        "events": [
            {"id": e.id, "trigger": e.trigger_id, "args": [list(a) for a in e.args]}
            for e in doc.events
        ],
    }


def document_from_json(obj: dict) -> Document:
    doc = Document(obj["doc_id"], obj["text"], tokenize(obj["text"]))
    for m in obj.get("mentions", []):
        mention = Mention(m["id"], m["kind"], m["label"], m["start"], m["end"], m["text"])
        (doc.proteins if mention.kind == "Protein" else doc.triggers).append(mention)
    doc.events = [
        EventRecord(e["id"], e["trigger"], tuple((r, t) for r, t in e["args"]))
        for e in obj.get("events", [])
    ]
    topological_events(doc.events)
    return doc


def read_jsonl(path) -> Corpus:
    docs = []
    errors: list[tuple[str, StandoffError]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            doc = document_from_json(json.loads(line))
            errors.extend((doc.doc_id, e) for e in validate_document(doc))
            docs.append(doc)
    if errors:
        raise CorpusError(errors)
    return Corpus(docs)


def write_jsonl(corpus: Corpus, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in corpus:
            fh.write(json.dumps(document_to_json(doc), sort_keys=True) + "\n")
