"""Event assembly from trigger/argument predictions, and span/recursive event scoring."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from .standoff import Document, EventRecord, Mention, Token, id_key

SIMPLE_TYPES = ("Gene_expression", "Transcription", "Protein_catabolism", "Localization", "Phosphorylation")
BINDING_TYPES = ("Binding",)
REGULATION_TYPES = ("Regulation", "Positive_regulation", "Negative_regulation")
EVENT_TYPES = SIMPLE_TYPES + BINDING_TYPES + REGULATION_TYPES

REGULATION_GROUP = "Regulation_group"
TOTAL = "Total"


@dataclass(frozen=True)
class ArgumentEdge:
    trigger: Mention
    target: Mention
    role: str  # "Theme" | "Cause"


@dataclass(frozen=True)
class MatchCriteria:
    span_mode: str = "approx"  # "exact" | "approx"
    recursive: bool = True

    def __post_init__(self):
        if self.span_mode not in ("exact", "approx"):
            raise ValueError(f"unknown span mode {self.span_mode!r}")


@dataclass
class UnmergeStats:
    dropped_triggers: int = 0
    dropped_edges: int = 0


def unmerge(triggers: list[Mention], edges: list[ArgumentEdge], first_id: int = 1,
            stats: UnmergeStats | None = None) -> list[EventRecord]:
    """Turn triggers plus argument edges into discrete events.

    Simple types: one event per Theme, Causes ignored. Binding: one event per
    trigger holding every Theme. Regulation family: one event per Theme, or
    per (Theme, Cause) pair when Causes exist. A trigger-valued argument
    refers to the events assembled for that trigger; triggers that cannot be
    grounded (no Theme reaching a protein, or only through a cycle) are dropped
    along with every edge pointing at them.
    """
    stats = stats if stats is not None else UnmergeStats()
    trig_by_id = {t.id: t for t in triggers}
    ordered = sorted(triggers, key=lambda m: (m.char_start, id_key(m.id)))
    themes: dict[str, list[Mention]] = {t.id: [] for t in ordered}
    causes: dict[str, list[Mention]] = {t.id: [] for t in ordered}
    for e in edges:
        if e.trigger.id not in trig_by_id or e.target.id == e.trigger.id:
            stats.dropped_edges += 1
            continue
        bucket = themes if e.role == "Theme" else causes
        if e.target not in bucket[e.trigger.id]:
            bucket[e.trigger.id].append(e.target)

    def is_trigger(m: Mention) -> bool:
        return m.kind == "Trigger"

    # grounding order: a trigger enters once a Theme reaches a protein or an earlier trigger
    position: dict[str, int] = {}
    changed = True
    while changed:
        changed = False
        for t in ordered:
            if t.id in position:
                continue
            if any(not is_trigger(m) or m.id in position for m in themes[t.id]):
                position[t.id] = len(position)
                changed = True
    stats.dropped_triggers += len(ordered) - len(position)

    events: list[EventRecord] = []
    produced: dict[str, list[str]] = {}
    counter = itertools.count(first_id)

    def options(t: Mention, targets: list[Mention]) -> list[list[str]]:
        out = []
        for m in targets:
            if not is_trigger(m):
                out.append([m.id])
            elif m.id in position and position[m.id] < position[t.id]:
                out.append(produced[m.id])
            else:
                stats.dropped_edges += 1
        return out

    for t in sorted((trig_by_id[i] for i in position), key=lambda m: position[m.id]):
        theme_opts = options(t, themes[t.id])
        cause_opts = options(t, causes[t.id])
        arg_sets: list[tuple[tuple[str, str], ...]] = []
        if t.label in BINDING_TYPES:
            arg_sets.append(tuple(("Theme", opt[0]) for opt in theme_opts))
        elif t.label in REGULATION_TYPES:
            theme_ids = [i for opt in theme_opts for i in opt]
            cause_ids = [i for opt in cause_opts for i in opt]
            for th in theme_ids:
                if cause_ids:
                    arg_sets.extend((("Theme", th), ("Cause", c)) for c in cause_ids)
                else:
                    arg_sets.append((("Theme", th),))
        else:
            arg_sets.extend((("Theme", i),) for opt in theme_opts for i in opt)
        ids = []
        seen: set[tuple] = set()
        for args in arg_sets:
            if args in seen:
                continue
            seen.add(args)
            ev = EventRecord(f"E{next(counter)}", t.id, args)
            events.append(ev)
            ids.append(ev.id)
        produced[t.id] = ids
    return events


# --- matching --------------------------------------------------------------


def _token_range(tokens: list[Token], start: int, end: int) -> tuple[int, int]:
    hits = [i for i, t in enumerate(tokens) if t.char_end > start and t.char_start < end]
    if not hits:
        return -1, -1
    return hits[0], hits[-1]


def approx_span_match(pred: Mention, gold: Mention, tokens: list[Token]) -> bool:
    """Labels equal and pred lies inside gold widened by one token on each side."""
    if pred.label != gold.label:
        return False
    lo, hi = _token_range(tokens, gold.char_start, gold.char_end)
    start = tokens[lo - 1].char_start if lo > 0 else gold.char_start
    end = tokens[hi + 1].char_end if 0 <= hi < len(tokens) - 1 else gold.char_end
    return start <= pred.char_start and pred.char_end <= end


def span_match(pred: Mention, gold: Mention, tokens: list[Token], mode: str) -> bool:
    if mode == "exact":
        return pred.label == gold.label and (pred.char_start, pred.char_end) == (gold.char_start, gold.char_end)
    return approx_span_match(pred, gold, tokens)


@dataclass
class EventView:
    """Everything needed to resolve event ids and argument targets in one document."""

    mentions: dict[str, Mention]
    events: dict[str, EventRecord]
    tokens: list[Token]

    @classmethod
    def of(cls, doc: Document) -> "EventView":
        return cls(doc.mention_map(), doc.event_map(), [t for s in doc.sentences for t in s])

    def event_type(self, ev: EventRecord) -> str:
        return self.mentions[ev.trigger_id].label


class EventMatcher:
    def __init__(self, pred: EventView, gold: EventView, criteria: MatchCriteria):
        self.pred, self.gold, self.criteria = pred, gold, criteria
        self._memo: dict[tuple[str, str], bool] = {}

    def trigger_match(self, p: EventRecord, g: EventRecord) -> bool:
        return span_match(self.pred.mentions[p.trigger_id], self.gold.mentions[g.trigger_id],
                          self.gold.tokens, self.criteria.span_mode)

    def match(self, pred_id: str, gold_id: str) -> bool:
        key = (pred_id, gold_id)
        if key not in self._memo:
            self._memo[key] = self._match(self.pred.events[pred_id], self.gold.events[gold_id])
        return self._memo[key]

    def _arg_match(self, pa: str, ga: str) -> bool:
        p_event, g_event = pa in self.pred.events, ga in self.gold.events
        if p_event != g_event:
            return False
        if not p_event:
            return pa == ga
        if self.criteria.recursive:
            return self.match(pa, ga)
        p, g = self.pred.events[pa], self.gold.events[ga]
        return self.pred.event_type(p) == self.gold.event_type(g) and self.trigger_match(p, g)

    def _match(self, p: EventRecord, g: EventRecord) -> bool:
        if self.pred.event_type(p) != self.gold.event_type(g) or not self.trigger_match(p, g):
            return False
        if len(p.args) != len(g.args):
            return False
        compat = [
            [j for j, (gr, gt) in enumerate(g.args) if gr == pr and self._arg_match(pt, gt)]
            for pr, pt in p.args
        ]
        return _has_perfect_matching(compat, len(g.args))


def _has_perfect_matching(compat: list[list[int]], n_right: int) -> bool:
    owner = [-1] * n_right

    def augment(i: int, seen: set[int]) -> bool:
        for j in compat[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return all(augment(i, set()) for i in range(len(compat)))


def recursive_event_match(pred: EventRecord, gold: EventRecord, criteria: MatchCriteria,
                          pred_view: EventView, gold_view: EventView) -> bool:
    return EventMatcher(pred_view, gold_view, criteria).match(pred.id, gold.id)


# --- scoring ---------------------------------------------------------------


@dataclass
class Score:
    n_pred: int = 0
    n_gold: int = 0
    matched: int = 0
    matched_optimal: int = 0

    @property
    def precision(self) -> float:
        if self.n_pred == 0:
            return 1.0 if self.n_gold == 0 else 0.0
        return self.matched / self.n_pred

    @property
    def recall(self) -> float:
        if self.n_gold == 0:
            return 1.0 if self.n_pred == 0 else 0.0
        return self.matched / self.n_gold

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)

    def prf(self) -> tuple[float, float, float]:
        return self.precision, self.recall, self.f1


@dataclass
class EvalResult:
    classes: dict[str, Score] = field(default_factory=dict)

    @property
    def total(self) -> Score:
        return self.classes.setdefault(TOTAL, Score())

    def table(self) -> str:
        """TSV with greedy P/R/F1 per class plus the optimal matched count."""
        rows = ["class\tgold\tpred\tmatched\tprecision\trecall\tf1\tmatched_optimal"]
        order = [c for c in EVENT_TYPES if c in self.classes]
        order += sorted(c for c in self.classes if c not in order and c not in (REGULATION_GROUP, TOTAL))
        order += [c for c in (REGULATION_GROUP, TOTAL) if c in self.classes]
        for name in order:
            s = self.classes[name]
            p, r, f = s.prf()
            rows.append(f"{name}\t{s.n_gold}\t{s.n_pred}\t{s.matched}\t{p * 100:.2f}\t{r * 100:.2f}"
                        f"\t{f * 100:.2f}\t{s.matched_optimal}")
        return "\n".join(rows) + "\n"


def _doc_order(view: EventView) -> list[EventRecord]:
    return sorted(view.events.values(),
                  key=lambda e: (view.mentions[e.trigger_id].char_start, id_key(e.id)))


def max_matching(pairs: dict[int, list[int]], n_right: int) -> int:
    owner = [-1] * n_right

    def augment(i: int, seen: set[int]) -> bool:
        for j in pairs[i]:
            if j in seen:
                continue
            seen.add(j)
            if owner[j] < 0 or augment(owner[j], seen):
                owner[j] = i
                return True
        return False

    return sum(augment(i, set()) for i in pairs)


def evaluate(pred_docs: list[Document], gold_docs: list[Document],
             criteria: MatchCriteria = MatchCriteria()) -> EvalResult:
    """Greedy one-to-one event matching in document order, per class and in total."""
    result = EvalResult()
    gold_by_id = {d.doc_id: d for d in gold_docs}
    pred_by_id = {d.doc_id: d for d in pred_docs}
    for doc_id in sorted(set(gold_by_id) | set(pred_by_id)):
        gold = EventView.of(gold_by_id[doc_id]) if doc_id in gold_by_id else EventView({}, {}, [])
        pred = EventView.of(pred_by_id[doc_id]) if doc_id in pred_by_id else EventView({}, {}, [])
        if not gold.tokens:
            gold.tokens = pred.tokens
        _score_document(pred, gold, criteria, result)
    result.total
    return result


def _classes(event_type: str) -> list[str]:
    out = [event_type, TOTAL]
    if event_type in REGULATION_TYPES:
        out.append(REGULATION_GROUP)
    return out


def _score_document(pred: EventView, gold: EventView, criteria: MatchCriteria, result: EvalResult) -> None:
    matcher = EventMatcher(pred, gold, criteria)
    preds, golds = _doc_order(pred), _doc_order(gold)
    for ev in preds:
        for c in _classes(pred.event_type(ev)):
            result.classes.setdefault(c, Score()).n_pred += 1
    for ev in golds:
        for c in _classes(gold.event_type(ev)):
            result.classes.setdefault(c, Score()).n_gold += 1
    taken: set[str] = set()
    compat: dict[int, list[int]] = {}
    for i, p in enumerate(preds):
        compat[i] = [j for j, g in enumerate(golds) if matcher.match(p.id, g.id)]
        for j in compat[i]:
            if golds[j].id not in taken:
                taken.add(golds[j].id)
                for c in _classes(gold.event_type(golds[j])):
                    result.classes[c].matched += 1
                break
    # exact maximum matching, per class (matches never cross types)
    by_class: dict[str, dict[int, list[int]]] = {}
    for i, js in compat.items():
        by_class.setdefault(pred.event_type(preds[i]), {})[i] = js
    for cls, pairs in by_class.items():
        best = max_matching(pairs, len(golds))
        for c in _classes(cls):
            result.classes[c].matched_optimal += best


def evaluate_self(docs: list[Document], criteria: MatchCriteria = MatchCriteria()) -> EvalResult:
    return evaluate(docs, docs, criteria)
