"""Regenerate the bundled fixtures under src/kgevent/data/fixtures.

Run from the repository root: ``python3 scripts/make_fixtures.py``.
Everything is deterministic; offsets are computed, never typed by hand.
"""

from __future__ import annotations

import shutil
from pathlib import Path

from kgevent.standoff import Corpus, Document, EventRecord, Mention, tokenize, validate_document, write_corpus

ROOT = Path(__file__).resolve().parents[1] / "src" / "kgevent" / "data" / "fixtures"


def write_tsv(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join("\t".join(r) + "\n" for r in rows), encoding="utf-8")


# --- the two-level example KG around "BMP-6 induces phosphorylation" -------


def make_fig1() -> None:
    d = ROOT / "fig1_kg"
    write_tsv(d / "concepts.tsv", [
        ("C0001", "BMP-6", "T116"),
        ("C0002", "Induce", "T038"),
        ("C0003", "Activation", "T_PR"),
        ("C0004", "Phosphorylation", "T_PR"),
        ("C0005", "Protein kinase", "T116"),
    ])
    write_tsv(d / "semantic_types.tsv", [
        ("T116", "Amino Acid, Peptide, or Protein"),
        ("T038", "Biologic Function"),
        ("T_PR", "Positive regulation of biological process"),
    ])
    write_tsv(d / "triples.tsv", [
        ("C0001", "causes", "C0002", "ConceptConcept"),
        ("C0002", "associated_with", "C0003", "ConceptConcept"),
        ("C0003", "precedes", "C0004", "ConceptConcept"),
        ("C0005", "catalyzes", "C0004", "ConceptConcept"),
        ("C0001", "has_semantic_type", "T116", "ConceptSemantic"),
        ("C0002", "has_semantic_type", "T038", "ConceptSemantic"),
        ("C0003", "has_semantic_type", "T_PR", "ConceptSemantic"),
        ("C0004", "has_semantic_type", "T_PR", "ConceptSemantic"),
        ("T038", "quantified_by", "T_PR", "SemanticSemantic"),
    ])
    write_tsv(d / "lexicon.tsv", [
        ("BMP-6", "C0001"),
        ("induces", "C0002"),
        ("phosphorylation", "C0004"),
    ])


# --- 20-entity chain for the TransE sanity run -----------------------------


def make_toy() -> None:
    d = ROOT / "toy_kg"
    n = 20
    cids = [f"E{i:02d}" for i in range(n)]
    types = ["S_EVEN", "S_ODD"]
    write_tsv(d / "concepts.tsv", [(c, f"entity {i}", types[i % 2]) for i, c in enumerate(cids)])
    write_tsv(d / "semantic_types.tsv", [("S_EVEN", "even"), ("S_ODD", "odd")])
    rows = []
    for i in range(n - 1):
        rows.append((cids[i], "next", cids[i + 1], "ConceptConcept"))
    for i in range(n - 2):
        rows.append((cids[i], "skip", cids[i + 2], "ConceptConcept"))
    rows.append(("S_EVEN", "alternates_with", "S_ODD", "SemanticSemantic"))
    write_tsv(d / "triples.tsv", rows)


# --- synthetic GE-style corpus ----------------------------------------------

TRIGGERS = {
    "expression": "Gene_expression",
    "transcription": "Transcription",
    "degradation": "Protein_catabolism",
    "translocation": "Localization",
    "phosphorylation": "Phosphorylation",
    "binds": "Binding",
    "induces": "Positive_regulation",
    "inhibits": "Negative_regulation",
    "regulates": "Regulation",
}

# {P}, {Q}: protein slots. Each template lists events as
# (trigger word, [(role, target)]) where a target is a slot or an earlier event index.
TEMPLATES = [
    ("{P} inhibits the expression of {Q} .", [("expression", [("Theme", "Q")]),
                                              ("inhibits", [("Theme", 0), ("Cause", "P")])]),
    ("We observed phosphorylation of {P} in these cells .", [("phosphorylation", [("Theme", "P")])]),
    ("{P} induces degradation of {Q} .", [("degradation", [("Theme", "Q")]),
                                          ("induces", [("Theme", 0), ("Cause", "P")])]),
    ("The transcription of {P} was measured .", [("transcription", [("Theme", "P")])]),
    ("{P} regulates {Q} in T cells .", [("regulates", [("Theme", "Q"), ("Cause", "P")])]),
    ("Nuclear translocation of {P} was detected .", [("translocation", [("Theme", "P")])]),
    ("{P} induces the phosphorylation of {Q} .", [("phosphorylation", [("Theme", "Q")]),
                                                  ("induces", [("Theme", 0), ("Cause", "P")])]),
    ("We measured expression of {P} .", [("expression", [("Theme", "P")])]),
    ("{P} inhibits {Q} in resting cells .", [("inhibits", [("Theme", "Q"), ("Cause", "P")])]),
]
BINDING = ("{P} binds {Q} in vitro .", [("binds", [("Theme", "P"), ("Theme", "Q")])])

TRAIN_PROTEINS = [
    "STAT3", "TRAF2", "IRF4", "JAK2", "CD40", "MAPK1", "AKT1", "SMAD3", "CDK4", "RELA",
    "NFKB1", "TP53", "MYC", "FOS", "JUNB", "EGFR", "ERBB2", "PTEN", "BCL6", "GATA3",
    "TBX21", "FOXP3", "RORC", "IL2", "IL4", "IL6", "IL10", "TNF", "CXCR4", "CCR7",
    "LCK", "ZAP70",
]
DEV_PROTEINS = [
    "STAT5", "TRAF6", "IRF8", "JAK1", "CD28", "MAPK3", "AKT2", "SMAD4", "CDK6", "RELB",
    "NFKB2", "MDM2", "MAX", "JUN", "ATF2", "KRAS", "PIK3CA", "BCL2", "GATA1", "SPI1",
]


def render(doc_id: str, sentences) -> Document:
    """``sentences``: list of (template, events, {slot: protein})."""
    text_parts, proteins, triggers, events = [], [], [], []
    offset = 0
    t_no = 0
    pending = []
    for template, evs, slots in sentences:
        words = template.split(" ")
        sent_text = ""
        positions = []  # (word, start, end) with start relative to the document
        for w in words:
            if w == ".":
                start = offset + len(sent_text)
                sent_text += "."
            else:
                if sent_text:
                    sent_text += " "
                start = offset + len(sent_text)
                sent_text += slots.get(w.strip("{}"), w) if w.startswith("{") else w
            positions.append((w, start, offset + len(sent_text)))
        slot_ids = {}
        for w, s, e in positions:
            if w.startswith("{"):
                t_no += 1
                m = Mention(f"T{t_no}", "Protein", "Protein", s, e, slots[w.strip("{}")])
                proteins.append(m)
                slot_ids[w.strip("{}")] = m.id
        pending.append((positions, evs, slot_ids))
        text_parts.append(sent_text)
        offset += len(sent_text) + 1
    text = " ".join(text_parts) + "\n"

    e_no = 0
    for positions, evs, slot_ids in pending:
        made = []
        for word, args in evs:
            _, s, e = next(p for p in positions if p[0] == word)
            t_no += 1
            trig = Mention(f"T{t_no}", "Trigger", TRIGGERS[word], s, e, word)
            triggers.append(trig)
            e_no += 1
            resolved = tuple((role, made[tgt] if isinstance(tgt, int) else slot_ids[tgt]) for role, tgt in args)
            events.append(EventRecord(f"E{e_no}", trig.id, resolved))
            made.append(f"E{e_no}")
    doc = Document(doc_id, text, tokenize(text), proteins, triggers, events)
    errors = validate_document(doc)
    assert not errors, errors
    assert len(doc.sentences) == len(sentences), (doc_id, len(doc.sentences))
    return doc


def make_corpus(prefix: str, proteins: list[str], plan: list[int], per_doc: int, binding_at: int | None) -> Corpus:
    pool = iter(proteins)
    sentences = []
    for k, t in enumerate(plan):
        template, evs = BINDING if k == binding_at else TEMPLATES[t]
        slots = {s: next(pool) for s in ("P", "Q") if "{" + s + "}" in template}
        sentences.append((template, evs, slots))
    docs = []
    for i in range(0, len(sentences), per_doc):
        docs.append(render(f"{prefix}{i // per_doc + 1:02d}", sentences[i:i + per_doc]))
    return Corpus(docs)


def make_synthetic() -> None:
    d = ROOT / "synthetic"
    if d.exists():
        shutil.rmtree(d)
    # 20 sentences: each template at least twice, one Binding
    train_plan = [0, 1, 2, 3, 4, 5, 6, 7, 8, 0, 1, 2, 3, 4, 5, 6, 7, 8, 0, 9]
    train = make_corpus("train", TRAIN_PROTEINS, train_plan, per_doc=4, binding_at=19)
    assert train.n_sentences() == 20
    dev_plan = [1, 3, 5, 7, 0, 2, 4, 6, 8, 1, 3, 7]
    dev = make_corpus("dev", DEV_PROTEINS, dev_plan, per_doc=4, binding_at=None)
    write_corpus(train, d / "train")
    write_corpus(dev, d / "dev")

    # KG: one concept per trigger word and per protein; proteins hang off the
    # concept of the process they usually take part in.
    concepts, triples, lexicon = [], [], []
    trig_types = {
        "expression": "T045", "transcription": "T045", "degradation": "T044",
        "translocation": "T043", "phosphorylation": "T044", "binds": "T044",
        "induces": "T_PR", "inhibits": "T_NR", "regulates": "T_RG",
    }
    tcid = {}
    for k, (word, sty) in enumerate(trig_types.items(), start=1):
        cid = f"C1{k:03d}"
        tcid[word] = cid
        concepts.append((cid, word.capitalize(), sty))
        triples.append((cid, "has_semantic_type", sty, "ConceptSemantic"))
        lexicon.append((word, cid))
    words = list(trig_types)
    for a, b in zip(words, words[1:]):
        triples.append((tcid[a], "associated_with", tcid[b], "ConceptConcept"))
    hub = tcid["expression"]
    for k, name in enumerate(TRAIN_PROTEINS + DEV_PROTEINS, start=1):
        cid = f"C2{k:03d}"
        concepts.append((cid, name, "T116"))
        triples.append((cid, "has_semantic_type", "T116", "ConceptSemantic"))
        triples.append((cid, "gene_product_of", hub, "ConceptConcept"))
        lexicon.append((name, cid))
    semantic = [
        ("T116", "Amino Acid, Peptide, or Protein"),
        ("T045", "Genetic Function"),
        ("T044", "Molecular Function"),
        ("T043", "Cell Function"),
        ("T_PR", "Positive regulation of biological process"),
        ("T_NR", "Negative regulation of biological process"),
        ("T_RG", "Regulation of biological process"),
    ]
    triples += [
        ("T116", "result_of", "T045", "SemanticSemantic"),
        ("T045", "isa", "T044", "SemanticSemantic"),
        ("T043", "isa", "T044", "SemanticSemantic"),
        ("T_PR", "isa", "T_RG", "SemanticSemantic"),
        ("T_NR", "isa", "T_RG", "SemanticSemantic"),
        ("T_RG", "affects", "T044", "SemanticSemantic"),
    ]
    write_tsv(d / "kg" / "concepts.tsv", concepts)
    write_tsv(d / "kg" / "semantic_types.tsv", semantic)
    write_tsv(d / "kg" / "triples.tsv", triples)
    write_tsv(d / "lexicon.tsv", lexicon)


if __name__ == "__main__":
    make_fig1()
    make_toy()
    make_synthetic()
    print(f"fixtures written under {ROOT}")
