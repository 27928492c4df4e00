"""Shared fixtures, random instance generators and brute-force oracles for the tests."""

from __future__ import annotations

import itertools
from importlib import resources
from pathlib import Path

import numpy as np

from kgevent.evaluation import EventView, MatchCriteria, span_match
from kgevent.standoff import Document, EventRecord, Mention, tokenize

FIXTURES = Path(str(resources.files("kgevent") / "data" / "fixtures"))
SYNTHETIC = FIXTURES / "synthetic"
TEST_DATA = Path(__file__).parent / "data"

SMALL = dict(relation_mlp_dim=32, trigger_mlp_dim=32, gnn_node_dim=32, gnn_edge_dim=32, embedding_dim=32,
             learning_rate=1e-2)


# --- Steiner ---------------------------------------------------------------


def brute_force_steiner_costs(adjacency: dict[str, set[str]]) -> dict[frozenset, int]:
    """Optimal unit-weight Steiner cost for every terminal set of a small connected graph.

    A Steiner tree on node set S has |S| - 1 edges and exists iff S induces a
    connected subgraph, so opt(K) = min |S| - 1 over connected S containing K.
    """
    nodes = sorted(adjacency)
    n = len(nodes)
    index = {v: i for i, v in enumerate(nodes)}
    nbr = [sum(1 << index[w] for w in adjacency[v]) for v in nodes]
    best = [n + 1] * (1 << n)
    for mask in range(1, 1 << n):
        start = mask & -mask
        seen = frontier = start
        while frontier:
            low = frontier & -frontier
            frontier ^= low
            grow = nbr[low.bit_length() - 1] & mask & ~seen
            seen |= grow
            frontier |= grow
        if seen == mask:
            best[mask] = bin(mask).count("1") - 1
    # superset minimum: opt[K] = min over S containing K
    for i in range(n):
        bit = 1 << i
        for mask in range(1 << n):
            if not mask & bit and best[mask | bit] < best[mask]:
                best[mask] = best[mask | bit]
    return {frozenset(nodes[i] for i in range(n) if mask >> i & 1): best[mask] for mask in range(1, 1 << n)}


def nx_to_adjacency(g) -> dict[str, set[str]]:
    return {f"n{u}": {f"n{v}" for v in g[u]} for u in g.nodes}


# --- message passing ------------------------------------------------------


def mlp_np(mlp, x):
    h = np.maximum(x @ mlp.first.w.data + mlp.first.b.data, 0)
    return h @ mlp.second.w.data + mlp.second.b.data


def dense_oracle(layer, x, edges, e):
    """Per-node loop over incoming messages, straight from the update rules."""
    n, d = x.shape
    out = mlp_np(layer.theta, x)
    incoming = {i: [] for i in range(n)}
    for k, (u, v) in enumerate(edges):
        incoming[v].append((u, k))
        incoming[u].append((v, k))
    for i in range(n):
        if not incoming[i]:
            continue
        if layer.variant == "ecc":
            for j, k in incoming[i]:
                out[i] += mlp_np(layer.psi, e[k]).reshape(d, d) @ x[j]
            continue
        if layer.variant == "geanet":
            logits = np.array([mlp_np(layer.psi, e[k])[0] for _, k in incoming[i]])
            vals = [x[j] for j, _ in incoming[i]]
        else:
            W, a = layer.gat_w.data, layer.gat_a.data[:, 0]
            logits = []
            for j, _ in incoming[i]:
                s = np.concatenate([x[i] @ W, x[j] @ W]) @ a
                logits.append(s if s > 0 else 0.2 * s)
            logits = np.array(logits)
            vals = [x[j] @ W for j, _ in incoming[i]]
        w = np.exp(logits - logits.max())
        w /= w.sum()
        out[i] += sum(wk * v for wk, v in zip(w, vals))
    return out


# --- standoff fuzzing ------------------------------------------------------


def random_a2(rng: np.random.Generator, n_proteins: int = 4) -> str:
    """A well-formed .a2 body over proteins T1..T<n_proteins>, in arbitrary line order."""
    types = ["Gene_expression", "Binding", "Positive_regulation", "Regulation", "Phosphorylation"]
    n_trig = int(rng.integers(0, 6))
    triggers = []
    for k in range(n_trig):
        start = int(rng.integers(0, 200))
        triggers.append((f"T{n_proteins + k + 1}", str(rng.choice(types)), start, start + int(rng.integers(1, 12))))
    lines = [f"{tid}\t{label} {s} {e}\t{'x' * (e - s)}" for tid, label, s, e in triggers]
    events = []
    for k in range(int(rng.integers(0, 7)) if triggers else 0):
        tid, label, _, _ = triggers[int(rng.integers(0, len(triggers)))]
        targets = [f"T{i}" for i in range(1, n_proteins + 1)] + [e for e, _ in events]
        n_theme = int(rng.integers(1, 4 if label == "Binding" else 2))
        args = []
        for t in range(n_theme):
            role = "Theme" if t == 0 else f"Theme{t + 1}"
            args.append(f"{role}:{targets[int(rng.integers(0, len(targets)))]}")
        if label.endswith("egulation") and rng.random() < 0.5:
            args.append(f"Cause:{targets[int(rng.integers(0, len(targets)))]}")
        eid = f"E{k + 1}"
        events.append((eid, f"{eid}\t{label}:{tid} {' '.join(args)}"))
    lines += [line for _, line in events]
    if rng.random() < 0.3 and events:
        lines.append(f"M1\tNegation {events[0][0]}")
    if rng.random() < 0.2:
        lines.append("#1\tAnnotatorNotes T1\tchecked")
    order = rng.permutation(len(lines))
    return "".join(lines[i] + "\n" for i in order)


# --- event forests ---------------------------------------------------------

FOREST_TYPES = ["Gene_expression", "Binding", "Positive_regulation", "Negative_regulation"]


def random_event_doc(rng: np.random.Generator, doc_id: str, base: Document | None = None,
                     n_events: int | None = None) -> Document:
    """Up to 5 events over a fixed 12-word text; with ``base``, perturb a copy of its events."""
    text = "A1 B2 C3 D4 w1 w2 w3 w4 w5 w6 w7 w8.\n"
    sentences = tokenize(text)
    toks = sentences[0]
    proteins = [Mention(f"T{i + 1}", "Protein", "Protein", toks[i].char_start, toks[i].char_end, toks[i].text)
                for i in range(4)]
    n = int(rng.integers(0, 6)) if n_events is None else n_events
    triggers, events = [], []
    for k in range(n):
        if base is not None and k < len(base.events) and rng.random() < 0.7:
            src = base.events[k]
            trig = base.mention_map()[src.trigger_id]
            label = trig.label if rng.random() < 0.85 else str(rng.choice(FOREST_TYPES))
            pos = next(i for i, t in enumerate(toks) if t.char_start == trig.char_start)
            pos = int(np.clip(pos + rng.integers(-1, 2) * (rng.random() < 0.3), 4, 11))
            args = list(src.args)
            if rng.random() < 0.2 and args:
                role, _ = args[0]
                args[0] = (role, f"T{int(rng.integers(1, 5))}")
            args = [(r, t) for r, t in args if not t.startswith("E") or int(t[1:]) <= k]
            if not any(r == "Theme" for r, _ in args):
                args.insert(0, ("Theme", f"T{int(rng.integers(1, 5))}"))
        else:
            label = str(rng.choice(FOREST_TYPES))
            pos = int(rng.integers(4, 12))
            targets = [f"T{i}" for i in range(1, 5)] + [f"E{j}" for j in range(1, k + 1)]
            n_theme = int(rng.integers(1, 3)) if label == "Binding" else 1
            args = [("Theme", targets[int(rng.integers(0, len(targets)))]) for _ in range(n_theme)]
            if label.endswith("regulation") and rng.random() < 0.5:
                args.append(("Cause", targets[int(rng.integers(0, len(targets)))]))
        tok = toks[pos]
        trig = Mention(f"T{5 + k}", "Trigger", label, tok.char_start, tok.char_end, tok.text)
        triggers.append(trig)
        events.append(EventRecord(f"E{k + 1}", trig.id, tuple(args)))
    return Document(doc_id, text, sentences, proteins, triggers, events)


def brute_force_match(pred: EventView, gold: EventView, pid: str, gid: str, criteria: MatchCriteria) -> bool:
    """Recursive event equality by trying every assignment of pred arguments to gold arguments."""
    p, g = pred.events[pid], gold.events[gid]
    if pred.event_type(p) != gold.event_type(g):
        return False
    if not span_match(pred.mentions[p.trigger_id], gold.mentions[g.trigger_id], gold.tokens, criteria.span_mode):
        return False
    if len(p.args) != len(g.args):
        return False

    def arg_ok(pa, ga) -> bool:
        (pr, pt), (gr, gt) = pa, ga
        if pr != gr:
            return False
        if (pt in pred.events) != (gt in gold.events):
            return False
        if pt not in pred.events:
            return pt == gt
        if criteria.recursive:
            return brute_force_match(pred, gold, pt, gt, criteria)
        pe, ge = pred.events[pt], gold.events[gt]
        return (pred.event_type(pe) == gold.event_type(ge)
                and span_match(pred.mentions[pe.trigger_id], gold.mentions[ge.trigger_id], gold.tokens,
                               criteria.span_mode))

    return any(all(arg_ok(a, g.args[j]) for a, j in zip(p.args, perm))
               for perm in itertools.permutations(range(len(g.args))))


def brute_force_max_matching(compat: dict[int, list[int]]) -> int:
    """Largest one-to-one matching by exhaustive search over pred -> gold assignments."""
    preds = sorted(compat)
    best = 0

    def go(i: int, used: frozenset, size: int) -> None:
        nonlocal best
        if size + (len(preds) - i) <= best:
            return
        if i == len(preds):
            best = max(best, size)
            return
        for j in compat[preds[i]]:
            if j not in used:
                go(i + 1, used | {j}, size + 1)
        go(i + 1, used, size)

    go(0, frozenset(), 0)
    return best
