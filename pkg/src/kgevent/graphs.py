"""Sentence-graph construction: concept matching, Steiner tree over the concept layer, per-sentence subtrees."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .kg import (
    CONCEPT_CONCEPT,
    CONCEPT_SEMANTIC,
    HAS_SEMANTIC_TYPE,
    MAPPED_TO,
    SEMANTIC_SEMANTIC,
    KnowledgeGraph,
)
from .standoff import Token, tokenize

log = logging.getLogger(__name__)

TOKEN_NODE = "TokenNode"
CONCEPT_NODE = "ConceptNode"
SEMANTIC_NODE = "SemanticNode"

Edge = tuple[str, str]


class LexiconError(ValueError):
    pass


@dataclass
class ConceptLexicon:
    entries: dict[str, str] = field(default_factory=dict)
    max_tokens: int = 0

    def add(self, surface: str, concept_id: str) -> None:
        key = _normalize(surface)
        if not key:
            raise LexiconError("empty surface string")
        current = self.entries.get(key)
        if current is None or concept_id < current:
            self.entries[key] = concept_id
        n = sum(len(s) for s in tokenize(surface))
        self.max_tokens = max(self.max_tokens, n)

    def validate(self, kg: KnowledgeGraph) -> None:
        missing = sorted({c for c in self.entries.values() if c not in kg.concept_nodes})
        if missing:
            raise LexiconError(f"lexicon concepts missing from KG: {missing}")

    def __len__(self):
        return len(self.entries)


def _normalize(surface: str) -> str:
    toks = [t for s in tokenize(surface) for t in s]
    return _join(toks)


def _join(tokens: list[Token]) -> str:
    """Lowercased surface of a token run: a space wherever the text had a gap."""
    out = []
    for i, tok in enumerate(tokens):
        if i and tok.char_start > tokens[i - 1].char_end:
            out.append(" ")
        out.append(tok.text.lower())
    return "".join(out)


def load_lexicon(path, kg: KnowledgeGraph | None = None) -> ConceptLexicon:
    lex = ConceptLexicon()
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise LexiconError(f"{path}:{no}: expected surface<TAB>concept_id")
            lex.add(parts[0], parts[1])
    if kg is not None:
        lex.validate(kg)
    return lex


def match_concepts(sentence: list[Token], lexicon: ConceptLexicon) -> list[tuple[tuple[int, int], str]]:
    """Greedy left-to-right longest match; returns ``((start, end_exclusive), concept_id)``."""
    matches = []
    i = 0
    n = len(sentence)
    while i < n:
        for width in range(min(lexicon.max_tokens, n - i), 0, -1):
            cid = lexicon.entries.get(_join(sentence[i:i + width]))
            if cid is not None:
                matches.append(((i, i + width), cid))
                i += width
                break
        else:
            i += 1
    return matches


def prune(adjacency: dict[str, set[str]], terminals, threshold: int) -> dict[str, set[str]]:
    """Drop non-terminal concepts with fewer than ``threshold`` neighbours in the terminal set.

    Single pass: neighbour counts are taken on the input graph.
    """
    K = set(terminals)
    keep = {
        n for n, nbrs in adjacency.items()
        if n in K or len(nbrs & K) >= threshold
    }
    return {n: adjacency[n] & keep for n in adjacency if n in keep}


def _bfs(adjacency: dict[str, set[str]], source: str) -> tuple[dict[str, int], dict[str, str]]:
    dist = {source: 0}
    parent: dict[str, str] = {}
    queue = deque([source])
    while queue:
        u = queue.popleft()
        for w in sorted(adjacency.get(u, ())):
            if w not in dist:
                dist[w] = dist[u] + 1
                parent[w] = u
                queue.append(w)
    return dist, parent


class _DisjointSet:
    def __init__(self):
        self.parent: dict[str, str] = {}

    def find(self, x: str) -> str:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if rb < ra:
            ra, rb = rb, ra
        self.parent[rb] = ra
        return True


def _edge(u: str, v: str) -> Edge:
    return (u, v) if u < v else (v, u)


def build_global_tree(adjacency: dict[str, set[str]], terminals) -> set[Edge]:
    """2-approximate Steiner forest connecting the terminals, unit edge lengths.

    Metric closure over terminals by BFS, Kruskal MST on the closure, MST
    edges expanded back into shortest paths, then a spanning forest of that
    union with non-terminal leaves stripped.
    """
    K = sorted(t for t in set(terminals) if t in adjacency)
    bfs = {t: _bfs(adjacency, t) for t in K}
    closure = []
    for i, a in enumerate(K):
        dist = bfs[a][0]
        for b in K[i + 1:]:
            if b in dist:
                closure.append((dist[b], a, b))
    closure.sort()

    ds = _DisjointSet()
    union: set[Edge] = set()
    for _, a, b in closure:
        if not ds.union(a, b):
            continue
        parent = bfs[a][1]
        node = b
        while node != a:
            union.add(_edge(node, parent[node]))
            node = parent[node]

    # the union of paths may contain cycles; keep a BFS spanning forest of it
    sub: dict[str, set[str]] = {}
    for u, v in union:
        sub.setdefault(u, set()).add(v)
        sub.setdefault(v, set()).add(u)
    forest: set[Edge] = set()
    seen: set[str] = set()
    for root in sorted(sub):
        if root in seen:
            continue
        dist, parent = _bfs(sub, root)
        seen.update(dist)
        forest.update(_edge(c, p) for c, p in parent.items())
    return _strip_leaves(forest, set(K))


def _strip_leaves(edges: set[Edge], keep: set[str]) -> set[Edge]:
    adj: dict[str, set[str]] = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    stack = sorted(n for n, nb in adj.items() if len(nb) == 1 and n not in keep)
    while stack:
        n = stack.pop()
        if n not in adj or len(adj[n]) != 1 or n in keep:
            continue
        (m,) = adj.pop(n)
        adj[m].discard(n)
        if len(adj[m]) == 1 and m not in keep:
            stack.append(m)
        elif not adj[m]:
            adj.pop(m)
    return {_edge(u, v) for u, nb in adj.items() for v in nb if u < v}


def tree_cost(edges) -> int:
    return len(set(edges))


# --- sentence graphs -------------------------------------------------------


@dataclass
class SentenceGraph:
    doc_id: str = ""
    sentence_index: int = 0
    nodes: list[tuple[str, str | int]] = field(default_factory=list)  # (kind, ref)
    edges: list[tuple[int, int, list[str]]] = field(default_factory=list)
    token_alignment: dict[int, int] = field(default_factory=dict)

    def __len__(self):
        return len(self.nodes)

    def to_json(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "sentence_index": self.sentence_index,
            "nodes": [{"id": i, "kind": k, "ref": r} for i, (k, r) in enumerate(self.nodes)],
            "edges": [{"u": u, "v": v, "labels": list(labels)} for u, v, labels in self.edges],
            "token_alignment": {str(t): n for t, n in sorted(self.token_alignment.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SentenceGraph":
        return cls(
            doc_id=obj["doc_id"],
            sentence_index=obj["sentence_index"],
            nodes=[(n["kind"], n["ref"]) for n in obj["nodes"]],
            edges=[(e["u"], e["v"], list(e["labels"])) for e in obj["edges"]],
            token_alignment={int(t): n for t, n in obj["token_alignment"].items()},
        )


def _tree_adjacency(edges) -> dict[str, set[str]]:
    adj: dict[str, set[str]] = {}
    for u, v in edges:
        adj.setdefault(u, set()).add(v)
        adj.setdefault(v, set()).add(u)
    return adj


def minimal_subtree(tree_adj: dict[str, set[str]], targets) -> set[Edge]:
    """Edges of the smallest subtree of a forest spanning ``targets`` per component (DFS)."""
    targets = set(targets)
    kept: set[Edge] = set()
    visited: set[str] = set()
    for root in sorted(t for t in targets if t in tree_adj):
        if root in visited:
            continue
        # iterative post-order DFS; neighbours in ascending order
        parent = {root: None}
        order = []
        stack = [root]
        while stack:
            u = stack.pop()
            order.append(u)
            for w in sorted(tree_adj[u], reverse=True):
                if w not in parent:
                    parent[w] = u
                    stack.append(w)
        visited.update(order)
        has_target = {}
        for u in reversed(order):
            has_target[u] = has_target.get(u, False) or u in targets
            p = parent[u]
            if p is not None:
                if has_target[u]:
                    kept.add(_edge(u, p))
                    has_target[p] = True
    return kept


def build_sentence_graph(
    sentence: list[Token],
    matches,
    global_tree,
    kg: KnowledgeGraph,
    use_semantic: bool = True,
    doc_id: str = "",
    sentence_index: int = 0,
) -> SentenceGraph:
    graph = SentenceGraph(doc_id=doc_id, sentence_index=sentence_index)
    if not matches:
        return graph
    tree_adj = global_tree if isinstance(global_tree, dict) else _tree_adjacency(global_tree)
    matched = [cid for _, cid in matches]
    off_tree = sorted({c for c in matched if c not in tree_adj})
    if off_tree:
        log.debug("%d matched concept(s) absent from the global tree", len(off_tree))
    sub_edges = minimal_subtree(tree_adj, matched)
    concepts = sorted({c for e in sub_edges for c in e} | set(matched))

    index: dict[tuple[str, str | int], int] = {}

    def add(kind: str, ref) -> int:
        key = (kind, ref)
        if key not in index:
            index[key] = len(graph.nodes)
            graph.nodes.append(key)
        return index[key]

    for c in concepts:
        add(CONCEPT_NODE, c)
    semantics: list[str] = []
    if use_semantic:
        semantics = sorted({s for c in concepts for s in kg.semantic_types(c)})
        for s in semantics:
            add(SEMANTIC_NODE, s)

    edges: list[tuple[int, int, list[str]]] = []
    for u, v in sorted(sub_edges):
        labels = kg.labels_between(u, v, CONCEPT_CONCEPT)
        edges.append((index[(CONCEPT_NODE, u)], index[(CONCEPT_NODE, v)], labels or ["related_to"]))
    if use_semantic:
        for c in concepts:
            for s in kg.semantic_types(c):
                labels = kg.labels_between(c, s, CONCEPT_SEMANTIC) or [HAS_SEMANTIC_TYPE]
                edges.append((index[(CONCEPT_NODE, c)], index[(SEMANTIC_NODE, s)], labels))
        sem_adj = kg.semantic_neighbors()
        for i, a in enumerate(semantics):
            for b in semantics[i + 1:]:
                if b in sem_adj.get(a, ()):
                    labels = kg.labels_between(a, b, SEMANTIC_SEMANTIC)
                    edges.append((index[(SEMANTIC_NODE, a)], index[(SEMANTIC_NODE, b)], labels))

    for (start, end), cid in matches:
        for ti in range(start, end):
            tnode = add(TOKEN_NODE, ti)
            cnode = index[(CONCEPT_NODE, cid)]
            edges.append((tnode, cnode, [MAPPED_TO]))
            graph.token_alignment[ti] = cnode
    graph.edges = edges
    return graph


@dataclass
class GraphBuildReport:
    terminals: int = 0
    concepts_before_prune: int = 0
    concepts_after_prune: int = 0
    tree_edges: int = 0
    sentences: int = 0
    empty_graphs: int = 0


def build_corpus_graphs(corpus, kg: KnowledgeGraph, lexicon: ConceptLexicon, prune_t: int = 35,
                        use_semantic: bool = True) -> tuple[list[SentenceGraph], GraphBuildReport]:
    """Full pipeline: match every sentence, prune, build the global tree, extract sentence graphs."""
    report = GraphBuildReport()
    per_sentence = []
    K: set[str] = set()
    for doc in corpus:
        for si, sent in enumerate(doc.sentences):
            m = match_concepts(sent, lexicon)
            per_sentence.append((doc.doc_id, si, sent, m))
            K.update(c for _, c in m)
    adjacency = kg.concept_adjacency()
    report.terminals = len(K)
    report.concepts_before_prune = len(adjacency)
    reduced = prune(adjacency, K, prune_t)
    report.concepts_after_prune = len(reduced)
    tree = build_global_tree(reduced, K)
    report.tree_edges = len(tree)
    tree_adj = _tree_adjacency(tree)
    graphs = []
    for doc_id, si, sent, m in per_sentence:
        g = build_sentence_graph(sent, m, tree_adj, kg, use_semantic, doc_id, si)
        report.sentences += 1
        report.empty_graphs += not g.nodes
        graphs.append(g)
    return graphs, report


def write_graphs(graphs: list[SentenceGraph], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(g.to_json(), sort_keys=True) + "\n")


def read_graphs(path) -> dict[tuple[str, int], SentenceGraph]:
    out = {}
    with open(Path(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                g = SentenceGraph.from_json(json.loads(line))
                out[(g.doc_id, g.sentence_index)] = g
    return out
