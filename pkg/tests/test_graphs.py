import itertools

import networkx as nx
import numpy as np
import pytest

from helpers import FIXTURES, SYNTHETIC, brute_force_steiner_costs, nx_to_adjacency
from kgevent.config import load_graph_config
from kgevent.graphs import (
    CONCEPT_NODE, SEMANTIC_NODE, TOKEN_NODE, ConceptLexicon, LexiconError, SentenceGraph, build_corpus_graphs,
    build_global_tree, build_sentence_graph, load_lexicon, match_concepts, minimal_subtree, prune, read_graphs,
    tree_cost, write_graphs,
)
from kgevent.kg import load_kg_dir
from kgevent.standoff import load_corpus, tokenize

FIG1 = FIXTURES / "fig1_kg"
FIG1_SENTENCE = "BMP-6 strongly induces the phosphorylation of Smad1."


def sentence(text):
    (toks,) = tokenize(text)
    return toks


def components(edges):
    g = nx.Graph()
    g.add_edges_from(edges)
    return g


class TestLexicon:
    def test_fig1_matches(self):
        lex = load_lexicon(FIG1 / "lexicon.tsv", load_kg_dir(FIG1))
        toks = sentence(FIG1_SENTENCE)
        found = [(cid, " ".join(t.text for t in toks[s:e])) for (s, e), cid in match_concepts(toks, lex)]
        assert found == [("C0001", "BMP - 6"), ("C0002", "induces"), ("C0004", "phosphorylation")]

    def test_longest_match(self):
        lex = ConceptLexicon()
        lex.add("regulation", "C2")
        lex.add("positive regulation", "C1")
        assert match_concepts(sentence("Positive regulation of X"), lex) == [((0, 2), "C1")]

    def test_empty_lexicon(self):
        assert match_concepts(sentence("anything at all"), ConceptLexicon()) == []

    def test_lowest_id_on_tie(self):
        lex = ConceptLexicon()
        lex.add("kinase", "C9")
        lex.add("Kinase", "C3")
        assert lex.entries == {"kinase": "C3"}

    def test_validation(self, tmp_path):
        with pytest.raises(LexiconError):
            ConceptLexicon().add("  ", "C1")
        (tmp_path / "lex.tsv").write_text("foo\tC404\n")
        with pytest.raises(LexiconError):
            load_lexicon(tmp_path / "lex.tsv", load_kg_dir(FIG1))
        (tmp_path / "lex.tsv").write_text("foo C1\n")
        with pytest.raises(LexiconError):
            load_lexicon(tmp_path / "lex.tsv")


class TestGlobalTree:
    def test_path(self):
        adj = {"a": {"b"}, "b": {"a", "c"}, "c": {"b", "d"}, "d": {"c"}}
        edges = build_global_tree(adj, {"a", "d"})
        assert edges == {("a", "b"), ("b", "c"), ("c", "d")} and tree_cost(edges) == 3

    def test_star(self):
        adj = {"c": {"x", "y", "z"}, "x": {"c"}, "y": {"c"}, "z": {"c"}}
        assert build_global_tree(adj, {"x", "y", "z"}) == {("c", "x"), ("c", "y"), ("c", "z")}

    def test_separate_components(self):
        adj = {"a": {"b"}, "b": {"a"}, "c": {"d"}, "d": {"c"}, "e": set()}
        assert build_global_tree(adj, {"a", "b", "c", "d", "e"}) == {("a", "b"), ("c", "d")}

    def test_single_terminal(self):
        assert build_global_tree({"a": {"b"}, "b": {"a"}}, {"a"}) == set()

    @pytest.mark.parametrize("index", range(1, 208))
    def test_atlas_vs_brute_force(self, index):
        g = nx.graph_atlas(index)
        if g.number_of_nodes() < 2 or not nx.is_connected(g):
            return
        adj = nx_to_adjacency(g)
        opt = brute_force_steiner_costs(adj)
        for K, best in opt.items():
            if len(K) > 4:
                continue
            edges = build_global_tree(adj, K)
            tree = components(edges)
            assert tree_cost(edges) <= 2 * best
            if len(K) > 1:
                assert nx.is_tree(tree) and set(K) <= set(tree.nodes)
                leaves = [v for v in tree.nodes if tree.degree(v) == 1]
                assert set(leaves) <= set(K)

    def test_random_forest_feasibility(self):
        rng = np.random.default_rng(5)
        for trial in range(30):
            g = nx.gnp_random_graph(15, 0.12, seed=int(rng.integers(1 << 30)))
            adj = nx_to_adjacency(g)
            K = {f"n{i}" for i in rng.choice(15, 5, replace=False)}
            tree = components(build_global_tree(adj, K))
            assert len(tree) == 0 or nx.is_forest(tree)
            for a, b in itertools.combinations(sorted(K), 2):
                if nx.has_path(g, int(a[1:]), int(b[1:])):
                    assert tree.has_node(a) and tree.has_node(b) and nx.has_path(tree, a, b)


class TestPrune:
    ADJ = {"n": {"a", "b", "z"}, "a": {"n"}, "b": {"n"}, "z": {"n"}}

    def test_zero_threshold(self):
        assert prune(self.ADJ, {"a"}, 0) == self.ADJ

    def test_removed(self):
        out = prune(self.ADJ, {"a", "b"}, 3)
        assert "n" not in out and out["a"] == set() and "z" not in out

    def test_kept(self):
        assert prune(self.ADJ, {"a", "b"}, 2)["n"] == {"a", "b"}

    def test_single_pass(self):
        # m survives on the input counts even though its neighbour n is removed
        adj = {"n": {"a", "m"}, "m": {"n", "a"}, "a": {"n", "m"}}
        out = prune(adj, {"a"}, 1)
        assert set(out) == {"n", "m", "a"}
        out = prune({"x": {"y"}, "y": {"x", "a"}, "a": {"y"}}, {"a"}, 1)
        assert set(out) == {"y", "a"} and out["y"] == {"a"}

    def test_terminals_survive(self):
        rng = np.random.default_rng(0)
        g = nx_to_adjacency(nx.gnp_random_graph(20, 0.2, seed=1))
        K = {f"n{i}" for i in rng.choice(20, 6, replace=False)}
        for t in range(5):
            assert K <= set(prune(g, K, t))

    def test_default_threshold(self):
        assert load_graph_config().prune_t == 35


class TestSentenceGraph:
    def setup_method(self):
        self.kg = load_kg_dir(FIG1)
        self.lex = load_lexicon(FIG1 / "lexicon.tsv", self.kg)

    def test_single_concept(self):
        toks = sentence("induces")
        m = match_concepts(toks, self.lex)
        g = build_sentence_graph(toks, m, build_global_tree(self.kg.concept_adjacency(), {"C0002"}), self.kg)
        assert g.nodes == [(CONCEPT_NODE, "C0002"), (SEMANTIC_NODE, "T038"), (TOKEN_NODE, 0)]
        assert sorted((u, v) for u, v, _ in g.edges) == [(0, 1), (2, 0)]
        assert g.token_alignment == {0: 0}

    def test_fig1_path(self):
        toks = sentence(FIG1_SENTENCE)
        m = match_concepts(toks, self.lex)
        K = {c for _, c in m}
        tree = build_global_tree(prune(self.kg.concept_adjacency(), K, 0), K)
        g = build_sentence_graph(toks, m, tree, self.kg)
        concepts = {ref for kind, ref in g.nodes if kind == CONCEPT_NODE}
        semantics = {ref for kind, ref in g.nodes if kind == SEMANTIC_NODE}
        assert concepts == {"C0001", "C0002", "C0003", "C0004"}
        assert "T_PR" in semantics and semantics == {"T116", "T038", "T_PR"}
        labels = {(g.nodes[u][1], g.nodes[v][1]): tuple(lab) for u, v, lab in g.edges}
        assert labels[("C0001", "C0002")] == ("causes",)
        assert labels[("C0003", "C0004")] == ("precedes",)
        assert labels[("T038", "T_PR")] == ("quantified_by",)
        self.check_invariants(g)

    def test_empty(self):
        toks = sentence("Nothing to see here.")
        g = build_sentence_graph(toks, [], set(), self.kg)
        assert g.nodes == [] and g.edges == [] and len(g) == 0

    def test_off_tree_concept_isolated(self):
        toks = sentence("phosphorylation")
        g = build_sentence_graph(toks, match_concepts(toks, self.lex), set(), self.kg)
        assert (CONCEPT_NODE, "C0004") in g.nodes and (SEMANTIC_NODE, "T_PR") in g.nodes

    def test_no_semantic(self):
        toks = sentence(FIG1_SENTENCE)
        m = match_concepts(toks, self.lex)
        tree = build_global_tree(self.kg.concept_adjacency(), {c for _, c in m})
        g = build_sentence_graph(toks, m, tree, self.kg, use_semantic=False)
        assert all(kind != SEMANTIC_NODE for kind, _ in g.nodes)

    @staticmethod
    def check_invariants(g: SentenceGraph):
        token_edges = {}
        for u, v, labels in g.edges:
            assert labels
            for a in (u, v):
                if g.nodes[a][0] == TOKEN_NODE:
                    token_edges[a] = token_edges.get(a, 0) + 1
        for i, (kind, _) in enumerate(g.nodes):
            if kind == TOKEN_NODE:
                assert token_edges[i] == 1

    def test_minimal_subtree(self):
        tree = {"a": {"b"}, "b": {"a", "c", "x"}, "c": {"b", "d"}, "d": {"c"}, "x": {"b"}}
        assert minimal_subtree(tree, {"a", "c"}) == {("a", "b"), ("b", "c")}
        assert minimal_subtree(tree, {"d"}) == set()


class TestCorpusGraphs:
    def build(self, **kw):
        kg = load_kg_dir(SYNTHETIC / "kg")
        lex = load_lexicon(SYNTHETIC / "lexicon.tsv", kg)
        return build_corpus_graphs(load_corpus(SYNTHETIC / "train"), kg, lex, **kw)

    def test_report(self):
        graphs, report = self.build(prune_t=0)
        assert report.sentences == 20 == len(graphs)
        assert report.terminals > 0 and report.concepts_after_prune == report.concepts_before_prune
        for g in graphs:
            TestSentenceGraph.check_invariants(g)

    def test_deterministic_serialization(self, tmp_path):
        a, _ = self.build()
        b, _ = self.build()
        write_graphs(a, tmp_path / "a.jsonl")
        write_graphs(b, tmp_path / "b.jsonl")
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()

    def test_jsonl_round_trip(self, tmp_path):
        graphs, _ = self.build()
        write_graphs(graphs, tmp_path / "g.jsonl")
        again = read_graphs(tmp_path / "g.jsonl")
        assert [again[(g.doc_id, g.sentence_index)] for g in graphs] == graphs
