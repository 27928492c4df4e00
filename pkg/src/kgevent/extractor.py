"""Knowledge incorporation and the trigger / argument classification heads."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .config import LabelInventory, ModelConfig
from .evaluation import ArgumentEdge
from .gnn import GnnLayer, GraphBatch, MLP, glorot, stack_forward
from .graphs import CONCEPT_NODE, SEMANTIC_NODE, TOKEN_NODE, SentenceGraph
from .kg import DimMismatch, EmbeddingTable
from .standoff import Document, Mention, Token
from .tensor import ParamStore, Tensor

log = logging.getLogger(__name__)

_MASK64 = (1 << 64) - 1
FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


class ProviderMissingSentence(KeyError):
    pass


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV_PRIME) & _MASK64
    return h


def _splitmix64(z: int) -> int:
    z = (z + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


class HashProvider:
    """Deterministic per-token vectors in [-0.1, 0.1].

    Each token hashes to ``fnv1a64(utf8) ^ seed``; coordinate k is the
    top 53 bits of ``splitmix64(hash + k)`` mapped onto the interval.
    """

    def __init__(self, dim: int, seed: int = 0):
        self.dim = dim
        self.seed = seed & _MASK64
        self._cache: dict[str, np.ndarray] = {}

    def token_vector(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            base = fnv1a64(text.encode("utf-8")) ^ self.seed
            units = [(_splitmix64((base + k) & _MASK64) >> 11) / float(1 << 53) for k in range(self.dim)]
            vec = np.array(units) * 0.2 - 0.1
            vec.setflags(write=False)
            self._cache[text] = vec
        return vec

    def embed(self, doc_id: str, sentence_index: int, tokens: list[Token]) -> np.ndarray:
        if not tokens:
            return np.zeros((0, self.dim))
        return np.stack([self.token_vector(t.text) for t in tokens])


class FileProvider:
    """Precomputed vectors from JSONL ``{doc_id, sentence_index, vectors}``."""

    def __init__(self, path):
        self.path = str(path)
        self.table: dict[tuple[str, int], np.ndarray] = {}
        dims = set()
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if not line.strip():
                    continue
                obj = json.loads(line)
                arr = np.asarray(obj["vectors"], dtype=np.float64)
                arr = arr.reshape(len(obj["vectors"]), -1)
                self.table[(obj["doc_id"], int(obj["sentence_index"]))] = arr
                if arr.size:
                    dims.add(arr.shape[1])
        if len(dims) > 1:
            raise DimMismatch(f"{path}: mixed vector sizes {sorted(dims)}")
        self.dim = dims.pop() if dims else 0

    def embed(self, doc_id: str, sentence_index: int, tokens: list[Token]) -> np.ndarray:
        key = (doc_id, sentence_index)
        if key not in self.table:
            raise ProviderMissingSentence(f"no vectors for {doc_id} sentence {sentence_index}")
        arr = self.table[key]
        if arr.shape[0] != len(tokens):
            raise DimMismatch(f"{doc_id}/{sentence_index}: {arr.shape[0]} vectors for {len(tokens)} tokens")
        return arr


def write_file_provider(path, rows) -> None:
    """``rows``: iterable of (doc_id, sentence_index, N x d array)."""
    with open(path, "w", encoding="utf-8") as fh:
        for doc_id, si, arr in rows:
            fh.write(json.dumps({"doc_id": doc_id, "sentence_index": si,
                                 "vectors": np.asarray(arr).tolist()}) + "\n")


def make_provider(config: ModelConfig):
    if config.provider == "file":
        provider = FileProvider(config.provider_path)
        if provider.dim and provider.dim != config.embedding_dim:
            raise DimMismatch(f"provider dim {provider.dim} != embedding_dim {config.embedding_dim}")
        return provider
    return HashProvider(config.embedding_dim, config.seed)


# --- per-sentence instances ------------------------------------------------


@dataclass
class SentenceInstance:
    doc_id: str
    sentence_index: int
    tokens: list[Token]
    embeddings: np.ndarray
    graph: SentenceGraph | None
    proteins: list[tuple[int, Mention]] = field(default_factory=list)
    gold_triggers: list[tuple[int, Mention]] = field(default_factory=list)
    trigger_labels: np.ndarray | None = None
    gold_pairs: list[tuple[int, int]] = field(default_factory=list)
    gold_pair_labels: np.ndarray | None = None


def candidate_pairs(triggers: list[tuple[int, Mention]], candidates: list[tuple[int, Mention]]):
    """Every (trigger, candidate) combination with distinct mentions, as token pairs and mentions."""
    pairs, mentions = [], []
    for ti, tm in triggers:
        for ci, cm in candidates:
            if cm.id == tm.id:
                continue
            pairs.append((ti, ci))
            mentions.append((tm, cm))
    return pairs, mentions


def build_instances(doc: Document, provider, graphs: dict, inventory: LabelInventory) -> list[SentenceInstance]:
    """Attach embeddings, graphs and gold labels to each sentence of ``doc``."""
    trig_index = {lab: i for i, lab in enumerate(inventory.trigger_labels)}
    role_index = {lab: i for i, lab in enumerate(inventory.role_labels)}
    mentions = doc.mention_map()
    events = doc.event_map()
    gold_roles: dict[tuple[str, str], str] = {}
    for ev in doc.events:
        for role, target in ev.args:
            target_mention = mentions[events[target].trigger_id] if target in events else mentions.get(target)
            if target_mention is None:
                continue
            key = (ev.trigger_id, target_mention.id)
            if gold_roles.get(key) != "Theme":
                gold_roles[key] = role

    per_sentence: dict[int, tuple[list, list]] = {}
    for m in doc.mentions:
        si, ti = doc.token_of(m)
        if si < 0:
            continue
        bucket = per_sentence.setdefault(si, ([], []))
        (bucket[0] if m.kind == "Protein" else bucket[1]).append((ti, m))

    out = []
    for si, tokens in enumerate(doc.sentences):
        proteins, triggers = per_sentence.get(si, ([], []))
        proteins = sorted(proteins, key=lambda p: (p[0], p[1].id))
        triggers = sorted(triggers, key=lambda p: (p[0], p[1].id))
        labels = np.zeros(len(tokens), dtype=np.int64)
        for ti, m in triggers:
            labels[ti] = trig_index.get(m.label, 0)
        pairs, pair_mentions = candidate_pairs(triggers, proteins + triggers)
        pair_labels = np.array(
            [role_index.get(gold_roles.get((tm.id, cm.id), inventory.NULL), 0) for tm, cm in pair_mentions],
            dtype=np.int64,
        )
        out.append(SentenceInstance(
            doc.doc_id, si, tokens, provider.embed(doc.doc_id, si, tokens),
            graphs.get((doc.doc_id, si)) if graphs else None,
            proteins, triggers, labels, pairs, pair_labels,
        ))
    return out


# --- model -----------------------------------------------------------------


@dataclass
class LossRecord:
    total: Tensor
    l_tri: float
    l_arg: float
    n_tri: int
    n_arg: int

    @property
    def l_total(self) -> float:
        return self.total.item()


def multitask_loss(trigger_logits, trigger_labels, arg_logits, arg_labels, class_weights=None) -> LossRecord:
    """Per-task mean cross-entropy, summed across the two tasks."""
    tri_w = arg_w = None
    if class_weights is not None:
        tri_w, arg_w = class_weights
    l_tri = T.cross_entropy(trigger_logits, trigger_labels, class_weights=tri_w)
    n_arg = 0 if arg_logits is None else arg_logits.shape[0]
    l_arg = T.cross_entropy(arg_logits, arg_labels, class_weights=arg_w) if n_arg else Tensor(0.0)
    return LossRecord(T.add(l_tri, l_arg), l_tri.item(), l_arg.item(), len(trigger_labels), n_arg)


class EventExtractor:
    """Provider embeddings, optionally enriched through the sentence graph, feeding two MLP heads."""

    def __init__(self, config: ModelConfig, inventory: LabelInventory, kge: EmbeddingTable | None,
                 store: ParamStore | None = None):
        self.config = config
        self.inventory = inventory
        self.kge = kge
        self.store = store if store is not None else ParamStore()
        rng = np.random.default_rng(config.seed)
        d_h, d = config.embedding_dim, config.gnn_node_dim
        self.use_kg = config.gnn_variant != "none"
        if self.use_kg:
            if kge is None:
                raise ValueError("a KGE table is required unless gnn_variant is 'none'")
            if kge.dim != d or kge.dim != config.gnn_edge_dim:
                raise DimMismatch(f"KGE dim {kge.dim} must equal GNN node/edge dims "
                                  f"({d}, {config.gnn_edge_dim})")
            self.w_kg = self.store.add("ki.w_kg", glorot(rng, d_h, d))
            self.b_kg = self.store.add("ki.b_kg", np.zeros(d))
            self.w_lm = self.store.add("ki.w_lm", glorot(rng, d, d_h))
            self.b_lm = self.store.add("ki.b_lm", np.zeros(d_h))
            self.layers = [
                GnnLayer.create(self.store, f"gnn.{i}", config.gnn_variant, d, config.gnn_edge_dim,
                                rng, config.dropout)
                for i in range(config.gnn_layers)
            ]
            if config.freeze_kge:
                self.node_table = Tensor(kge.node_matrix)
                self.relation_table = Tensor(kge.relation_matrix)
            else:
                self.node_table = self.store.add("kge.nodes", kge.node_matrix)
                self.relation_table = self.store.add("kge.relations", kge.relation_matrix)
        self.trigger_mlp = MLP(self.store, "head.trigger", d_h, config.trigger_mlp_dim,
                               len(inventory.trigger_labels), rng, config.dropout)
        self.arg_mlp = MLP(self.store, "head.argument", 2 * d_h, config.relation_mlp_dim,
                           len(inventory.role_labels), rng, config.dropout)
        self.unknown_nodes = 0
        self.unknown_relations = 0

    def class_weights(self):
        if self.config.null_weight == 1.0:
            return None
        tri = np.ones(len(self.inventory.trigger_labels))
        arg = np.ones(len(self.inventory.role_labels))
        tri[0] = arg[0] = self.config.null_weight
        return tri, arg

    # knowledge incorporation

    def init_graph_states(self, graph: SentenceGraph, embeddings: np.ndarray) -> GraphBatch:
        """Initial node states and summed edge embeddings for one sentence graph."""
        if embeddings.shape[1] != self.config.embedding_dim:
            raise DimMismatch(f"embeddings have width {embeddings.shape[1]}, "
                              f"expected {self.config.embedding_dim}")
        n = len(graph.nodes)
        aligned: dict[int, list[int]] = {}
        for tok, node in graph.token_alignment.items():
            aligned.setdefault(node, []).append(tok)
        # token nodes copy the projected state of their concept
        token_concept = {}
        for u, v, labels in graph.edges:
            for a, b in ((u, v), (v, u)):
                if graph.nodes[a][0] == TOKEN_NODE and graph.nodes[b][0] == CONCEPT_NODE:
                    token_concept[a] = b

        proj_nodes, proj_rows, kge_nodes, kge_rows = [], [], [], []
        for i, (kind, ref) in enumerate(graph.nodes):
            source = i if kind == CONCEPT_NODE else token_concept.get(i)
            if source is not None and source in aligned:
                proj_nodes.append(i)
                proj_rows.append(embeddings[sorted(aligned[source])].mean(axis=0))
            elif kind in (CONCEPT_NODE, SEMANTIC_NODE) and ref in self.kge.node_index:
                kge_nodes.append(i)
                kge_rows.append(self.kge.node_index[ref])
            else:
                self.unknown_nodes += 1
        parts, seg = [], []
        if kge_nodes:
            parts.append(T.gather_rows(self.node_table, kge_rows))
            seg.extend(kge_nodes)
        if proj_nodes:
            parts.append(T.add(T.matmul(Tensor(np.stack(proj_rows)), self.w_kg), self.b_kg))
            seg.extend(proj_nodes)
        if parts:
            x0 = T.scatter_sum(T.concat(parts, axis=0) if len(parts) > 1 else parts[0], seg, n)
        else:
            x0 = Tensor(np.zeros((n, self.config.gnn_node_dim)))

        rel_rows, rel_seg = [], []
        for k, (_, _, labels) in enumerate(graph.edges):
            for lab in labels:
                if lab in self.kge.relation_index:
                    rel_rows.append(self.kge.relation_index[lab])
                    rel_seg.append(k)
                else:
                    self.unknown_relations += 1
        n_edges = len(graph.edges)
        if rel_rows:
            e = T.scatter_sum(T.gather_rows(self.relation_table, rel_rows), rel_seg, n_edges)
        else:
            e = Tensor(np.zeros((n_edges, self.config.gnn_edge_dim)))
        return GraphBatch.from_undirected(x0, [(u, v) for u, v, _ in graph.edges], e)

    def knowledge_aware_embeddings(self, embeddings: np.ndarray, graph: SentenceGraph | None,
                                   training: bool = False, rng=None) -> Tensor:
        """``h + (state of the token's concept) W_LM + b_LM`` for mapped tokens, ``h`` otherwise."""
        h = Tensor(embeddings)
        if not self.use_kg or graph is None or not graph.token_alignment:
            return h
        batch = self.init_graph_states(graph, embeddings)
        states = stack_forward(batch, self.layers, training, rng)
        toks = sorted(graph.token_alignment)
        nodes = [graph.token_alignment[t] for t in toks]
        readout = T.add(T.matmul(T.gather_rows(states, nodes), self.w_lm), self.b_lm)
        return T.add(h, T.scatter_sum(readout, toks, len(embeddings)))

    # heads

    def trigger_scores(self, hhat: Tensor, training: bool = False, rng=None) -> Tensor:
        return self.trigger_mlp(hhat, training, rng)

    def argument_scores(self, hhat: Tensor, pairs, training: bool = False, rng=None) -> Tensor | None:
        if not pairs:
            return None
        idx = np.asarray(pairs, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= hhat.shape[0]:
            raise IndexError(f"pair index outside [0, {hhat.shape[0]})")
        joined = T.concat([T.gather_rows(hhat, idx[:, 0]), T.gather_rows(hhat, idx[:, 1])], axis=1)
        return self.arg_mlp(joined, training, rng)

    def forward(self, inst: SentenceInstance, pairs, training: bool = False, rng=None):
        hhat = self.knowledge_aware_embeddings(inst.embeddings, inst.graph, training, rng)
        return self.trigger_scores(hhat, training, rng), self.argument_scores(hhat, pairs, training, rng)

    # inference

    def decode(self, inst: SentenceInstance, next_id) -> tuple[list[Mention], list[ArgumentEdge], np.ndarray]:
        """Predicted triggers (token spans) and argument edges for one sentence.

        ``next_id`` yields fresh trigger ids. Also returns the trigger logits.
        """
        hhat = self.knowledge_aware_embeddings(inst.embeddings, inst.graph)
        tri_logits = self.trigger_scores(hhat).data
        labels = self.inventory.trigger_labels
        triggers: list[tuple[int, Mention]] = []
        for ti, cls in enumerate(tri_logits.argmax(axis=1)):
            if cls == 0:
                continue
            tok = inst.tokens[ti]
            triggers.append((ti, Mention(next_id(), "Trigger", labels[cls], tok.char_start, tok.char_end, tok.text)))
        pairs, pair_mentions = candidate_pairs(triggers, inst.proteins + triggers)
        edges = []
        arg_logits = self.argument_scores(hhat, pairs)
        if arg_logits is not None:
            roles = self.inventory.role_labels
            for (tm, cm), cls in zip(pair_mentions, arg_logits.data.argmax(axis=1)):
                if cls != 0:
                    edges.append(ArgumentEdge(tm, cm, roles[cls]))
        return [m for _, m in triggers], edges, tri_logits
