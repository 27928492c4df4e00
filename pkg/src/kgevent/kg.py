"""Two-level knowledge graph (concept network + semantic network) and embedding tables."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CONCEPT_CONCEPT = "ConceptConcept"
CONCEPT_SEMANTIC = "ConceptSemantic"
SEMANTIC_SEMANTIC = "SemanticSemantic"
LAYERS = (CONCEPT_CONCEPT, CONCEPT_SEMANTIC, SEMANTIC_SEMANTIC)

HAS_SEMANTIC_TYPE = "has_semantic_type"
MAPPED_TO = "mapped_to"


class KGError(ValueError):
    pass


class UnknownEndpoint(KGError):
    def __init__(self, node_id: str, line_no: int | None = None):
        self.node_id = node_id
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"unknown relation endpoint {node_id!r}{where}")


class InconsistentLayer(KGError):
    pass


class DimMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Triple:
    head: str
    relation: str
    tail: str
    layer: str


@dataclass
class KnowledgeGraph:
    concept_nodes: dict[str, tuple[str, tuple[str, ...]]] = field(default_factory=dict)
    semantic_nodes: dict[str, str] = field(default_factory=dict)
    relations: list[Triple] = field(default_factory=list)

    @property
    def relation_labels(self) -> list[str]:
        return sorted({t.relation for t in self.training_triples()})

    def entity_ids(self) -> list[str]:
        return sorted(self.concept_nodes) + sorted(self.semantic_nodes)

    def layer_of(self, node_id: str) -> str:
        if node_id in self.concept_nodes:
            return "concept"
        if node_id in self.semantic_nodes:
            return "semantic"
        raise UnknownEndpoint(node_id)

    def semantic_types(self, concept_id: str) -> tuple[str, ...]:
        return self.concept_nodes[concept_id][1]

    def training_triples(self) -> list[Triple]:
        """Explicit relations plus one implied edge per declared semantic type."""
        out = list(self.relations)
        linked = {(t.head, t.tail) for t in self.relations if t.layer == CONCEPT_SEMANTIC}
        for cid in sorted(self.concept_nodes):
            for sty in self.concept_nodes[cid][1]:
                if (cid, sty) not in linked:
                    out.append(Triple(cid, HAS_SEMANTIC_TYPE, sty, CONCEPT_SEMANTIC))
        return out

    def concept_adjacency(self) -> dict[str, set[str]]:
        """Undirected view of the concept layer over every concept node."""
        adj: dict[str, set[str]] = {c: set() for c in self.concept_nodes}
        for t in self.relations:
            if t.layer == CONCEPT_CONCEPT and t.head != t.tail:
                adj[t.head].add(t.tail)
                adj[t.tail].add(t.head)
        return adj

    def labels_between(self, u: str, v: str, layer: str) -> list[str]:
        """Relation labels linking u and v in either direction (a multiset, sorted)."""
        index = self._pair_index()
        return sorted(index.get((layer, u, v), []) + (index.get((layer, v, u), []) if u != v else []))

    def _pair_index(self) -> dict[tuple[str, str, str], list[str]]:
        cache = getattr(self, "_pairs", None)
        if cache is None or cache[0] != len(self.relations):
            idx: dict[tuple[str, str, str], list[str]] = {}
            for t in self.relations:
                idx.setdefault((t.layer, t.head, t.tail), []).append(t.relation)
            cache = (len(self.relations), idx)
            self._pairs = cache
        return cache[1]

    def semantic_neighbors(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {}
        for t in self.relations:
            if t.layer == SEMANTIC_SEMANTIC:
                adj.setdefault(t.head, set()).add(t.tail)
                adj.setdefault(t.tail, set()).add(t.head)
        return adj


def load_kg(triples_file, semantic_types_file, semantic_names_file=None) -> KnowledgeGraph:
    """Read a KG from TSV files.

    ``semantic_types_file``: ``concept_id<TAB>name<TAB>type_id,type_id``.
    ``triples_file``: ``head<TAB>relation<TAB>tail<TAB>layer``.
    ``semantic_names_file`` (optional): ``type_id<TAB>name``.
    """
    kg = KnowledgeGraph()
    for no, fields in _tsv(semantic_types_file):
        if len(fields) not in (2, 3):
            raise KGError(f"{semantic_types_file}:{no}: expected 2 or 3 fields")
        cid, name = fields[0], fields[1]
        types = tuple(t for t in (fields[2].split(",") if len(fields) == 3 else []) if t)
        kg.concept_nodes[cid] = (name, types)
        for t in types:
            kg.semantic_nodes.setdefault(t, t)
    if semantic_names_file is not None and Path(semantic_names_file).exists():
        for no, fields in _tsv(semantic_names_file):
            if len(fields) != 2:
                raise KGError(f"{semantic_names_file}:{no}: expected 2 fields")
            kg.semantic_nodes[fields[0]] = fields[1]
    overlap = set(kg.concept_nodes) & set(kg.semantic_nodes)
    if overlap:
        raise InconsistentLayer(f"ids used as both concept and semantic type: {sorted(overlap)}")

    seen: set[tuple[str, str, str]] = set()
    for no, fields in _tsv(triples_file):
        if len(fields) != 4:
            raise KGError(f"{triples_file}:{no}: expected 4 fields")
        head, rel, tail, layer = fields
        if layer not in LAYERS:
            raise InconsistentLayer(f"line {no}: unknown layer {layer!r}")
        for node in (head, tail):
            if node not in kg.concept_nodes and node not in kg.semantic_nodes:
                raise UnknownEndpoint(node, no)
        want = {
            CONCEPT_CONCEPT: ("concept", "concept"),
            CONCEPT_SEMANTIC: ("concept", "semantic"),
            SEMANTIC_SEMANTIC: ("semantic", "semantic"),
        }[layer]
        if (kg.layer_of(head), kg.layer_of(tail)) != want:
            raise InconsistentLayer(f"line {no}: {head} {rel} {tail} is not a {layer} edge")
        if layer == CONCEPT_SEMANTIC and tail not in kg.concept_nodes[head][1]:
            raise InconsistentLayer(f"line {no}: {tail} is not a declared semantic type of {head}")
        if (head, rel, tail) in seen:
            continue
        seen.add((head, rel, tail))
        kg.relations.append(Triple(head, rel, tail, layer))
    return kg


def load_kg_dir(directory) -> KnowledgeGraph:
    d = Path(directory)
    return load_kg(d / "triples.tsv", d / "concepts.tsv", d / "semantic_types.tsv")


def _tsv(path):
    with open(path, encoding="utf-8") as fh:
        for no, line in enumerate(fh, start=1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip() or line.startswith("#"):
                continue
            yield no, line.split("\t")


@dataclass
class EmbeddingTable:
    """Node and relation vectors, each a row of a dense matrix."""

    dim: int
    node_ids: list[str]
    node_matrix: np.ndarray
    relation_labels: list[str]
    relation_matrix: np.ndarray

    def __post_init__(self):
        self.node_index = {n: i for i, n in enumerate(self.node_ids)}
        self.relation_index = {r: i for i, r in enumerate(self.relation_labels)}
        for name, m, n in (("node", self.node_matrix, len(self.node_ids)),
                           ("relation", self.relation_matrix, len(self.relation_labels))):
            if m.shape != (n, self.dim):
                raise DimMismatch(f"{name} matrix has shape {m.shape}, expected {(n, self.dim)}")

    def node_vector(self, node_id: str) -> np.ndarray:
        return self.node_matrix[self.node_index[node_id]]

    def relation_vector(self, label: str) -> np.ndarray:
        return self.relation_matrix[self.relation_index[label]]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(self.dim, list(self.node_ids), self.node_matrix.copy(),
                              list(self.relation_labels), self.relation_matrix.copy())

    def save(self, path) -> None:
        header = {
            "dim": self.dim,
            "node_count": len(self.node_ids),
            "relation_count": len(self.relation_labels),
            "nodes": self.node_ids,
            "relations": self.relation_labels,
        }
        with open(path, "wb") as fh:
            fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
            fh.write(np.ascontiguousarray(self.node_matrix, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(self.relation_matrix, dtype="<f8").tobytes())

    @classmethod
    def load(cls, path) -> "EmbeddingTable":
        with open(path, "rb") as fh:
            header = json.loads(fh.readline().decode("utf-8"))
            body = fh.read()
        dim, n, r = header["dim"], header["node_count"], header["relation_count"]
        data = np.frombuffer(body, dtype="<f8").astype(np.float64)
        if data.size != (n + r) * dim:
            raise DimMismatch(f"{path}: expected {(n + r) * dim} floats, found {data.size}")
        return cls(dim, list(header["nodes"]), data[: n * dim].reshape(n, dim).copy(),
                   list(header["relations"]), data[n * dim:].reshape(r, dim).copy())
