"""TransE pretraining for KG node and relation embeddings (L1 distance, margin loss)."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .kg import DimMismatch, EmbeddingTable, KnowledgeGraph, Triple

log = logging.getLogger(__name__)


class ExhaustedCandidates(ValueError):
    pass


class EmptyEvalSet(ValueError):
    pass


@dataclass
class TransEConfig:
    dim: int = 300
    margin: float = 3.0
    learning_rate: float = 0.5
    batch_size: int = 128
    negative_ratio: int = 25
    epochs: int = 500
    checkpoint_interval: int = 50
    dev_fraction: float = 0.1

    def __post_init__(self):
        if self.margin <= 0:
            raise ValueError("margin must be positive")
        if self.negative_ratio < 1:
            raise ValueError("negative_ratio must be >= 1")
        if self.dim <= 0 or self.batch_size <= 0 or self.checkpoint_interval <= 0:
            raise ValueError("dim, batch_size and checkpoint_interval must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def transe_score(h, r, t) -> float:
    """L1 translation distance ``|h + r - t|_1``."""
    h, r, t = (np.asarray(v, dtype=np.float64) for v in (h, r, t))
    if not (h.shape == r.shape == t.shape):
        raise DimMismatch(f"shapes {h.shape}, {r.shape}, {t.shape}")
    return float(np.abs(h + r - t).sum())


def transe_loss(gold_scores, negative_scores, margin: float) -> float:
    """Sum of ``max(0, d_gold - d_neg + margin)`` over each gold and its negatives.

    ``negative_scores`` has one row per gold score (or is 1-D, one negative each).
    """
    gold = np.asarray(gold_scores, dtype=np.float64)
    neg = np.asarray(negative_scores, dtype=np.float64)
    if neg.ndim == gold.ndim:
        neg = neg[..., None]
    return float(np.maximum(0.0, gold[..., None] - neg + margin).sum())


class NegativeSampler:
    """Corrupts head or tail with a random same-layer entity, never producing a gold triple."""

    def __init__(self, kg: KnowledgeGraph, gold: set[tuple[str, str, str]] | None = None):
        self.layers = {
            "concept": sorted(kg.concept_nodes),
            "semantic": sorted(kg.semantic_nodes),
        }
        self.layer_of = {e: layer for layer, ids in self.layers.items() for e in ids}
        if gold is None:
            gold = {(t.head, t.relation, t.tail) for t in kg.training_triples()}
        self.gold = gold

    def candidates(self, triple: tuple[str, str, str]) -> list[tuple[str, str, str]]:
        h, r, t = triple
        out = [(e, r, t) for e in self.layers[self.layer_of[h]] if e != h and (e, r, t) not in self.gold]
        out += [(h, r, e) for e in self.layers[self.layer_of[t]] if e != t and (h, r, e) not in self.gold]
        return out

    def sample(self, triple, ratio: int, rng: np.random.Generator) -> list[tuple[str, str, str]]:
        h, r, t = triple
        heads = self.layers[self.layer_of[h]]
        tails = self.layers[self.layer_of[t]]
        picked: list[tuple[str, str, str]] = []
        seen: set[tuple[str, str, str]] = set()
        # rejection sampling first; enumerate only when it struggles
        for _ in range(4 * ratio):
            if rng.random() < 0.5:
                cand = (heads[rng.integers(len(heads))], r, t)
            else:
                cand = (h, r, tails[rng.integers(len(tails))])
            if cand == triple or cand in self.gold or cand in seen:
                continue
            seen.add(cand)
            picked.append(cand)
            if len(picked) == ratio:
                return picked
        pool = [c for c in self.candidates(triple) if c not in seen]
        need = ratio - len(picked)
        if len(pool) < need:
            raise ExhaustedCandidates(
                f"{triple}: only {len(pool) + len(picked)} distinct negatives, {ratio} requested"
            )
        idx = rng.choice(len(pool), size=need, replace=False)
        picked.extend(pool[i] for i in sorted(idx))
        return picked


def sample_negatives(kg: KnowledgeGraph, gold, ratio: int, rng_seed) -> list[tuple[str, str, str]]:
    triple = (gold.head, gold.relation, gold.tail) if isinstance(gold, Triple) else tuple(gold)
    rng = rng_seed if isinstance(rng_seed, np.random.Generator) else np.random.default_rng(rng_seed)
    return NegativeSampler(kg).sample(triple, ratio, rng)


def split_dev(triples: list[Triple], fraction: float) -> tuple[list[Triple], list[Triple]]:
    """Deterministic hash-based (train, dev) split."""

    def bucket(t: Triple) -> int:
        digest = hashlib.sha1(f"{t.head}\t{t.relation}\t{t.tail}".encode()).hexdigest()
        return int(digest[:8], 16) % 10000

    dev = [t for t in triples if bucket(t) < fraction * 10000]
    if not dev and fraction > 0 and len(triples) >= 2:
        dev = [min(triples, key=bucket)]
    dev_set = set(dev)
    return [t for t in triples if t not in dev_set], dev


def init_table(kg: KnowledgeGraph, dim: int, rng: np.random.Generator) -> EmbeddingTable:
    bound = 6.0 / np.sqrt(dim)
    nodes = kg.entity_ids()
    labels = kg.relation_labels
    node_m = rng.uniform(-bound, bound, size=(len(nodes), dim))
    rel_m = rng.uniform(-bound, bound, size=(len(labels), dim))
    return EmbeddingTable(dim, nodes, node_m, labels, rel_m)


def mrr(kg: KnowledgeGraph, table: EmbeddingTable, eval_triples, known_triples=None) -> float:
    """Filtered mean reciprocal rank of gold tails among same-layer candidates.

    Candidates scoring below the gold tail rank ahead of it; equal scores are
    ordered by entity id.
    """
    eval_triples = list(eval_triples)
    if not eval_triples:
        raise EmptyEvalSet("no evaluation triples")
    if known_triples is None:
        known_triples = kg.training_triples()
    known = {(t.head, t.relation, t.tail) for t in known_triples}
    known |= {(t.head, t.relation, t.tail) for t in eval_triples}
    layers = {"concept": sorted(kg.concept_nodes), "semantic": sorted(kg.semantic_nodes)}
    total = 0.0
    for t in eval_triples:
        cands = layers[kg.layer_of(t.tail)]
        idx = np.array([table.node_index[c] for c in cands])
        h = table.node_vector(t.head) + table.relation_vector(t.relation)
        scores = np.abs(h[None, :] - table.node_matrix[idx]).sum(axis=1)
        gold_score = scores[cands.index(t.tail)]
        rank = 1
        for c, s in zip(cands, scores):
            if c == t.tail or (t.head, t.relation, c) in known:
                continue
            if s < gold_score or (s == gold_score and c < t.tail):
                rank += 1
        total += 1.0 / rank
    return total / len(eval_triples)


@dataclass
class TransERun:
    table: EmbeddingTable
    initial_table: EmbeddingTable
    epoch_losses: list[float] = field(default_factory=list)
    checkpoints: list[tuple[int, float]] = field(default_factory=list)  # (epoch, dev MRR)
    best_epoch: int = 0
    dev_triples: list[Triple] = field(default_factory=list)


def train_transe(kg: KnowledgeGraph, config: TransEConfig, seed: int = 0) -> TransERun:
    triples = kg.training_triples()
    if len(kg.entity_ids()) < 2 or not triples:
        raise ValueError("TransE needs at least 2 entities and 1 relation")
    rng = np.random.default_rng(seed)
    table = init_table(kg, config.dim, rng)
    run = TransERun(table=table.copy(), initial_table=table.copy())
    train, dev = split_dev(triples, config.dev_fraction)
    if not train:
        train = dev
    run.dev_triples = dev
    if config.epochs <= 0:
        return run

    sampler = NegativeSampler(kg, {(t.head, t.relation, t.tail) for t in triples})
    n_idx, r_idx = table.node_index, table.relation_index
    params = [table.node_matrix, table.relation_matrix]
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    step = 0

    best = table.copy()
    best_mrr = mrr(kg, table, dev, triples) if dev else 0.0
    run.checkpoints.append((0, best_mrr))

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(len(train))
        epoch_loss, n_pairs = 0.0, 0
        for start in range(0, len(order), config.batch_size):
            batch = [train[i] for i in order[start:start + config.batch_size]]
            gh, gr, gt, nh, nt = [], [], [], [], []
            for tr in batch:
                negs = sampler.sample((tr.head, tr.relation, tr.tail), config.negative_ratio, rng)
                for h2, _, t2 in negs:
                    gh.append(n_idx[tr.head])
                    gr.append(r_idx[tr.relation])
                    gt.append(n_idx[tr.tail])
                    nh.append(n_idx[h2])
                    nt.append(n_idx[t2])
            gh, gr, gt, nh, nt = map(np.asarray, (gh, gr, gt, nh, nt))
            E, R = table.node_matrix, table.relation_matrix
            diff_g = E[gh] + R[gr] - E[gt]
            diff_n = E[nh] + R[gr] - E[nt]
            hinge = np.abs(diff_g).sum(1) - np.abs(diff_n).sum(1) + config.margin
            active = hinge > 0
            epoch_loss += float(hinge[active].sum())
            n_pairs += len(hinge)

            sg = np.sign(diff_g[active])
            sn = np.sign(diff_n[active])
            gE = np.zeros_like(E)
            gR = np.zeros_like(R)
            np.add.at(gE, gh[active], sg)
            np.add.at(gE, gt[active], -sg)
            np.add.at(gE, nh[active], -sn)
            np.add.at(gE, nt[active], sn)
            np.add.at(gR, gr[active], sg - sn)

            step += 1
            for k, (p, g) in enumerate(zip(params, (gE, gR))):
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                mhat = m[k] / (1 - beta1 ** step)
                vhat = v[k] / (1 - beta2 ** step)
                p -= config.learning_rate * mhat / (np.sqrt(vhat) + eps)
            touched = np.unique(np.concatenate([gh, gt, nh, nt]))
            norms = np.linalg.norm(table.node_matrix[touched], axis=1, keepdims=True)
            table.node_matrix[touched] /= np.maximum(norms, 1.0)

        mean_loss = epoch_loss / max(n_pairs, 1)
        run.epoch_losses.append(mean_loss)
        log.debug("transe epoch %d loss %.6f", epoch, mean_loss)

        if dev and (epoch % config.checkpoint_interval == 0 or epoch == config.epochs):
            score = mrr(kg, table, dev, triples)
            run.checkpoints.append((epoch, score))
            log.info("transe epoch %d dev MRR %.4f", epoch, score)
            if score > best_mrr:
                best_mrr, best = score, table.copy()
                run.best_epoch = epoch
            else:
                break
        elif not dev and epoch == config.epochs:
            best = table.copy()
            run.best_epoch = epoch

    run.table = best
    return run


def pretrain_kge(kg: KnowledgeGraph, config: TransEConfig, rng_seed: int = 0) -> EmbeddingTable:
    return train_transe(kg, config, rng_seed).table
