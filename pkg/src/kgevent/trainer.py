"""Multitask training with dev-F1 early stopping, grid search, checkpoints and prediction."""

from __future__ import annotations

import csv
import io
import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .config import LabelInventory, ModelConfig
from .evaluation import MatchCriteria, UnmergeStats, evaluate, unmerge
from .extractor import EventExtractor, SentenceInstance, build_instances, make_provider, multitask_loss
from .graphs import SentenceGraph
from .kg import EmbeddingTable
from .standoff import Corpus, Document, id_key

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "loss_tri", "loss_arg", "dev_p", "dev_r", "dev_f1")
READOUT_PARAMS = ("ki.w_lm", "ki.b_lm")


class EmptyCorpus(ValueError):
    pass


@dataclass
class EpochLog:
    epoch: int
    loss_tri: float
    loss_arg: float
    dev_p: float
    dev_r: float
    dev_f1: float

    def row(self) -> list[str]:
        return [str(self.epoch), f"{self.loss_tri:.6f}", f"{self.loss_arg:.6f}",
                f"{self.dev_p:.6f}", f"{self.dev_r:.6f}", f"{self.dev_f1:.6f}"]


@dataclass
class Checkpoint:
    config: ModelConfig
    inventory: LabelInventory
    params: dict[str, np.ndarray]
    kge: EmbeddingTable | None
    best_dev_f1: float
    epoch: int
    history: list[EpochLog] = field(default_factory=list)
    ablate_readout: bool = False

    def model(self) -> EventExtractor:
        model = EventExtractor(self.config, self.inventory, self.kge)
        model.store.restore(self.params)
        return model

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "config.json").write_text(json.dumps(self.config.to_dict(), indent=2, sort_keys=True) + "\n")
        (d / "labels.json").write_text(json.dumps(self.inventory.to_dict(), indent=2) + "\n")
        store = T.ParamStore()
        for name, value in self.params.items():
            store.add(name, value)
        store.save(d)
        if self.kge is not None:
            self.kge.save(d / "kge.bin")
        meta = {"best_dev_f1": self.best_dev_f1, "epoch": self.epoch, "ablate_readout": self.ablate_readout}
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
        write_log(self.history, d / "train_log.csv")

    @classmethod
    def load(cls, directory) -> "Checkpoint":
        d = Path(directory)
        config = ModelConfig.from_dict(json.loads((d / "config.json").read_text()))
        inventory = LabelInventory.from_dict(json.loads((d / "labels.json").read_text()))
        kge = EmbeddingTable.load(d / "kge.bin") if (d / "kge.bin").exists() else None
        model = EventExtractor(config, inventory, kge)
        model.store.load(d)
        meta = json.loads((d / "meta.json").read_text())
        history = read_log(d / "train_log.csv") if (d / "train_log.csv").exists() else []
        return cls(config, inventory, model.store.snapshot(), kge, meta["best_dev_f1"], meta["epoch"],
                   history, meta.get("ablate_readout", False))


def write_log(history: list[EpochLog], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for h in history:
            w.writerow(h.row())


def read_log(path) -> list[EpochLog]:
    with open(path, encoding="utf-8") as fh:
        return [EpochLog(int(r["epoch"]), *(float(r[k]) for k in LOG_FIELDS[1:])) for r in csv.DictReader(fh)]


# --- prediction ------------------------------------------------------------


def _next_trigger_id(doc: Document):
    nums = [id_key(m.id)[1] for m in doc.proteins]
    counter = itertools.count(max(nums, default=0) + 1)
    return lambda: f"T{next(counter)}"


def predict_instances(model: EventExtractor, doc: Document, instances: list[SentenceInstance],
                      stats: UnmergeStats | None = None) -> Document:
    """Predicted triggers and unmerged events for one document, proteins copied from ``doc``."""
    next_id = _next_trigger_id(doc)
    triggers, edges = [], []
    for inst in instances:
        if not inst.tokens:
            continue
        tri, arg, _ = model.decode(inst, next_id)
        triggers.extend(tri)
        edges.extend(arg)
    events = unmerge(triggers, edges, stats=stats)
    used = {e.trigger_id for e in events}
    kept = [t for t in triggers if t.id in used]
    return Document(doc.doc_id, doc.text, doc.sentences, list(doc.proteins), kept, events)


def predict(corpus: Corpus, graphs: dict, model: EventExtractor, provider=None) -> list[Document]:
    provider = provider or make_provider(model.config)
    out = []
    for doc in corpus:
        inst = build_instances(doc, provider, graphs, model.inventory)
        out.append(predict_instances(model, doc, inst))
    return out


def sentence_logits(model: EventExtractor, instances: list[SentenceInstance]) -> list[np.ndarray]:
    """Trigger logits plus gold-pair argument logits per sentence, for bitwise comparisons."""
    out = []
    for inst in instances:
        if not inst.tokens:
            continue
        tri, arg = model.forward(inst, inst.gold_pairs)
        out.append(tri.data.copy())
        if arg is not None:
            out.append(arg.data.copy())
    return out


# --- training --------------------------------------------------------------


@dataclass
class PreparedCorpus:
    corpus: Corpus
    instances: list[list[SentenceInstance]]

    def flat(self) -> list[SentenceInstance]:
        return [i for doc in self.instances for i in doc if i.tokens]


def prepare(corpus: Corpus, graphs: dict, provider, inventory: LabelInventory) -> PreparedCorpus:
    return PreparedCorpus(corpus, [build_instances(d, provider, graphs, inventory) for d in corpus])


def dev_score(model: EventExtractor, dev: PreparedCorpus, criteria: MatchCriteria = MatchCriteria()):
    preds = [predict_instances(model, doc, inst) for doc, inst in zip(dev.corpus, dev.instances)]
    return evaluate(preds, list(dev.corpus), criteria).total


def _batch_loss(model: EventExtractor, batch: list[SentenceInstance], rng):
    tri_logits, tri_labels, arg_logits, arg_labels = [], [], [], []
    for inst in batch:
        tri, arg = model.forward(inst, inst.gold_pairs, training=True, rng=rng)
        tri_logits.append(tri)
        tri_labels.append(inst.trigger_labels)
        if arg is not None:
            arg_logits.append(arg)
            arg_labels.append(inst.gold_pair_labels)
    tri = T.concat(tri_logits, axis=0) if len(tri_logits) > 1 else tri_logits[0]
    arg = None
    if arg_logits:
        arg = T.concat(arg_logits, axis=0) if len(arg_logits) > 1 else arg_logits[0]
    return multitask_loss(tri, np.concatenate(tri_labels), arg,
                          np.concatenate(arg_labels) if arg_labels else None, model.class_weights())


def train(train_corpus: Corpus, dev_corpus: Corpus, graphs: dict, config: ModelConfig,
          kge: EmbeddingTable | None, inventory: LabelInventory | None = None,
          ablate_readout: bool = False, log_path=None, stop_at_perfect: bool = True) -> Checkpoint:
    """Train on ``train_corpus``; keep the parameters with the best dev total F1.

    ``ablate_readout`` zeroes and freezes W_LM and b_LM, which reduces the
    model to the provider embeddings plus heads (the no-GNN baseline).
    Training also stops once dev F1 reaches 1.0, since it can no longer improve.
    """
    inventory = inventory or LabelInventory()
    provider = make_provider(config)
    train_set = prepare(train_corpus, graphs, provider, inventory)
    dev_set = prepare(dev_corpus, graphs, provider, inventory)
    sentences = train_set.flat()
    if not sentences:
        raise EmptyCorpus("training corpus has no tokens")
    if not dev_set.flat() and len(dev_corpus) == 0:
        raise EmptyCorpus("dev corpus is empty")

    model = EventExtractor(config, inventory, kge)
    frozen: tuple[str, ...] = ()
    if ablate_readout and model.use_kg:
        for name in READOUT_PARAMS:
            model.store[name].data[...] = 0.0
        frozen = tuple(n for n, _ in model.store if n.startswith(("ki.", "gnn.")))
    if model.use_kg:
        for name in ("kge.nodes", "kge.relations"):
            if name in model.store and config.freeze_kge:
                frozen += (name,)
    rng = np.random.default_rng(config.seed)

    score = dev_score(model, dev_set)
    best = Checkpoint(config, inventory, model.store.snapshot(), kge, score.f1, 0,
                      [EpochLog(0, float("nan"), float("nan"), *score.prf())], ablate_readout)
    history = best.history
    stale = 0
    step = 0
    for epoch in range(1, config.max_epochs + 1):
        if stop_at_perfect and best.best_dev_f1 >= 1.0:
            break
        order = rng.permutation(len(sentences))
        sum_tri = sum_arg = 0.0
        n_batches = 0
        for start in range(0, len(order), config.batch_size):
            batch = [sentences[i] for i in order[start:start + config.batch_size]]
            rec = _batch_loss(model, batch, rng)
            T.backward(rec.total)
            step += 1
            lr = config.learning_rate
            if config.warmup_steps:
                lr *= min(1.0, step / config.warmup_steps)
            for name, p in model.store:
                if p.grad is None:
                    p.grad = np.zeros_like(p.data)
            T.adam_step(model.store, lr, config.adam_beta1, config.adam_beta2, config.adam_eps, frozen)
            sum_tri += rec.l_tri
            sum_arg += rec.l_arg
            n_batches += 1
        score = dev_score(model, dev_set)
        entry = EpochLog(epoch, sum_tri / n_batches, sum_arg / n_batches, *score.prf())
        history.append(entry)
        log.info("epoch %d L_tri %.4f L_arg %.4f dev F1 %.4f", epoch, entry.loss_tri, entry.loss_arg, score.f1)
        if score.f1 > best.best_dev_f1:
            best.params = model.store.snapshot()
            best.best_dev_f1 = score.f1
            best.epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= config.patience:
                break
    if log_path is not None:
        write_log(history, log_path)
    return best


# --- grid search -----------------------------------------------------------


def grid_points(base: ModelConfig, space: dict[str, list]) -> list[ModelConfig]:
    if not space or any(len(v) == 0 for v in space.values()):
        raise ValueError("grid search space must be nonempty")
    keys = list(space)
    return [base.replace(**dict(zip(keys, values))) for values in itertools.product(*(space[k] for k in keys))]


def _trial(args):
    index, train_corpus, dev_corpus, graphs, config_dict, kge, out_dir = args
    config = ModelConfig.from_dict(config_dict)
    ckpt = train(train_corpus, dev_corpus, graphs, config, kge)
    if out_dir is not None:
        ckpt.save(Path(out_dir) / f"trial_{index:03d}")
    return index, ckpt


@dataclass
class GridResult:
    best_config: ModelConfig
    best: Checkpoint
    table: list[dict]

    def table_tsv(self) -> str:
        if not self.table:
            return ""
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(self.table[0]), delimiter="\t", lineterminator="\n")
        w.writeheader()
        w.writerows(self.table)
        return buf.getvalue()


def grid_search(train_corpus: Corpus, dev_corpus: Corpus, graphs: dict, base: ModelConfig,
                space: dict[str, list], kge: EmbeddingTable | None, jobs: int = 1, out_dir=None) -> GridResult:
    """Exhaustive search; best dev F1 wins, ties go to the earlier grid point."""
    points = grid_points(base, space)
    tasks = [(i, train_corpus, dev_corpus, graphs, p.to_dict(), kge, out_dir) for i, p in enumerate(points)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(pool.map(_trial, tasks))
    else:
        results = dict(map(_trial, tasks))
    table = []
    for i, p in enumerate(points):
        row = {"trial": i, **{k: getattr(p, k) for k in space}}
        row.update(best_epoch=results[i].epoch, dev_f1=f"{results[i].best_dev_f1:.6f}")
        table.append(row)
    best_i = max(range(len(points)), key=lambda i: (results[i].best_dev_f1, -i))
    return GridResult(points[best_i], results[best_i], table)


def graphs_from_list(graphs: list[SentenceGraph]) -> dict[tuple[str, int], SentenceGraph]:
    return {(g.doc_id, g.sentence_index): g for g in graphs}
