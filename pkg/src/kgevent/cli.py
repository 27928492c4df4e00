"""Command-line entry point: ``kgevent <subcommand> ...``.

Exit codes: 0 success, 1 invalid flags or inputs, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import shutil
import sys
from pathlib import Path

from . import gradcheck
from .config import (DATA, ModelConfig, load_graph_config, load_grid_space, load_labels, load_model_config,
                     load_transe_config)
from .evaluation import REGULATION_GROUP, REGULATION_TYPES, TOTAL, MatchCriteria, evaluate
from .graphs import LexiconError, build_corpus_graphs, load_lexicon, read_graphs, write_graphs
from .kg import EmbeddingTable, KGError, load_kg_dir
from .manifest import MANIFEST_NAME, PipelineManifest, StaleArtifact
from .standoff import Corpus, StandoffError, load_corpus, write_corpus
from .trainer import Checkpoint, grid_search, predict, train
from .transe import TransEConfig, mrr, train_transe

log = logging.getLogger("kgevent")

FIXTURES = DATA / "fixtures"


class UsageError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


VALIDATION_ERRORS = (UsageError, StaleArtifact, StandoffError, KGError, LexiconError, json.JSONDecodeError,
                     FileNotFoundError)


def _manifest(args, out) -> PipelineManifest:
    path = Path(args.manifest) if args.manifest else Path(out).resolve().parent / MANIFEST_NAME
    return PipelineManifest.open(path)


def _guard(args, stage: str, inputs, out) -> PipelineManifest:
    for p in inputs:
        if not Path(p).exists():
            raise FileNotFoundError(f"{stage}: input {p} does not exist")
    manifest = _manifest(args, out)
    if not args.force:
        manifest.check(stage, inputs)
    return manifest


def _config_from_args(args) -> ModelConfig:
    try:
        config = load_model_config(args.config) if args.config else load_model_config()
        if args.seed is not None:
            config = config.replace(seed=args.seed)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid model config: {exc}") from exc
    return config


# --- stages ----------------------------------------------------------------


TRANSE_FLAGS = ("dim", "margin", "learning_rate", "batch_size", "negative_ratio", "epochs",
                "checkpoint_interval", "dev_fraction")


def cmd_kg_pretrain(args) -> int:
    """Writes the table to --out and the per-epoch loss log to ``<out stem>_log.csv`` beside it."""
    out = Path(args.out)
    inputs = [args.kg] + ([args.config] if args.config else [])
    manifest = _guard(args, "kg-pretrain", inputs, out)
    kg = load_kg_dir(args.kg)
    try:
        config = load_transe_config(args.config) if args.config else load_transe_config()
        overrides = {k: getattr(args, k) for k in TRANSE_FLAGS if getattr(args, k) is not None}
        config = TransEConfig(**{**config.to_dict(), **overrides})
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid TransE config: {exc}") from exc
    run = train_transe(kg, config, args.seed if args.seed is not None else 0)
    out.parent.mkdir(parents=True, exist_ok=True)
    run.table.save(out)
    log_path = out.with_name(out.stem + "_log.csv")
    with open(log_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, loss in enumerate(run.epoch_losses, start=1):
            w.writerow([i, f"{loss:.6f}"])
    if run.dev_triples:
        triples = kg.training_triples()
        base = mrr(kg, run.initial_table, run.dev_triples, triples)
        final = mrr(kg, run.table, run.dev_triples, triples)
        print(f"dev MRR {final:.4f} (random embeddings {base:.4f}), best epoch {run.best_epoch}")
    manifest.record("kg-pretrain", inputs, [out, log_path], json.dumps(config.to_dict(), sort_keys=True))
    return 0


def cmd_build_graphs(args) -> int:
    out = Path(args.out)
    inputs = list(args.corpus) + [args.kg, args.lexicon]
    manifest = _guard(args, "build-graphs", inputs, out)
    gconf = load_graph_config(args.config) if args.config else load_graph_config()
    prune_t = args.prune_t if args.prune_t is not None else gconf.prune_t
    use_semantic = gconf.use_semantic and not args.no_semantic
    kg = load_kg_dir(args.kg)
    lexicon = load_lexicon(args.lexicon, kg)
    docs = [d for c in args.corpus for d in load_corpus(c)]
    graphs, report = build_corpus_graphs(Corpus(docs), kg, lexicon, prune_t, use_semantic)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_graphs(graphs, out)
    print(f"{report.sentences} sentence graphs, {report.terminals} terminals, "
          f"{report.concepts_before_prune} -> {report.concepts_after_prune} concepts after pruning, "
          f"{report.tree_edges} tree edges, {report.empty_graphs} empty")
    manifest.record("build-graphs", inputs, [out], f"prune_t={prune_t};semantic={use_semantic}")
    return 0


def _train_inputs(args) -> list:
    inputs = [args.corpus, args.dev, args.graphs]
    if args.kge:
        inputs.append(Path(args.kge))
    if args.config:
        inputs.append(args.config)
    return inputs


def cmd_train(args) -> int:
    out = Path(args.out)
    manifest = _guard(args, "train", _train_inputs(args), out)
    config = _config_from_args(args)
    kge = EmbeddingTable.load(Path(args.kge)) if args.kge else None
    if kge is None and config.gnn_variant != "none":
        raise UsageError("--kge is required unless the config sets gnn_variant to 'none'")
    ckpt = train(load_corpus(args.corpus), load_corpus(args.dev), read_graphs(args.graphs), config, kge,
                 load_labels(args.labels) if args.labels else None, ablate_readout=args.ablate_readout)
    ckpt.save(out)
    print(f"best dev F1 {ckpt.best_dev_f1:.4f} at epoch {ckpt.epoch}")
    manifest.record("train", _train_inputs(args), [out], config.digest())
    return 0


def cmd_grid_search(args) -> int:
    out = Path(args.out)
    inputs = _train_inputs(args) + ([args.space] if args.space else [])
    manifest = _guard(args, "grid-search", inputs, out)
    base = _config_from_args(args)
    space = load_grid_space(args.space) if args.space else load_grid_space()
    kge = EmbeddingTable.load(Path(args.kge)) if args.kge else None
    result = grid_search(load_corpus(args.corpus), load_corpus(args.dev), read_graphs(args.graphs), base,
                         space, kge, jobs=args.jobs, out_dir=out / "trials")
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.tsv").write_text(result.table_tsv())
    result.best.save(out / "best")
    sys.stdout.write(result.table_tsv())
    print(f"best: {json.dumps({k: getattr(result.best_config, k) for k in space})} "
          f"dev F1 {result.best.best_dev_f1:.4f}")
    manifest.record("grid-search", inputs, [out / "results.tsv", out / "best"], base.digest())
    return 0


def cmd_predict(args) -> int:
    out = Path(args.out)
    inputs = [args.checkpoint, args.corpus, args.graphs]
    manifest = _guard(args, "predict", inputs, out)
    ckpt = Checkpoint.load(args.checkpoint)
    docs = predict(load_corpus(args.corpus), read_graphs(args.graphs), ckpt.model())
    write_corpus(Corpus(docs), out)
    n_events = sum(len(d.events) for d in docs)
    print(f"{len(docs)} documents, {sum(len(d.triggers) for d in docs)} triggers, {n_events} events")
    manifest.record("predict", inputs, [out])
    return 0


def cmd_evaluate(args) -> int:
    inputs = [args.gold, args.pred]
    manifest = _guard(args, "evaluate", inputs, args.out) if args.out else None
    criteria = MatchCriteria(args.span, args.recursive)
    result = evaluate(list(load_corpus(args.pred)), list(load_corpus(args.gold)), criteria)
    table = result.table()
    if args.class_group == "regulation":
        keep = set(REGULATION_TYPES) | {REGULATION_GROUP}
        lines = table.splitlines()
        table = "\n".join([lines[0]] + [ln for ln in lines[1:] if ln.split("\t")[0] in keep]) + "\n"
    sys.stdout.write(table)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(table)
        manifest.record("evaluate", inputs, [args.out], f"{args.span};recursive={args.recursive}")
    return 0


def cmd_gradcheck(args) -> int:
    ok, text, _ = gradcheck.main_report(range(args.seeds))
    print(text)
    return 0 if ok else 2


# --- demo ------------------------------------------------------------------

DEMO_MODEL = dict(relation_mlp_dim=32, trigger_mlp_dim=32, gnn_node_dim=32, gnn_edge_dim=32, embedding_dim=32,
                  learning_rate=1e-2, max_epochs=60, patience=5)
DEMO_TRANSE = dict(dim=32, learning_rate=0.01, batch_size=64, negative_ratio=5, epochs=100, checkpoint_interval=50)


def cmd_demo(args) -> int:
    """Fixture corpus -> graphs -> KGE -> train -> predict -> evaluate, all under --out."""
    out = Path(args.out)
    seed = args.seed if args.seed is not None else 7
    fixtures = out / "fixtures"
    if fixtures.exists():
        shutil.rmtree(fixtures)
    src = FIXTURES / "synthetic"
    for name in ("train", "dev", "kg"):
        shutil.copytree(src / name, fixtures / name)
    shutil.copyfile(src / "lexicon.tsv", fixtures / "lexicon.tsv")
    configs = out / "configs"
    configs.mkdir(parents=True, exist_ok=True)
    (configs / "transe.json").write_text(json.dumps(TransEConfig(**DEMO_TRANSE).to_dict(), indent=2) + "\n")
    model = load_model_config().replace(seed=seed, **DEMO_MODEL)
    (configs / "model.json").write_text(json.dumps(model.to_dict(), indent=2, sort_keys=True) + "\n")

    common = ["--manifest", str(out / MANIFEST_NAME), "--seed", str(seed)] + (["--force"] if args.force else [])
    steps = [
        ["build-graphs", "--corpus", str(fixtures / "train"), "--corpus", str(fixtures / "dev"),
         "--kg", str(fixtures / "kg"), "--lexicon", str(fixtures / "lexicon.tsv"), "--out", str(out / "graphs.jsonl")],
        ["kg-pretrain", "--kg", str(fixtures / "kg"), "--config", str(configs / "transe.json"), "--out", str(out / "kge.bin")],
        ["train", "--corpus", str(fixtures / "train"), "--dev", str(fixtures / "dev"),
         "--graphs", str(out / "graphs.jsonl"), "--kge", str(out / "kge.bin"), "--config", str(configs / "model.json"),
         "--out", str(out / "model")],
        ["predict", "--checkpoint", str(out / "model"), "--corpus", str(fixtures / "dev"),
         "--graphs", str(out / "graphs.jsonl"), "--out", str(out / "pred")],
        ["evaluate", "--gold", str(fixtures / "dev"), "--pred", str(out / "pred"), "--out", str(out / "eval.tsv")],
    ]
    for step in steps:
        code = main(step[:1] + common + step[1:])
        if code != 0:
            return code
    with open(out / "eval.tsv", newline="") as fh:
        total = next(r for r in csv.DictReader(fh, delimiter="\t") if r["class"] == TOTAL)
    print(f"final dev F1 (approximate span, recursive): {float(total['f1']):.2f}")
    return 0


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgevent", description="Knowledge-graph-enriched biomedical event extraction.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--seed", type=int, default=None, help="random seed (all randomness flows from it)")
        p.add_argument("--force", action="store_true", help="run even if upstream artifacts look stale")
        p.add_argument("--manifest", default=None, help="pipeline manifest (default: next to --out)")
        p.set_defaults(fn=fn)
        return p

    p = add("kg-pretrain", cmd_kg_pretrain, "train TransE embeddings for a KG directory")
    p.add_argument("--kg", required=True)
    p.add_argument("--config", help="TransE config JSON (default: bundled)")
    for name in TRANSE_FLAGS:
        kind = float if name in ("margin", "learning_rate", "dev_fraction") else int
        p.add_argument("--" + name.replace("_", "-"), type=kind, default=None, help="overrides the config value")
    p.add_argument("--out", required=True, help="embedding table file (e.g. kge.bin)")

    p = add("build-graphs", cmd_build_graphs, "map concepts and extract per-sentence graphs")
    p.add_argument("--corpus", required=True, action="append", help="standoff directory (repeatable)")
    p.add_argument("--kg", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--config", help="graph config JSON (default: bundled)")
    p.add_argument("--prune-t", type=int, default=None)
    p.add_argument("--no-semantic", action="store_true", help="omit semantic-type nodes")
    p.add_argument("--out", required=True, help="output JSONL file")

    def train_flags(p):
        p.add_argument("--corpus", required=True, help="training standoff directory")
        p.add_argument("--dev", required=True, help="dev standoff directory")
        p.add_argument("--graphs", required=True)
        p.add_argument("--kge", help="embedding table written by kg-pretrain")
        p.add_argument("--config", help="ModelConfig JSON (default: bundled)")
        p.add_argument("--labels", help="label inventory JSON (default: bundled)")
        p.add_argument("--out", required=True)

    p = add("train", cmd_train, "train the extractor with dev-F1 early stopping")
    train_flags(p)
    p.add_argument("--ablate-readout", action="store_true", help="zero and freeze W_LM, b_LM")

    p = add("grid-search", cmd_grid_search, "exhaustive hyper-parameter search on the dev set")
    train_flags(p)
    p.add_argument("--space", help="search space JSON (default: bundled)")
    p.add_argument("--jobs", type=int, default=1)

    p = add("predict", cmd_predict, "write predicted .a2 files")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--graphs", required=True)
    p.add_argument("--out", required=True)

    p = add("evaluate", cmd_evaluate, "score predictions against gold annotations")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--span", choices=("approx", "exact"), default="approx")
    p.add_argument("--recursive", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--class-group", choices=("regulation",), default=None)
    p.add_argument("--out", help="also write the TSV table here")

    p = add("gradcheck", cmd_gradcheck, "finite-difference checks of every op and GNN layer")
    p.add_argument("--seeds", type=int, default=10)

    p = add("demo", cmd_demo, "run the whole pipeline on the bundled fixtures")
    p.add_argument("--out", required=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except VALIDATION_ERRORS as exc:
        print(f"error [{args.command}]: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - top-level reporting
        log.debug("traceback", exc_info=True)
        print(f"error [{args.command}]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
