import csv

import numpy as np
import pytest

from helpers import SMALL, SYNTHETIC
from kgevent.config import LabelInventory, ModelConfig, load_grid_space
from kgevent.graphs import build_corpus_graphs, load_lexicon
from kgevent.kg import load_kg_dir
from kgevent.standoff import Corpus, load_corpus
from kgevent.trainer import (
    LOG_FIELDS, Checkpoint, EmptyCorpus, grid_points, grid_search, graphs_from_list, predict, prepare,
    sentence_logits, train,
)
from kgevent.extractor import EventExtractor, make_provider
from kgevent.transe import TransEConfig, pretrain_kge


@pytest.fixture(scope="module")
def setup():
    kg = load_kg_dir(SYNTHETIC / "kg")
    lex = load_lexicon(SYNTHETIC / "lexicon.tsv", kg)
    train_c, dev_c = load_corpus(SYNTHETIC / "train"), load_corpus(SYNTHETIC / "dev")
    graphs, _ = build_corpus_graphs(Corpus(list(train_c) + list(dev_c)), kg, lex)
    kge = pretrain_kge(kg, TransEConfig(dim=32, learning_rate=0.01, batch_size=64, negative_ratio=5, epochs=20), 7)
    return train_c, dev_c, graphs_from_list(graphs), kge


def cfg(**kw):
    return ModelConfig(**{**SMALL, "seed": 7, "max_epochs": 3, "patience": 5, **kw})


class TestTrain:
    def test_zero_epochs(self, setup):
        train_c, dev_c, graphs, kge = setup
        ckpt = train(train_c, dev_c, graphs, cfg(max_epochs=0), kge)
        assert ckpt.epoch == 0 and len(ckpt.history) == 1
        fresh = EventExtractor(cfg(max_epochs=0), LabelInventory(), kge)
        for name, t in fresh.store:
            assert np.array_equal(ckpt.params[name], t.data)

    def test_seed_determinism(self, setup):
        train_c, dev_c, graphs, kge = setup
        a = train(train_c, dev_c, graphs, cfg(max_epochs=2), kge)
        b = train(train_c, dev_c, graphs, cfg(max_epochs=2), kge)
        assert [h.row() for h in a.history] == [h.row() for h in b.history]
        for name in a.params:
            assert np.array_equal(a.params[name], b.params[name])

    def test_early_stopping_invariant(self, setup):
        train_c, dev_c, graphs, kge = setup
        ckpt = train(train_c, dev_c, graphs, cfg(max_epochs=30, patience=2), kge)
        f1s = [h.dev_f1 for h in ckpt.history]
        assert ckpt.best_dev_f1 == pytest.approx(max(f1s), abs=1e-6)
        assert f1s.index(max(f1s)) == ckpt.epoch
        last = ckpt.history[-1].epoch
        assert last == 30 or last - ckpt.epoch == 2 or ckpt.best_dev_f1 == 1.0

    def test_checkpoint_round_trip(self, setup, tmp_path):
        train_c, dev_c, graphs, kge = setup
        ckpt = train(train_c, dev_c, graphs, cfg(max_epochs=2), kge, log_path=tmp_path / "log.csv")
        ckpt.save(tmp_path / "ck")
        again = Checkpoint.load(tmp_path / "ck")
        assert again.epoch == ckpt.epoch and again.best_dev_f1 == ckpt.best_dev_f1
        for name in ckpt.params:
            assert np.array_equal(again.params[name], ckpt.params[name])
        inst = prepare(dev_c, graphs, make_provider(ckpt.config), ckpt.inventory).flat()
        for x, y in zip(sentence_logits(ckpt.model(), inst), sentence_logits(again.model(), inst)):
            assert np.array_equal(x, y)
        with open(tmp_path / "log.csv") as fh:
            rows = list(csv.reader(fh))
        assert tuple(rows[0]) == LOG_FIELDS and len(rows) == len(ckpt.history) + 1

    def test_ablate_readout(self, setup):
        train_c, dev_c, graphs, kge = setup
        base = train(train_c, dev_c, graphs, cfg(max_epochs=0), kge)
        ckpt = train(train_c, dev_c, graphs, cfg(max_epochs=2), kge, ablate_readout=True)
        assert not ckpt.params["ki.w_lm"].any() and not ckpt.params["ki.b_lm"].any()
        assert np.array_equal(ckpt.params["gnn.0.theta.0.w"], base.params["gnn.0.theta.0.w"])
        assert ckpt.ablate_readout

    def test_empty_corpus(self, setup):
        _, dev_c, graphs, kge = setup
        with pytest.raises(EmptyCorpus):
            train(Corpus([]), dev_c, graphs, cfg(), kge)


class TestPredict:
    def test_null_bias_predicts_nothing(self, setup):
        _, dev_c, graphs, kge = setup
        ckpt = train(dev_c, dev_c, graphs, cfg(max_epochs=0), kge)
        model = ckpt.model()
        model.trigger_mlp.second.b.data[0] = 1e3
        for doc in predict(dev_c, graphs, model):
            assert doc.triggers == [] and doc.events == []
            assert doc.proteins

    def test_deterministic(self, setup):
        train_c, dev_c, graphs, kge = setup
        model = train(train_c, dev_c, graphs, cfg(max_epochs=2), kge).model()
        a, b = predict(dev_c, graphs, model), predict(dev_c, graphs, model)
        assert [(d.triggers, d.events) for d in a] == [(d.triggers, d.events) for d in b]
        for doc in a:
            protein_ids = {p.id for p in doc.proteins}
            assert not protein_ids & {t.id for t in doc.triggers}


class TestGrid:
    def test_points(self):
        base = ModelConfig()
        assert len(grid_points(base, {"learning_rate": [1e-3]})) == 1
        two = grid_points(base, {"learning_rate": [1e-3, 1e-2]})
        assert [p.learning_rate for p in two] == [1e-3, 1e-2]
        assert len(grid_points(base, load_grid_space())) == 48
        with pytest.raises(ValueError):
            grid_points(base, {})
        with pytest.raises(ValueError):
            grid_points(base, {"learning_rate": []})

    def test_search(self, setup, tmp_path):
        train_c, dev_c, graphs, kge = setup
        res = grid_search(train_c, dev_c, graphs, cfg(max_epochs=1), {"learning_rate": [1e-2, 1e-2]}, kge,
                          out_dir=tmp_path)
        assert len(res.table) == 2 and res.best_config.learning_rate == 1e-2
        assert res.table[0]["dev_f1"] == res.table[1]["dev_f1"]
        assert res.best is not None and (tmp_path / "trial_000" / "params.bin").exists()
        assert res.table_tsv().splitlines()[0].split("\t") == ["trial", "learning_rate", "best_epoch", "dev_f1"]
