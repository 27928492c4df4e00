import json

import pytest

from kgevent.config import (GraphConfig, LabelInventory, ModelConfig, load_graph_config, load_grid_space,
                            load_labels, load_model_config, load_transe_config)


class TestDefaults:
    def test_model_file_matches_dataclass(self):
        assert load_model_config() == ModelConfig()

    def test_model_values(self):
        c = load_model_config()
        assert (c.relation_mlp_dim, c.trigger_mlp_dim, c.gnn_node_dim, c.gnn_edge_dim) == (300, 300, 300, 300)
        assert (c.gnn_layers, c.gnn_variant, c.dropout) == (2, "geanet", 0.2)
        assert (c.learning_rate, c.batch_size, c.patience, c.max_epochs) == (3e-5, 4, 5, 100)

    def test_transe_values(self):
        t = load_transe_config()
        assert (t.learning_rate, t.margin, t.batch_size, t.negative_ratio, t.epochs, t.checkpoint_interval) == \
            (0.5, 3.0, 128, 25, 500, 50)

    def test_graph_and_labels(self):
        assert load_graph_config() == GraphConfig(prune_t=35, use_semantic=True)
        labels = load_labels()
        assert labels == LabelInventory()
        assert len(labels.trigger_labels) == 10 and labels.role_labels == ["None", "Theme", "Cause"]

    def test_grid_space(self):
        space = load_grid_space()
        assert space["relation_mlp_dim"] == space["trigger_mlp_dim"] == [300, 500, 700, 1000]
        assert space["learning_rate"] == [1e-5, 3e-5, 5e-5]


class TestModelConfig:
    def test_unknown_key(self):
        with pytest.raises(ValueError):
            ModelConfig.from_dict({"hidden": 3})

    @pytest.mark.parametrize("change", [{"dropout": 1.0}, {"gnn_variant": "gcn"}, {"batch_size": 0},
                                        {"patience": -1}, {"provider": "bert"}])
    def test_invalid(self, change):
        with pytest.raises(ValueError):
            ModelConfig().replace(**change)

    def test_digest(self):
        a = ModelConfig()
        assert a.digest() == ModelConfig().digest()
        assert a.digest() != a.replace(seed=1).digest()

    def test_file_round_trip(self, tmp_path):
        c = ModelConfig().replace(gnn_variant="ecc", learning_rate=1e-3)
        path = tmp_path / "m.json"
        path.write_text(json.dumps(c.to_dict()))
        assert load_model_config(path) == c
