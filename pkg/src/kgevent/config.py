"""Model/graph/TransE configuration and the bundled default config files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from importlib import resources
from pathlib import Path

from .evaluation import EVENT_TYPES
from .transe import TransEConfig

DATA = resources.files("kgevent") / "data"
CONFIG_DIR = DATA / "configs"


@dataclass
class ModelConfig:
    relation_mlp_dim: int = 300
    trigger_mlp_dim: int = 300
    learning_rate: float = 3e-5
    gnn_node_dim: int = 300
    gnn_edge_dim: int = 300
    gnn_layers: int = 2
    gnn_variant: str = "geanet"  # geanet | ecc | gat | none
    dropout: float = 0.2
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    provider: str = "hash"  # hash | file
    provider_path: str = ""
    embedding_dim: int = 768
    warmup_steps: int = 0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    null_weight: float = 1.0
    freeze_kge: bool = True

    def __post_init__(self):
        for name in ("relation_mlp_dim", "trigger_mlp_dim", "gnn_node_dim", "gnn_edge_dim",
                     "batch_size", "embedding_dim"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.gnn_layers < 0 or self.max_epochs < 0 or self.patience < 0:
            raise ValueError("gnn_layers, max_epochs and patience must be >= 0")
        if self.gnn_variant not in ("geanet", "ecc", "gat", "none"):
            raise ValueError(f"unknown gnn_variant {self.gnn_variant!r}")
        if self.provider not in ("hash", "file"):
            raise ValueError(f"unknown provider {self.provider!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(obj) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**obj)

    def replace(self, **changes) -> "ModelConfig":
        return ModelConfig.from_dict({**self.to_dict(), **changes})

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class GraphConfig:
    prune_t: int = 35
    use_semantic: bool = True


@dataclass
class LabelInventory:
    trigger_types: list[str] = field(default_factory=lambda: list(EVENT_TYPES))
    roles: list[str] = field(default_factory=lambda: ["Theme", "Cause"])

    NULL = "None"

    @property
    def trigger_labels(self) -> list[str]:
        return [self.NULL] + self.trigger_types

    @property
    def role_labels(self) -> list[str]:
        return [self.NULL] + self.roles

    def to_dict(self) -> dict:
        return {"trigger_types": self.trigger_types, "roles": self.roles}

    @classmethod
    def from_dict(cls, obj: dict) -> "LabelInventory":
        return cls(list(obj["trigger_types"]), list(obj["roles"]))


def _read_json(path) -> dict:
    return json.loads(Path(path).read_text() if not hasattr(path, "read_text") else path.read_text())


def load_model_config(path=None) -> ModelConfig:
    return ModelConfig.from_dict(_read_json(path or CONFIG_DIR / "model.json"))


def load_transe_config(path=None) -> TransEConfig:
    return TransEConfig(**_read_json(path or CONFIG_DIR / "transe.json"))


def load_graph_config(path=None) -> GraphConfig:
    return GraphConfig(**_read_json(path or CONFIG_DIR / "graph.json"))


def load_labels(path=None) -> LabelInventory:
    return LabelInventory.from_dict(_read_json(path or CONFIG_DIR / "labels.json"))


def load_grid_space(path=None) -> dict[str, list]:
    return _read_json(path or CONFIG_DIR / "grid_space.json")
