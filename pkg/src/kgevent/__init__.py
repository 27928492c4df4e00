"""Biomedical event extraction enriched with a two-level knowledge graph."""

from .config import LabelInventory, ModelConfig, load_model_config
from .evaluation import MatchCriteria, evaluate, unmerge
from .extractor import EventExtractor, FileProvider, HashProvider
from .graphs import build_corpus_graphs, build_global_tree, load_lexicon
from .kg import EmbeddingTable, KnowledgeGraph, load_kg, load_kg_dir
from .standoff import Corpus, Document, load_corpus, tokenize
from .trainer import Checkpoint, grid_search, predict, train
from .transe import TransEConfig, pretrain_kge

__version__ = "0.1.0"

__all__ = [
    "Checkpoint", "Corpus", "Document", "EmbeddingTable", "EventExtractor", "FileProvider", "HashProvider",
    "KnowledgeGraph", "LabelInventory", "MatchCriteria", "ModelConfig", "TransEConfig", "build_corpus_graphs",
    "build_global_tree", "evaluate", "grid_search", "load_corpus", "load_kg", "load_kg_dir", "load_lexicon",
    "load_model_config", "predict", "pretrain_kge", "tokenize", "train", "unmerge",
]
