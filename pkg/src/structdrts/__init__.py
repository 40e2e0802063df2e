"""Structure-aware DRTS parsing: data model, graph-attention seq2seq parser, and evaluation."""

from .core import (
    DrtsTree,
    Dru,
    RelationTuple,
    SkeletonNode,
    VariableId,
    delinearize,
    format_tree,
    linearize,
    parse_tree,
    to_clause_format,
    validate_tree,
)
from .data import Document, gen_synthetic, load_corpus, save_corpus
from .errors import DrtsError
from .metrics import bleu, clause_match_f1, evaluate_trees, skeleton_f1, tuple_f1
from .model import ModelConfig, StructuredParser, TrainSchedule, evaluate, load_config, load_model, save_model, train

__all__ = [
    "DrtsError",
    "DrtsTree",
    "Document",
    "Dru",
    "ModelConfig",
    "RelationTuple",
    "SkeletonNode",
    "StructuredParser",
    "TrainSchedule",
    "VariableId",
    "bleu",
    "clause_match_f1",
    "delinearize",
    "evaluate",
    "evaluate_trees",
    "format_tree",
    "gen_synthetic",
    "linearize",
    "load_config",
    "load_corpus",
    "load_model",
    "parse_tree",
    "save_corpus",
    "save_model",
    "skeleton_f1",
    "to_clause_format",
    "train",
    "tuple_f1",
    "validate_tree",
]

__version__ = "0.1.0"
