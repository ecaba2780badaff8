"""Weakly supervised medication-attribute span extraction.

A classifier reads each dialogue only through per-attribute attention
bottlenecks; sparse structured projections (fusedmax) make the attention
weights themselves usable as contiguous extraction spans.
"""

__version__ = "0.1.0"

from .data import ATTRIBUTES, CLASSES, DataPoint, GeneratorConfig, generate, parse_dataset, write_dataset
from .metrics import EvalReport, evaluate
from .model import EmbeddingSource, ExtractionThresholds, ModelConfig, ModelParams, make_predictor
from .projections import ProjectionConfig, fusedmax_project, project, softmax_project
from .training import TrainConfig, train

__all__ = [
    "ATTRIBUTES",
    "CLASSES",
    "DataPoint",
    "GeneratorConfig",
    "generate",
    "parse_dataset",
    "write_dataset",
    "EvalReport",
    "evaluate",
    "EmbeddingSource",
    "ExtractionThresholds",
    "ModelConfig",
    "ModelParams",
    "make_predictor",
    "ProjectionConfig",
    "project",
    "softmax_project",
    "fusedmax_project",
    "TrainConfig",
    "train",
]
