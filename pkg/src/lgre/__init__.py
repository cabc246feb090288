"""Temporal knowledge graph completion with multi-granularity time
representations: a self-contained toolkit (numpy-backed autodiff included)
for training, evaluating and ablating the model on quadruple datasets."""

__version__ = "0.1.0"

from .config import TrainConfig
from .data import Dataset, FilterIndex, Quadruple, TimeTriple, Vocabulary, load_dataset
from .synthetic import Rule, SyntheticSpec, generate_synthetic
from .training import RankReport, evaluate, frequency_baseline, train

__all__ = [
    "TrainConfig", "Dataset", "FilterIndex", "Quadruple", "TimeTriple",
    "Vocabulary", "load_dataset", "Rule", "SyntheticSpec", "generate_synthetic",
    "RankReport", "evaluate", "frequency_baseline", "train", "__version__",
]
