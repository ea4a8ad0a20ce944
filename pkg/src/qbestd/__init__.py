"""Query-by-example spoken term detection at desk scale.

Trains monolingual and multitask-multilingual bottleneck feature
extractors (feed-forward and residual architectures) on a synthetic
multilingual corpus, detects spoken queries in audio documents with
slope-constrained subsequence DTW, and evaluates detections with
min normalized cross entropy, MTWV and DET curves.
"""

__version__ = "0.1.0"

from .config import ExperimentConfig, load_experiment
from .corpus import SyntheticCorpusConfig, generate_corpus, trial_labels
from .errors import ConfigError, DataError, DegenerateError, QbeError
from .evaluation import EvalConfig, cnxe_min, compute_report, det, mtwv, znorm
from .pipeline import RunPaths, compare_runs, run_pipeline
from .search import DtwConfig, ScoreTable, dtw_subsequence, match, search_all

__all__ = [
    "ConfigError",
    "DataError",
    "DegenerateError",
    "DtwConfig",
    "EvalConfig",
    "ExperimentConfig",
    "QbeError",
    "RunPaths",
    "ScoreTable",
    "SyntheticCorpusConfig",
    "cnxe_min",
    "compare_runs",
    "compute_report",
    "det",
    "dtw_subsequence",
    "generate_corpus",
    "load_experiment",
    "match",
    "mtwv",
    "run_pipeline",
    "search_all",
    "trial_labels",
    "znorm",
]
