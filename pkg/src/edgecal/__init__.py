"""Link-prediction GNNs in plain numpy, with post-hoc calibration.

The main pieces are a small tape-based autodiff (``tensor``), CSR graphs
and edge splits (``graph``), GCN/GIN/SAGE encoders (``encoders``),
training (``training``), calibration metrics (``metrics``), baseline
calibrators (``baselines``) and counterfactual per-edge temperatures
(``innout``).
"""
from .baselines import FittedCalibrator, fit_bbq, fit_histogram, fit_isotonic, fit_temperature
from .data import generate_sbm, load_dataset
from .encoders import EncoderConfig, LinkPredictor, ScorerConfig
from .errors import ContractError, DataError, DimensionError, TrainingError
from .experiment import ExperimentConfig, report, run_experiment
from .graph import Graph, split_edges
from .innout import CounterfactualEncoder, InNOutCalibrator, InNOutConfig
from .metrics import ece, nll, reliability_diagram
from .training import ScoredEdges, TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "ContractError",
    "CounterfactualEncoder",
    "DataError",
    "DimensionError",
    "EncoderConfig",
    "ExperimentConfig",
    "FittedCalibrator",
    "Graph",
    "InNOutCalibrator",
    "InNOutConfig",
    "LinkPredictor",
    "ScoredEdges",
    "ScorerConfig",
    "TrainConfig",
    "TrainingError",
    "ece",
    "fit_bbq",
    "fit_histogram",
    "fit_isotonic",
    "fit_temperature",
    "generate_sbm",
    "load_dataset",
    "nll",
    "reliability_diagram",
    "report",
    "run_experiment",
    "split_edges",
    "train",
]
