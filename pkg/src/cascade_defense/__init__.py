"""Preemptive defense against cascading failures as a two-player security game.

The usual entry points, importable from the package root:

>>> from cascade_defense import generate_graph, random_thresholds, CascadeModel, ActionSpace
>>> g = generate_graph("erdos-renyi", 8, seed=0)
>>> model = CascadeModel("threshold", g, random_thresholds(8, seed=1))
>>> P = build_payoff_matrix(model, ActionSpace.full(8), ActionSpace.full(8))
"""
from .cascade import SHORTEST_PATH, CascadeModel, CascadeOutcome, run_cascade, single_round
from .cfda import FAST, REPLAY, STRICT, counterfactual_growth, generate_counterfactual_dataset
from .cli import ExperimentConfig, run_pipeline
from .datagen import (
    TrialSet,
    deduplicate,
    generate_factual_dataset,
    partition_subaction_spaces,
    sample_uniform_dataset,
)
from .evaluation import ExploiterConfig, exploitability, kl_to_ne
from .game import ActionSpace, build_payoff_matrix, nash_conv, play_trial, solve_zero_sum_ne
from .graph import THRESHOLD, Graph, NodeFeatures, capacities_from_loads, generate_graph, random_thresholds
from .predictor import PredictorModel, TrainConfig, train, validation_error
from .strategy import (
    SynthesizedStrategy,
    strategy_restricted_baseline,
    synthesize_from_predictor,
    uniform_strategy,
)

__all__ = [
    "SHORTEST_PATH", "THRESHOLD", "FAST", "STRICT", "REPLAY",
    "Graph", "NodeFeatures", "generate_graph", "random_thresholds", "capacities_from_loads",
    "CascadeModel", "CascadeOutcome", "run_cascade", "single_round",
    "ActionSpace", "play_trial", "build_payoff_matrix", "solve_zero_sum_ne", "nash_conv",
    "TrialSet", "partition_subaction_spaces", "generate_factual_dataset", "sample_uniform_dataset", "deduplicate",
    "generate_counterfactual_dataset", "counterfactual_growth",
    "PredictorModel", "TrainConfig", "train", "validation_error",
    "SynthesizedStrategy", "uniform_strategy", "strategy_restricted_baseline", "synthesize_from_predictor",
    "ExploiterConfig", "exploitability", "kl_to_ne",
    "ExperimentConfig", "run_pipeline",
]
