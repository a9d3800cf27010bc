"""Distributional causal mediation analysis with energy-score generators."""

from .estimands import (
    BootstrapConfig,
    EffectEstimate,
    PipelineConfig,
    bootstrap_effects,
    compute_effect,
    estimate_effects,
    quantile_effect_curve,
)
from .genmodel import Dataset, GeneratorModel, TrainConfig, generate, train_generator
from .metrics import FunctionalSpec, energy_distance, energy_score_mc, wasserstein1_1d
from .scenarios import ScenarioSpec, generate_scenario, oracle_truth, run_replication_study
from .simulate import SimConfig, forward_simulate

__version__ = "0.1.0"
