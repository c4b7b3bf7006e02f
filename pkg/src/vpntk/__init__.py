"""Differentially private data synthesis by NTK mean-embedding matching, with visual prompts."""
from .estimators import DPNTK, VPNTK
from .pipeline import ExperimentConfig, RunRecord, export_results, read_results, run_experiment
from .privacy import PrivacyParams, calibrate_noise_multiplier, delta_of_sigma, embedding_sensitivity

__all__ = [
    "DPNTK",
    "VPNTK",
    "ExperimentConfig",
    "RunRecord",
    "PrivacyParams",
    "calibrate_noise_multiplier",
    "delta_of_sigma",
    "embedding_sensitivity",
    "export_results",
    "read_results",
    "run_experiment",
]

__version__ = "0.1.0"
