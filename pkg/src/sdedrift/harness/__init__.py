"""Configuration, presets, persistence and the command line interface."""
from .config import ExperimentConfig, load_config
from .expression import DriftExpression, parse_expression
from .experiment import run_experiment
from .persistence import density_histogram, load_ensemble, load_model, save_ensemble, save_model
from .presets import PRESETS, get_preset
