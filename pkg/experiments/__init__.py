"""
Experiments package for adaptorx
"""

from .runner import (
    ExperimentOutcome, ResultsRow, evaluate_checkpoint, generate_data, load_grid, run_experiment, run_grid,
)
