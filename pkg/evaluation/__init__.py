"""
Evaluation package for adaptorx: corpus metrics, evaluators and convergence
"""

from .metrics import corpus_bleu, token_accuracy, exact_match, METRIC_FUNCTIONS
from .evaluators import (
    Evaluator, ConvergenceCriterion, detect_convergence, default_evaluators, parse_evaluators,
)
