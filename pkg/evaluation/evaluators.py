"""
Evaluators attached to objectives and convergence detection
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Union

from config.settings import DEFAULT_MIN_DELTA, DEFAULT_PATIENCE, GENERATIVE_METRICS, METRICS
from evaluation.metrics import METRIC_FUNCTIONS, TokenCorpus
from models.transformer import HeadKind
from utils.data_parser import parse_list
from utils.errors import ConfigError

SPLITS = ('train', 'val')


@dataclass(frozen=True)
class Evaluator:
    """One metric computed on one split"""
    metric: str
    split: str = 'val'

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r} (known: {', '.join(METRICS)})")
        if self.split not in SPLITS:
            raise ConfigError(f"unknown split {self.split!r} for evaluator {self.metric}")

    @property
    def decode_needed(self) -> bool:
        return self.metric != 'val_loss'

    def validate_for(self, kind: Union[HeadKind, str]) -> None:
        """Generative metrics need a seq2seq_lm head"""
        if self.metric in GENERATIVE_METRICS and HeadKind(kind) != HeadKind.SEQ2SEQ_LM:
            raise ConfigError(f"metric {self.metric} requires a seq2seq_lm head, not {HeadKind(kind).value}")

    def compute(self, candidates: TokenCorpus, references: TokenCorpus) -> float:
        return METRIC_FUNCTIONS[self.metric](candidates, references)


def default_evaluators(kind: Union[HeadKind, str]) -> List[Evaluator]:
    if HeadKind(kind) == HeadKind.SEQ2SEQ_LM:
        return [Evaluator('bleu'), Evaluator('exact_match'), Evaluator('token_accuracy')]
    return [Evaluator('token_accuracy')]


def parse_evaluators(value: Optional[Union[str, Sequence[str]]], kind: Union[HeadKind, str]) -> List[Evaluator]:
    """
    Evaluators from a comma-separated list of metric names

    Entries may carry a split suffix (bleu@train). val_loss is always computed
    and may be omitted.
    """
    if value is None:
        return default_evaluators(kind)
    names = parse_list(value) if isinstance(value, str) else list(value)
    evaluators = []
    for name in filter(None, names):
        metric, _, split = name.partition('@')
        evaluator = Evaluator(metric, split or 'val')
        evaluator.validate_for(kind)
        if evaluator.metric != 'val_loss':
            evaluators.append(evaluator)
    return evaluators


@dataclass(frozen=True)
class ConvergenceCriterion:
    """Patience-based stopping on validation loss"""
    patience: int = DEFAULT_PATIENCE
    min_delta: float = DEFAULT_MIN_DELTA

    def __post_init__(self):
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.min_delta < 0:
            raise ConfigError(f"min_delta must be >= 0, got {self.min_delta}")


def detect_convergence(val_loss_history: Sequence[float], criterion: ConvergenceCriterion = ConvergenceCriterion()) -> bool:
    """
    True iff each of the last `patience` evaluations failed to improve the
    best-so-far loss by at least min_delta

    The first evaluation always counts as an improvement.
    """
    if len(val_loss_history) <= criterion.patience:
        return False
    best = float('inf')
    stale = 0
    for loss in val_loss_history:
        if best - loss >= criterion.min_delta:
            stale = 0
        else:
            stale += 1
        best = min(best, loss)
    return stale >= criterion.patience
