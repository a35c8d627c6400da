"""
Objective: sample encoding, loss computation, evaluation and convergence state
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

from loguru import logger

from backend.losses import cross_entropy
from backend.tensor import Parameter, Tensor, no_grad
from config.settings import DEFAULT_BATCH_SIZE, DEFAULT_MAX_EVAL_SAMPLES
from data.sources import TextPairSource, TextsOrPath
from data.vocab import Vocab
from evaluation.evaluators import ConvergenceCriterion, Evaluator, default_evaluators, detect_convergence
from models.transformer import HeadKind, forward
from objectives.batch import Batch, BatchRow, collate
from utils.errors import ConfigError, DataError, EncodingError, EvaluationError, RoutingError

if TYPE_CHECKING:
    from models.lang_module import LangModule

Pair = Tuple[str, str]
TokenCorpus = List[List[str]]

log = logger.bind(source="objective")


@dataclass
class ObjectiveState:
    """Training progress and convergence of one objective"""
    steps_taken: int = 0
    epochs_completed: int = 0
    train_loss_history: List[float] = field(default_factory=list)
    val_loss_history: List[float] = field(default_factory=list)
    converged: bool = False
    last_eval: Dict[str, float] = field(default_factory=dict)
    phase_start: int = 0

    def begin_phase(self) -> None:
        """Start a new schedule phase: convergence only looks at later evaluations"""
        self.converged = False
        self.phase_start = len(self.val_loss_history)

    def record_train_loss(self, value: float) -> None:
        self.steps_taken += 1
        self.train_loss_history.append(value)

    def record_evaluation(self, metrics: Dict[str, float], criterion: ConvergenceCriterion) -> None:
        self.val_loss_history.append(metrics['val_loss'])
        self.last_eval = dict(metrics)
        if not self.converged:
            self.converged = detect_convergence(self.val_loss_history[self.phase_start:], criterion)

    def to_dict(self) -> Dict[str, object]:
        return {
            'steps_taken': self.steps_taken,
            'epochs_completed': self.epochs_completed,
            'train_loss_history': list(self.train_loss_history),
            'val_loss_history': list(self.val_loss_history),
            'converged': self.converged,
            'last_eval': dict(self.last_eval),
        }


class Objective(ABC):
    """
    Base class of all objectives

    Subclasses set compatible_head and implement encode() and predict().

    Args:
        objective_id: Unique id, also the head id suffix
        texts_or_path: Training inputs (list of lines or UTF-8 file path)
        labels_or_path: Training labels, line-aligned with the inputs
        val_texts_or_path: Validation inputs
        val_labels_or_path: Validation labels
        batch_size: Examples per batch
        evaluators: Metrics computed on evaluation (defaults per head kind)
        criterion: Convergence criterion on validation loss
        objective_module: Explicit parameters merged into the LangModule
        tokenizer: Vocabulary; may be bound later with bind_tokenizer()
        max_eval_samples: Cap on examples decoded for generative metrics
    """
    compatible_head: HeadKind = HeadKind.SEQ2SEQ_LM

    def __init__(
        self,
        objective_id: str,
        texts_or_path: TextsOrPath,
        labels_or_path: Optional[TextsOrPath] = None,
        val_texts_or_path: Optional[TextsOrPath] = None,
        val_labels_or_path: Optional[TextsOrPath] = None,
        batch_size: int = DEFAULT_BATCH_SIZE,
        evaluators: Optional[Sequence[Evaluator]] = None,
        criterion: Optional[ConvergenceCriterion] = None,
        objective_module: Optional[Dict[str, Parameter]] = None,
        tokenizer: Optional[Vocab] = None,
        max_eval_samples: int = DEFAULT_MAX_EVAL_SAMPLES,
    ):
        if batch_size < 1:
            raise ConfigError(f"{objective_id}: batch_size must be >= 1, got {batch_size}")
        self.objective_id = objective_id
        self.train_source = TextPairSource(texts_or_path, labels_or_path)
        self.val_source = (
            TextPairSource(val_texts_or_path, val_labels_or_path) if val_texts_or_path is not None else None
        )
        self.batch_size = batch_size
        self.evaluators = list(evaluators) if evaluators is not None else default_evaluators(self.compatible_head)
        for evaluator in self.evaluators:
            evaluator.validate_for(self.compatible_head)
        self.criterion = criterion or ConvergenceCriterion()
        self.objective_module = objective_module
        self._tokenizer = tokenizer
        self.max_eval_samples = max_eval_samples
        self.state = ObjectiveState()

    # Data

    @property
    def tokenizer(self) -> Vocab:
        if self._tokenizer is None:
            raise EncodingError(f"objective {self.objective_id!r} has no tokenizer")
        return self._tokenizer

    def bind_tokenizer(self, tokenizer: Vocab) -> None:
        self._tokenizer = tokenizer

    def has_split(self, split: str) -> bool:
        source = self.train_source if split == 'train' else self.val_source
        return source is not None and len(source) > 0

    def dataset(self, split: str) -> TextPairSource:
        source = {'train': self.train_source, 'val': self.val_source}.get(split)
        if source is None:
            raise DataError(f"objective {self.objective_id!r} has no {split} data")
        return source

    def epoch_pairs(self, split: str, epoch: int) -> List[Pair]:
        """Examples of one pass over a split; data-generating objectives override this"""
        return self.dataset(split).pairs()

    # Encoding and loss

    @abstractmethod
    def encode(self, pair: Pair) -> BatchRow:
        """Encode one (text, label) pair"""

    def make_batch(self, pairs: Sequence[Pair]) -> Batch:
        return collate(self.objective_id, [self.encode(pair) for pair in pairs])

    def head_output_dim(self, vocab_size: int) -> int:
        return vocab_size

    @property
    def head_labels(self) -> Optional[List[str]]:
        return None

    def compute_loss(self, logits: Tensor, batch: Batch, record: bool = True) -> Tensor:
        """
        Cross-entropy of the objective's head output against the batch labels

        Args:
            logits: Output of the head registered for this objective
            batch: The batch the logits were computed from
            record: Append the value to train_loss_history

        Returns:
            Scalar loss tensor
        """
        if batch.objective_id != self.objective_id:
            raise RoutingError(f"batch of {batch.objective_id!r} routed to objective {self.objective_id!r}")
        if tuple(logits.shape[:-1]) != tuple(batch.labels.shape):
            raise RoutingError(
                f"{self.objective_id}: logits {logits.shape} do not fit labels {batch.labels.shape}; "
                f"was the batch run through a {self.compatible_head.value} head?"
            )
        loss = cross_entropy(logits, batch.labels)
        if record:
            self.state.record_train_loss(float(loss.item()))
        return loss

    # Evaluation

    @abstractmethod
    def predict(self, lang_module: 'LangModule', pairs: Sequence[Pair]) -> Tuple[TokenCorpus, TokenCorpus]:
        """Model outputs and references, as token sequences, for metric computation"""

    def evaluate(self, lang_module: 'LangModule', split: str = 'val') -> Dict[str, float]:
        return evaluate_objective(self, split, lang_module)

    def __repr__(self) -> str:
        return f"{type(self).__name__}(objective_id={self.objective_id!r}, batch_size={self.batch_size})"


def _chunks(items: Sequence, size: int):
    for start in range(0, len(items), size):
        yield items[start:start + size]


def evaluate_objective(objective: Objective, split: str, lang_module: 'LangModule') -> Dict[str, float]:
    """
    Validation loss plus the objective's evaluators on one split

    Evaluations of the val split are appended to the objective's history and
    update its convergence flag.

    Args:
        objective: Objective to evaluate
        split: "train" or "val"
        lang_module: Registry holding the objective's head

    Returns:
        Metric name -> value, always including val_loss
    """
    if not objective.has_split(split):
        raise EvaluationError(f"objective {objective.objective_id!r} has no {split} data to evaluate")
    pairs = objective.epoch_pairs(split, 0)
    if not pairs:
        raise EvaluationError(f"objective {objective.objective_id!r}: {split} split yields no examples")

    was_training = lang_module.training
    lang_module.eval()
    try:
        body = lang_module.body_for(objective.objective_id)
        head = lang_module.head_for(objective.objective_id)
        total, count = 0.0, 0
        with no_grad():
            for chunk in _chunks(pairs, objective.batch_size):
                batch = objective.make_batch(chunk)
                loss = objective.compute_loss(forward(body, head, batch), batch, record=False)
                total += float(loss.item()) * batch.n_targets
                count += batch.n_targets
        metrics = {'val_loss': total / count}

        evaluators = [e for e in objective.evaluators if e.split == split]
        if any(e.decode_needed for e in evaluators):
            candidates, references = objective.predict(lang_module, pairs[:objective.max_eval_samples])
            for evaluator in evaluators:
                metrics[evaluator.metric] = evaluator.compute(candidates, references)
    finally:
        lang_module.train(was_training)

    if split == 'val':
        objective.state.record_evaluation(metrics, objective.criterion)
    log.debug(f"{objective.objective_id} {split}: " + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items()))
    return metrics
