"""
Adapter: the training loop over a Schedule

Batches are pulled from the schedule, routed to the head of the objective
that produced them, and their losses are computed by that objective. Losses
are scaled by 1 / gradient_accumulation_steps and their gradients summed
until an optimizer update is due.
"""
import math
import threading
import time
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

from loguru import logger
from tqdm import tqdm

from backend.optim import AdamState, adam_step
from backend.tensor import backward
from config.settings import (
    DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPSILON, DEFAULT_EVAL_INTERVAL, DEFAULT_LEARNING_RATE,
    DEFAULT_LOG_INTERVAL, DEFAULT_SEED, DEFAULT_WARMUP_STEPS, LOG_COLUMNS, SHOW_PROGRESS,
)
from models.lang_module import LangModule
from models.transformer import forward
from objectives.base import Objective, evaluate_objective
from schedules.base import Schedule
from training.checkpoint import save_head_checkpoint
from utils.errors import ConfigError, NonFiniteLossError, RoutingError
from utils.export_utils import export_log_records

log = logger.bind(source="trainer")


@dataclass
class TrainingArguments:
    """Optimizer and loop settings of one training run"""
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    gradient_accumulation_steps: Optional[int] = None
    eval_interval: int = DEFAULT_EVAL_INTERVAL
    log_interval: int = DEFAULT_LOG_INTERVAL
    checkpoint_dir: Optional[str] = None
    seed: int = DEFAULT_SEED
    max_global_updates: Optional[int] = None
    warmup_steps: int = DEFAULT_WARMUP_STEPS
    reset_optimizer_between_phases: bool = True
    evaluate_at_end: bool = True
    log_file: Optional[str] = None
    show_progress: bool = SHOW_PROGRESS

    def validate(self) -> None:
        if self.gradient_accumulation_steps is not None and self.gradient_accumulation_steps < 1:
            raise ConfigError(f"gradient_accumulation_steps must be >= 1, got {self.gradient_accumulation_steps}")
        if self.eval_interval < 1 or self.log_interval < 1:
            raise ConfigError(f"intervals must be >= 1, got eval={self.eval_interval} log={self.log_interval}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_global_updates is not None and self.max_global_updates < 1:
            raise ConfigError(f"max_global_updates must be >= 1, got {self.max_global_updates}")
        if self.warmup_steps < 0:
            raise ConfigError(f"warmup_steps must be >= 0, got {self.warmup_steps}")

    def to_dict(self) -> Dict[str, object]:
        return asdict(self)


@dataclass
class LogRecord:
    """One metric value of one objective at one update"""
    update: int
    objective: str
    split: str
    metric: str
    value: float
    timestamp: float = field(default_factory=time.time)

    def to_row(self) -> Dict[str, object]:
        return {column: getattr(self, column) for column in LOG_COLUMNS}


class LogStream:
    """Append-only, thread-safe record list, optionally mirrored to a TSV file"""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self._records: List[LogRecord] = []
        self._lock = threading.Lock()
        self.path = Path(path) if path is not None else None
        if self.path is not None and self.path.exists():
            self.path.unlink()

    def append(self, record: LogRecord) -> None:
        with self._lock:
            self._records.append(record)
            if self.path is not None:
                export_log_records([record], self.path, append=True)

    def snapshot(self) -> List[LogRecord]:
        with self._lock:
            return list(self._records)

    def rows(self) -> List[Dict[str, object]]:
        return [record.to_row() for record in self.snapshot()]

    def __iter__(self) -> Iterator[LogRecord]:
        return iter(self.snapshot())

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)


@dataclass
class TrainingResult:
    """Summary of a finished run"""
    global_updates: int
    batches_seen: int
    emitted: Dict[str, int]
    stop_reason: str
    objective_states: Dict[str, Dict[str, object]]
    final_metrics: Dict[str, Dict[str, float]] = field(default_factory=dict)
    checkpoints: Dict[str, str] = field(default_factory=dict)
    log_stream: Optional[LogStream] = field(default=None, repr=False)

    def to_dict(self) -> Dict[str, object]:
        return {
            'global_updates': self.global_updates,
            'batches_seen': self.batches_seen,
            'emitted': dict(self.emitted),
            'stop_reason': self.stop_reason,
            'objective_states': dict(self.objective_states),
            'final_metrics': dict(self.final_metrics),
            'checkpoints': dict(self.checkpoints),
        }


class Adapter:
    """
    Trains the objectives of a schedule over one LangModule

    Args:
        lang_module: Registry with a head for every objective of the schedule
        schedule: Source of batches and of the stopping decision
        args: Training arguments
    """

    def __init__(self, lang_module: LangModule, schedule: Schedule, args: Optional[TrainingArguments] = None):
        self.args = args or TrainingArguments()
        self.args.validate()
        self.lang_module = lang_module
        self.schedule = schedule
        self.objectives: Dict[str, Objective] = {o.objective_id: o for o in schedule.all_objectives()}
        missing = [oid for oid in self.objectives if oid not in lang_module]
        if missing:
            raise RoutingError(f"objectives not registered with the LangModule: {', '.join(missing)}")
        self.accumulation_steps = self.args.gradient_accumulation_steps or schedule.default_accumulation_steps
        self.optimizer = AdamState(self.args.learning_rate, self.args.beta1, self.args.beta2, self.args.epsilon)
        self.log_stream = LogStream(self.args.log_file)
        self.global_update = 0
        self.batches_seen = 0
        self._last_eval_update: Optional[int] = None
        self._window_losses: Dict[str, List[float]] = defaultdict(list)

    # Helpers

    def _learning_rate(self) -> float:
        if self.args.warmup_steps <= 0:
            return self.args.learning_rate
        return self.args.learning_rate * min(1.0, (self.global_update + 1) / self.args.warmup_steps)

    def _record(self, objective_id: str, split: str, metric: str, value: float) -> None:
        self.log_stream.append(LogRecord(self.global_update, objective_id, split, metric, float(value)))

    def _optimizer_update(self) -> None:
        params = [p for p in self.lang_module.parameters() if p.grad is not None]
        adam_step(params, self.optimizer, lr=self._learning_rate())
        self.lang_module.zero_grad()
        self.global_update += 1

    def _log_train_losses(self) -> None:
        for objective_id, losses in sorted(self._window_losses.items()):
            if losses:
                self._record(objective_id, 'train', 'loss', sum(losses) / len(losses))
        self._window_losses.clear()

    def evaluate(self) -> Dict[str, Dict[str, float]]:
        """Evaluate every objective that has validation data; one record per metric"""
        results = {}
        for objective_id, objective in self.objectives.items():
            if not objective.has_split('val'):
                continue
            metrics = evaluate_objective(objective, 'val', self.lang_module)
            for metric, value in metrics.items():
                self._record(objective_id, 'val', metric, value)
            results[objective_id] = metrics
        self._last_eval_update = self.global_update
        return results

    def _after_update(self, progress: tqdm) -> None:
        progress.update(1)
        if self.global_update % self.args.log_interval == 0:
            self._log_train_losses()
        if self.global_update % self.args.eval_interval == 0:
            self.evaluate()
            converged = [oid for oid, o in self.objectives.items() if o.state.converged]
            if converged:
                log.debug(f"update {self.global_update}: converged {', '.join(converged)}")

    def _check_finite(self, objective_id: str, value: float) -> None:
        if math.isfinite(value):
            return
        self._record(objective_id, 'train', 'non_finite_loss', value)
        log.error(f"non-finite loss {value} for {objective_id} at update {self.global_update}")
        raise NonFiniteLossError(f"objective {objective_id!r} produced loss {value} at update {self.global_update}")

    # Loop

    def train(self) -> TrainingResult:
        """
        Run until the schedule stops or max_global_updates is reached

        Returns:
            TrainingResult with the log stream attached
        """
        args = self.args
        k = self.accumulation_steps
        log.info(
            f"training {list(self.objectives)} with {type(self.schedule).__name__}, "
            f"accumulation {k}, {self.lang_module.count_parameters()} parameters"
        )
        self.lang_module.train()
        self.lang_module.zero_grad()
        pending = 0
        phase = self.schedule.state.phase
        stop_reason = 'schedule'
        progress = tqdm(total=args.max_global_updates, disable=not args.show_progress, desc="training", unit="update")
        try:
            for batch in self.schedule.iter_batches('train'):
                if self.schedule.state.phase != phase:
                    if pending:
                        self._optimizer_update()
                        self._after_update(progress)
                        pending = 0
                    phase = self.schedule.state.phase
                    if args.reset_optimizer_between_phases:
                        self.optimizer.reset()
                    log.info(f"entering phase {phase} at update {self.global_update}")

                objective = self.objectives.get(batch.objective_id)
                if objective is None:
                    raise RoutingError(f"batch from unknown objective {batch.objective_id!r}")
                body = self.lang_module.body_for(batch.objective_id)
                head = self.lang_module.head_for(batch.objective_id)
                loss = objective.compute_loss(forward(body, head, batch), batch)
                value = float(loss.item())
                self._check_finite(batch.objective_id, value)
                backward(loss * (1.0 / k))
                self._window_losses[batch.objective_id].append(value)
                self.batches_seen += 1
                pending += 1
                progress.set_postfix({batch.objective_id: f"{value:.3f}"})

                if pending == k:
                    self._optimizer_update()
                    self._after_update(progress)
                    pending = 0
                    if args.max_global_updates is not None and self.global_update >= args.max_global_updates:
                        stop_reason = 'max_global_updates'
                        break

            if pending:
                self._optimizer_update()
                self._after_update(progress)
        finally:
            progress.close()
            self.lang_module.eval()

        if self._window_losses:
            self._log_train_losses()
        final_metrics: Dict[str, Dict[str, float]] = {}
        if args.evaluate_at_end and self._last_eval_update != self.global_update:
            final_metrics = self.evaluate()
        elif args.evaluate_at_end:
            final_metrics = {oid: dict(o.state.last_eval) for oid, o in self.objectives.items() if o.state.last_eval}

        checkpoints = {}
        if args.checkpoint_dir is not None:
            for objective_id in self.lang_module.heads:
                directory = Path(args.checkpoint_dir) / objective_id
                save_head_checkpoint(self.lang_module, objective_id, directory)
                checkpoints[objective_id] = str(directory)

        log.info(f"finished after {self.global_update} updates ({stop_reason})")
        return TrainingResult(
            global_updates=self.global_update,
            batches_seen=self.batches_seen,
            emitted=dict(self.schedule.state.emitted),
            stop_reason=stop_reason,
            objective_states={oid: o.state.to_dict() for oid, o in self.objectives.items()},
            final_metrics=final_metrics,
            checkpoints=checkpoints,
            log_stream=self.log_stream,
        )


def train(lang_module: LangModule, schedule: Schedule, args: Optional[TrainingArguments] = None) -> TrainingResult:
    """Build an Adapter and run it"""
    return Adapter(lang_module, schedule, args).train()
