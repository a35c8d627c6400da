"""
Schedule: which objective supplies the next batch, and when training stops

A strategy only has to implement _sample_objectives(split), an unbounded
stream of objective references. The base class turns that stream into
batches (per-objective dataset cursors with seeded reshuffling at every
epoch) and provides the default stopping rule.
"""
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

from loguru import logger

from backend.rng import RngStreams
from config.settings import DEFAULT_PARALLEL_MAX_STEPS
from objectives.base import Objective, Pair
from objectives.batch import Batch
from utils.errors import ConfigError, DataError, ScheduleExhausted

MaxSteps = Union[int, Mapping[str, int]]

log = logger.bind(source="schedule")


@dataclass
class DatasetCursor:
    """Position of one objective in its current shuffled epoch"""
    epoch: int = 0
    position: int = 0
    pairs: Optional[List[Pair]] = None
    order: List[int] = field(default_factory=list)

    @property
    def exhausted(self) -> bool:
        return self.pairs is None or self.position >= len(self.order)


@dataclass
class ScheduleState:
    cursors: Dict[Tuple[str, str], DatasetCursor] = field(default_factory=dict)
    emitted: Dict[str, int] = field(default_factory=dict)
    total_emitted: int = 0
    phase: int = 0
    round_open: bool = False
    exhausted: bool = False


class Schedule(ABC):
    """
    Base class of sampling strategies

    Args:
        objectives: Objectives in registration order, or a mapping split -> objectives
        max_steps: Per-objective cap on emitted batches (int or objective_id -> int)
        global_max_steps: Cap on the total number of emitted batches
        seed: Seed of the shuffle and sampling streams
    """
    default_max_steps: int = DEFAULT_PARALLEL_MAX_STEPS

    def __init__(
        self,
        objectives: Union[Sequence[Objective], Mapping[str, Sequence[Objective]]],
        max_steps: Optional[MaxSteps] = None,
        global_max_steps: Optional[int] = None,
        seed: int = 0,
    ):
        if not isinstance(objectives, Mapping):
            objectives = {'train': objectives}
        self.objectives: Dict[str, Dict[str, Objective]] = {}
        for split, split_objectives in objectives.items():
            ordered: Dict[str, Objective] = {}
            for objective in split_objectives:
                if objective.objective_id in ordered:
                    raise ConfigError(f"objective id {objective.objective_id!r} appears twice in split {split!r}")
                ordered[objective.objective_id] = objective
            if not ordered:
                raise ConfigError(f"schedule split {split!r} has no objectives")
            self.objectives[split] = ordered
        self.max_steps = max_steps if max_steps is not None else self.default_max_steps
        self.global_max_steps = global_max_steps
        self.streams = RngStreams(seed)
        self.state = ScheduleState()
        self._samplers: Dict[str, Iterator[Objective]] = {}

    # Extension surface

    @abstractmethod
    def _sample_objectives(self, split: str) -> Iterator[Objective]:
        """Unbounded stream of the objectives to draw batches from"""

    # Public API

    def sample_objectives(self, split: str = 'train') -> Iterator[Objective]:
        if not self.objectives.get(split):
            raise ConfigError(f"no objectives registered for split {split!r}")
        return self._sample_objectives(split)

    def all_objectives(self) -> List[Objective]:
        unique: Dict[str, Objective] = {}
        for split_objectives in self.objectives.values():
            unique.update(split_objectives)
        return list(unique.values())

    def max_steps_for(self, objective_id: str) -> int:
        if isinstance(self.max_steps, Mapping):
            return int(self.max_steps.get(objective_id, self.default_max_steps))
        return int(self.max_steps)

    @property
    def default_accumulation_steps(self) -> int:
        return 1

    def next_batch(self, split: str = 'train') -> Batch:
        """
        Batch of the next sampled objective

        Raises:
            ScheduleExhausted: the stopping condition holds or the strategy ran dry
        """
        if self.should_stop():
            raise ScheduleExhausted("schedule has reached its stopping condition")
        if split not in self._samplers:
            self._samplers[split] = self.sample_objectives(split)
        try:
            objective = next(self._samplers[split])
        except StopIteration:
            self.state.exhausted = True
            raise ScheduleExhausted(f"no objective left to sample on split {split!r}") from None
        batch = self._take(split, objective)
        self.state.emitted[objective.objective_id] = self.state.emitted.get(objective.objective_id, 0) + 1
        self.state.total_emitted += 1
        return batch

    def iter_batches(self, split: str = 'train') -> Iterator[Batch]:
        while not self.should_stop():
            try:
                yield self.next_batch(split)
            except ScheduleExhausted:
                return

    def should_stop(self) -> bool:
        """True once every objective converged or any objective reached its cap"""
        if self.state.exhausted or self._global_cap_reached():
            return True
        objectives = self.all_objectives()
        if all(objective.state.converged for objective in objectives):
            return True
        return any(self.emitted(o.objective_id) >= self.max_steps_for(o.objective_id) for o in objectives)

    def emitted(self, objective_id: str) -> int:
        return self.state.emitted.get(objective_id, 0)

    # Internals

    def _global_cap_reached(self) -> bool:
        return self.global_max_steps is not None and self.state.total_emitted >= self.global_max_steps

    def _take(self, split: str, objective: Objective) -> Batch:
        key = (split, objective.objective_id)
        cursor = self.state.cursors.setdefault(key, DatasetCursor())
        if cursor.exhausted:
            if cursor.pairs is not None:
                cursor.epoch += 1
                if split == 'train':
                    objective.state.epochs_completed += 1
            cursor.pairs = objective.epoch_pairs(split, cursor.epoch)
            if not cursor.pairs:
                raise DataError(f"objective {objective.objective_id!r} has no {split} examples")
            rng = self.streams.fresh(f"shuffle.{split}.{objective.objective_id}.{cursor.epoch}")
            cursor.order = [int(i) for i in rng.permutation(len(cursor.pairs))]
            cursor.position = 0
        indices = cursor.order[cursor.position:cursor.position + objective.batch_size]
        cursor.position += len(indices)
        return objective.make_batch([cursor.pairs[i] for i in indices])

    def __repr__(self) -> str:
        names = {split: list(objectives) for split, objectives in self.objectives.items()}
        return f"{type(self).__name__}(objectives={names})"
