"""
Parallel and sequential sampling strategies
"""
from typing import Iterator, Optional

from config.settings import DEFAULT_PARALLEL_MAX_STEPS, DEFAULT_SEQUENTIAL_MAX_STEPS, SAMPLING_STRATEGIES
from objectives.base import Objective
from schedules.base import Schedule, log
from utils.errors import ConfigError


class ParallelSchedule(Schedule):
    """
    Round-robin over every objective, in registration order

    Stops when all objectives converged or one reached its cap, but only
    between rounds, so every round sees each objective once.

    Args:
        freeze_converged: Skip converged objectives in later rounds
        sampling: "round_robin", or "uniform" to draw objectives at random
    """
    default_max_steps = DEFAULT_PARALLEL_MAX_STEPS

    def __init__(self, objectives, max_steps=None, global_max_steps: Optional[int] = None, seed: int = 0,
                 freeze_converged: bool = False, sampling: str = 'round_robin'):
        super().__init__(objectives, max_steps, global_max_steps, seed)
        if sampling not in SAMPLING_STRATEGIES:
            raise ConfigError(f"unknown sampling strategy {sampling!r} (known: {', '.join(SAMPLING_STRATEGIES)})")
        self.freeze_converged = freeze_converged
        self.sampling = sampling

    def _active(self, split: str):
        return [
            objective for objective in self.objectives[split].values()
            if not (self.freeze_converged and objective.state.converged)
        ]

    def _sample_objectives(self, split: str) -> Iterator[Objective]:
        if self.sampling == 'uniform':
            rng = self.streams.stream(f"schedule.{split}")
            while True:
                active = self._active(split)
                if not active:
                    return
                yield active[int(rng.integers(len(active)))]
        while True:
            active = self._active(split)
            if not active:
                return
            for position, objective in enumerate(active):
                self.state.round_open = position < len(active) - 1
                yield objective

    @property
    def default_accumulation_steps(self) -> int:
        return len(self.objectives.get('train', {})) or 1

    def should_stop(self) -> bool:
        if self.state.round_open and not self.state.exhausted:
            return False
        return super().should_stop()


class SequentialSchedule(Schedule):
    """
    One objective at a time

    Objective k is sampled until it converges or reaches its cap, then the
    schedule moves on to objective k + 1. Each phase restarts the objective's
    convergence tracking.
    """
    default_max_steps = DEFAULT_SEQUENTIAL_MAX_STEPS

    def _phase_done(self, objective: Objective) -> bool:
        return objective.state.converged or self.emitted(objective.objective_id) >= self.max_steps_for(objective.objective_id)

    def _sample_objectives(self, split: str) -> Iterator[Objective]:
        objectives = list(self.objectives[split].values())
        while self.state.phase < len(objectives):
            objective = objectives[self.state.phase]
            objective.state.begin_phase()
            log.info(f"phase {self.state.phase}: {objective.objective_id}")
            while not self._phase_done(objective):
                yield objective
            self.state.phase += 1

    def should_stop(self) -> bool:
        if self.state.exhausted or self._global_cap_reached():
            return True
        objectives = list(self.objectives['train'].values()) if 'train' in self.objectives else self.all_objectives()
        if self.state.phase >= len(objectives):
            return True
        return self.state.phase == len(objectives) - 1 and self._phase_done(objectives[-1])
