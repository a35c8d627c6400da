import pytest

from objectives.seq2seq import Seq2SeqObjective
from schedules.base import Schedule
from schedules.strategies import ParallelSchedule, SequentialSchedule
from training.adapter import Adapter, TrainingArguments
from utils.errors import ConfigError, ScheduleExhausted


def make_objective(oid, vocab, size=12, batch_size=2):
    texts = [" ".join("abcdef"[(i + j) % 6] for j in range(1 + i % 3)) for i in range(size)]
    return Seq2SeqObjective(oid, texts, texts, batch_size=batch_size, tokenizer=vocab)


def ids(batches):
    return [batch.objective_id for batch in batches]


def test_parallel_alternates(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps=3)
    assert ids(schedule.iter_batches()) == ["A", "B"] * 3


def test_parallel_single_objective(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab)], max_steps=4)
    assert ids(schedule.iter_batches()) == ["A"] * 4


def test_parallel_per_objective_caps(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps={"A": 5, "B": 5})
    assert len(list(schedule.iter_batches())) == 10
    assert schedule.emitted("A") == schedule.emitted("B") == 5


def test_parallel_stops_only_between_rounds(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps={"A": 1, "B": 3})
    assert ids(schedule.iter_batches()) == ["A", "B"]


def test_batch_sizes_follow_objectives(vocab):
    first, second = make_objective("A", vocab, size=20, batch_size=4), make_objective("B", vocab, size=20, batch_size=8)
    schedule = ParallelSchedule([first, second], max_steps=2)
    assert [len(batch) for batch in schedule.iter_batches()] == [4, 8, 4, 8]


def test_epoch_boundary(vocab):
    objective = make_objective("A", vocab, size=10, batch_size=4)
    schedule = ParallelSchedule([objective], max_steps=4)
    assert [len(batch) for batch in schedule.iter_batches()] == [4, 4, 2, 4]
    assert objective.state.epochs_completed == 1


def test_epoch_covers_every_example_once(vocab):
    objective = make_objective("A", vocab, size=10, batch_size=4)
    schedule = ParallelSchedule([objective], max_steps=3)
    seen = [source for batch in schedule.iter_batches() for source in batch.raw_sources]
    assert sorted(seen) == sorted(objective.dataset('train').texts)


def test_all_converged_stops(vocab):
    objectives = [make_objective("A", vocab), make_objective("B", vocab)]
    for objective in objectives:
        objective.state.converged = True
    schedule = ParallelSchedule(objectives, max_steps=10)
    assert schedule.should_stop()
    with pytest.raises(ScheduleExhausted):
        schedule.next_batch()


def test_fresh_objectives_do_not_stop(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps=10)
    assert not schedule.should_stop()


def test_one_converged_objective_keeps_training(vocab):
    first, second = make_objective("A", vocab), make_objective("B", vocab)
    first.state.converged = True
    assert ids(ParallelSchedule([first, second], max_steps=2).iter_batches()) == ["A", "B"] * 2
    assert ids(ParallelSchedule([first, second], max_steps=2, freeze_converged=True).iter_batches()) == ["B", "B"]


def test_global_cap(vocab):
    schedule = ParallelSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps=50,
                                global_max_steps=4)
    assert len(list(schedule.iter_batches())) == 4


@pytest.mark.parametrize("global_max_steps", range(1, 10))
def test_global_cap_overshoots_by_less_than_a_round(vocab, global_max_steps):
    objectives = [make_objective(oid, vocab) for oid in "ABC"]
    schedule = ParallelSchedule(objectives, max_steps=50, global_max_steps=global_max_steps)
    emitted = len(list(schedule.iter_batches()))
    assert global_max_steps <= emitted <= global_max_steps + len(objectives) - 1
    assert emitted % len(objectives) == 0


def test_uniform_sampling_is_seeded(vocab):
    def run(seed):
        objectives = [make_objective("A", vocab), make_objective("B", vocab)]
        return ids(ParallelSchedule(objectives, max_steps=20, global_max_steps=20, seed=seed,
                                    sampling='uniform').iter_batches())

    assert run(5) == run(5)
    assert set(run(5)) == {"A", "B"}


def test_unknown_sampling(vocab):
    with pytest.raises(ConfigError):
        ParallelSchedule([make_objective("A", vocab)], sampling='weighted')


def test_duplicate_objective_ids(vocab):
    with pytest.raises(ConfigError):
        ParallelSchedule([make_objective("A", vocab), make_objective("A", vocab)])


def test_parallel_accumulation_default(vocab):
    schedule = ParallelSchedule([make_objective(oid, vocab) for oid in "ABC"])
    assert schedule.default_accumulation_steps == 3


def test_sequential_phases(vocab):
    schedule = SequentialSchedule([make_objective("A", vocab), make_objective("B", vocab)], max_steps=2)
    assert ids(schedule.iter_batches()) == ["A", "A", "B", "B"]
    with pytest.raises(ScheduleExhausted):
        schedule.next_batch()


def test_sequential_moves_on_after_convergence(vocab):
    first, second = make_objective("A", vocab), make_objective("B", vocab)
    schedule = SequentialSchedule([first, second], max_steps=3)
    assert schedule.next_batch().objective_id == "A"
    first.state.converged = True
    assert ids(schedule.iter_batches()) == ["B", "B", "B"]
    assert schedule.state.phase == 1


def test_sequential_accumulates_one_objective(vocab):
    schedule = SequentialSchedule([make_objective("A", vocab), make_objective("B", vocab)])
    assert schedule.default_accumulation_steps == 1


# Custom strategies

class FirstObjectiveOnly(Schedule):
    def _sample_objectives(self, split):
        first = next(iter(self.objectives[split].values()))
        while True:
            yield first


def test_custom_schedule_trains_end_to_end(lang_module, vocab):
    objectives = [make_objective("A", vocab), make_objective("B", vocab)]
    for objective in objectives:
        lang_module.register_objective(objective)
    schedule = FirstObjectiveOnly(objectives, max_steps=3)
    result = Adapter(lang_module, schedule, TrainingArguments(evaluate_at_end=False, show_progress=False)).train()
    assert (schedule.emitted("A"), schedule.emitted("B")) == (3, 0)
    assert result.batches_seen == result.global_updates == 3
