from pathlib import Path

import pytest

from config.experiment import ExperimentConfig
from config.settings import ERROR_MARKER, RESULTS_COLUMNS
from experiments.runner import (
    ResultsRow, evaluate_checkpoint, generate_data, load_grid, prepare_domains, run_experiment, run_grid,
)
from main import main
from training.checkpoint import load_head_checkpoint
from utils.errors import ConfigError
from utils.export_utils import read_table

GRID_DIR = Path(__file__).resolve().parent.parent / "experiments" / "grid"

TINY = """
experiment={name}
schedule={schedule}
seed=1
data.train_size=16
data.val_size=4
model.d_model=16
model.n_heads=2
model.enc_layers=1
model.dec_layers=1
model.ffn_dim=32
model.max_len=16
schedule.max_steps=3
training.eval_interval=2
training.max_eval_samples=4
objective.1.kind=seq2seq
objective.1.domain=ID
objective.1.batch_size=4
"""


def tiny_config(tmp_path, name="tiny", schedule="parallel", extra=""):
    config = ExperimentConfig.from_text(TINY.format(name=name, schedule=schedule) + extra)
    return config.replace(output_dir=str(tmp_path))


def test_results_row_with_error():
    config = ExperimentConfig.from_text(TINY.format(name="broken", schedule="parallel"))
    row = ResultsRow.failed(config, "boom").to_dict()
    assert list(row) == RESULTS_COLUMNS
    assert row['objectives'] == "seq2seq_ID"
    assert all(row[column] == ERROR_MARKER for column in RESULTS_COLUMNS[3:])


def test_run_experiment_writes_outputs(tmp_path):
    outcome = run_experiment(tiny_config(tmp_path), show_progress=False)
    out = Path(outcome.output_dir)
    assert out == tmp_path / "tiny"
    assert {"config.cfg", "log.tsv", "results.tsv"} <= {p.name for p in out.iterdir()}
    assert outcome.primary_objective == "seq2seq_ID"
    assert Path(outcome.primary_checkpoint).is_dir()

    table = read_table(out / "results.tsv")
    assert list(table.columns) == RESULTS_COLUMNS
    row = table.iloc[0]
    assert row['experiment'] == "tiny"
    assert 0.0 <= float(row['bleu_ood']) <= 100.0
    assert 0.0 <= float(row['em_id']) <= 1.0
    assert ExperimentConfig.from_file(out / "config.cfg") == tiny_config(tmp_path)


def test_unresolved_reference_outside_grid(tmp_path):
    config = tiny_config(tmp_path, extra="scenario=finetune\ninit_checkpoint=experiment:base\n")
    with pytest.raises(ConfigError, match="grid"):
        run_experiment(config, show_progress=False)


def test_empty_grid_has_header_only(tmp_path):
    path = run_grid([], tmp_path)
    assert path.read_text(encoding='utf-8').strip() == "\t".join(RESULTS_COLUMNS)


def test_grid_records_failures_and_continues(tmp_path):
    broken = tiny_config(tmp_path, name="broken", extra=(
        "objective.2.kind=backtranslation\n"
        "objective.2.domain=AD\n"
        f"objective.2.reverse_translator={tmp_path / 'missing'}\n"
    ))
    configs = [broken, tiny_config(tmp_path, name="ok")]
    table = read_table(run_grid(configs, tmp_path))
    assert list(table['experiment']) == ["broken", "ok"]
    assert table.iloc[0]['bleu_id'] == ERROR_MARKER
    assert table.iloc[1]['bleu_id'] != ERROR_MARKER


def test_grid_resolves_checkpoint_references(tmp_path):
    base = tiny_config(tmp_path, name="base")
    finetuned = tiny_config(tmp_path, name="finetuned", extra=(
        "scenario=finetune\ninit_checkpoint=experiment:base\n"
        "objective.2.kind=denoising\nobjective.2.domain=AD\nobjective.2.batch_size=4\n"
    ))
    orphan = tiny_config(tmp_path, name="orphan", extra="scenario=finetune\ninit_checkpoint=experiment:nowhere\n")
    table = read_table(run_grid([finetuned, orphan, base], tmp_path))
    assert list(table['experiment']) == ["finetuned", "orphan", "base"]
    assert table.iloc[0]['em_ad'] != ERROR_MARKER
    assert table.iloc[1]['em_ad'] == ERROR_MARKER
    assert table.iloc[2]['em_ad'] != ERROR_MARKER


def test_grid_rerun_is_byte_identical(tmp_path):
    configs = [tiny_config(tmp_path, name="a"), tiny_config(tmp_path, name="b", schedule="sequential")]
    first = run_grid(configs, tmp_path / "first").read_bytes()
    second = run_grid(configs, tmp_path / "second").read_bytes()
    assert first == second


def test_load_grid(tmp_path):
    configs = load_grid(GRID_DIR)
    assert [config.experiment for config in configs][:2] == ["01_pretrain_seq2seq_id", "02_sequential_backtranslation_ad"]
    with pytest.raises(ConfigError):
        load_grid(tmp_path)


def test_generated_data_is_read_back(tmp_path):
    config = tiny_config(tmp_path)
    written = generate_data(config, tmp_path / "data")
    assert len(written) == 12
    from_files = prepare_domains(config.replace(data_dir=str(tmp_path / "data")))
    generated = prepare_domains(config)
    for domain_id, domain in generated.items():
        assert from_files[domain_id].val.pairs() == domain.val.pairs()


def test_evaluate_checkpoint(tmp_path):
    outcome = run_experiment(tiny_config(tmp_path), show_progress=False)
    config = tiny_config(tmp_path, extra="objective.2.kind=seq2seq\nobjective.2.domain=AD\n")
    metrics = evaluate_checkpoint(config, outcome.primary_checkpoint, tmp_path / "evaluation.tsv")
    assert set(metrics) == {f"{oid}.{m}" for oid in ("seq2seq_ID", "seq2seq_AD")
                            for m in ("bleu", "exact_match", "token_accuracy")}
    assert len(read_table(tmp_path / "evaluation.tsv")) == 6
    with pytest.raises(ConfigError):
        evaluate_checkpoint(config)


def test_cli_train_and_errors(tmp_path):
    config_path = tmp_path / "tiny.cfg"
    config_path.write_text(TINY.format(name="cli", schedule="parallel"), encoding='utf-8')
    assert main(["train", "--config", str(config_path), "--out", str(tmp_path / "runs"), "--seed", "2"]) == 0
    saved = ExperimentConfig.from_file(tmp_path / "runs" / "cli" / "config.cfg")
    assert saved.seed == 2
    assert load_head_checkpoint(tmp_path / "runs" / "cli" / "checkpoints" / "seq2seq_ID").tokenizer is not None

    assert main(["train", "--config", str(tmp_path / "absent.cfg")]) == 1
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["grid", "--config", str(empty), "--out", str(tmp_path / "runs")]) == 1
    with pytest.raises(SystemExit):
        main(["fly", "--config", str(config_path)])


def test_cli_generate_data(tmp_path):
    assert main(["generate-data", "--config", str(GRID_DIR / "01_pretrain_seq2seq_id.cfg"),
                 "--out", str(tmp_path)]) == 0
    assert (tmp_path / "OOD" / "val.tgt").exists()


def test_cli_generate_data_seed_changes_corpora(tmp_path):
    config_path = str(GRID_DIR / "01_pretrain_seq2seq_id.cfg")
    for seed in (1, 99):
        assert main(["generate-data", "--config", config_path, "--out", str(tmp_path / str(seed)),
                     "--seed", str(seed)]) == 0
    first = (tmp_path / "1" / "ID" / "train.src").read_bytes()
    second = (tmp_path / "99" / "ID" / "train.src").read_bytes()
    assert first != second
    config = ExperimentConfig.from_file(config_path).replace(data_seed=1)
    generate_data(config, tmp_path / "direct")
    assert first == (tmp_path / "direct" / "ID" / "train.src").read_bytes()


# End-to-end reproductions on the default grid

SEEDS = (1, 2, 3)


def grid_row(table, experiment):
    return table[table['experiment'] == experiment].iloc[0]


def run_rows(names, seed, out):
    configs = [ExperimentConfig.from_file(GRID_DIR / f"{name}.cfg").replace(seed=seed) for name in names]
    table = read_table(run_grid(configs, out, jobs=len(configs), show_progress=False))
    return [grid_row(table, name) for name in names]


@pytest.mark.slow
@pytest.mark.parametrize("seed", SEEDS)
def test_forgetting_reproduction(tmp_path, seed):
    baseline, sequential, parallel = run_rows(
        ["01_pretrain_seq2seq_id", "03_sequential_seq2seq_ad", "05_parallel_seq2seq_ad"], seed, tmp_path)

    assert float(baseline['em_id']) >= 0.90
    assert float(baseline['em_ad']) <= 0.10
    assert float(baseline['em_id']) - float(sequential['em_id']) >= 0.30
    assert float(sequential['em_ad']) >= 0.80
    assert abs(float(parallel['em_id']) - float(baseline['em_id'])) <= 0.10
    assert float(parallel['em_ad']) >= 0.80


@pytest.mark.slow
@pytest.mark.parametrize("seed", SEEDS)
def test_unsupervised_gap_ordering(tmp_path, seed):
    _, denoising, backtranslation, supervised = run_rows([
        "01_pretrain_seq2seq_id", "08_finetune_parallel_denoising_ad",
        "09_finetune_parallel_backtranslation_ad", "10_finetune_parallel_seq2seq_ad",
    ], seed, tmp_path)

    assert float(backtranslation['em_ad']) >= float(denoising['em_ad'])
    for metric in ('em_ad', 'bleu_ad'):
        assert float(supervised[metric]) >= float(denoising[metric])
        assert float(supervised[metric]) >= float(backtranslation[metric])


@pytest.mark.slow
def test_full_grid(tmp_path):
    configs = load_grid(GRID_DIR)
    table = read_table(run_grid(configs, tmp_path, jobs=4, show_progress=False))
    assert list(table['experiment']) == [config.experiment for config in configs]
    assert len(table) == 8
    assert ERROR_MARKER not in set(table['em_ad'].astype(str))
