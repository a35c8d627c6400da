from pathlib import Path

import pytest

from config.experiment import ExperimentConfig
from utils.data_parser import clean_string, parse_key_value_text, parse_list
from utils.errors import ConfigError

GRID_DIR = Path(__file__).resolve().parent.parent / "experiments" / "grid"

BASIC = """
# two objectives
experiment=demo
schedule=sequential
seed=3
schedule.max_steps=40
training.learning_rate=0.001
objective.1.kind=seq2seq
objective.1.domain=ID
objective.2.kind=backtranslation
objective.2.domain=AD
objective.2.reverse_translator=identity
"""


def test_parse_basic_config():
    config = ExperimentConfig.from_text(BASIC)
    assert config.experiment == "demo"
    assert config.schedule == "sequential"
    assert config.seed == 3
    assert config.max_steps == 40
    assert config.learning_rate == 0.001
    assert [spec.id for spec in config.objectives] == ["seq2seq_ID", "backtranslation_AD"]
    assert config.objectives[1].reverse_translator == "identity"
    assert config.objectives_label == "seq2seq_ID+backtranslation_AD"


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="unknown config key 'training.momentum'"):
        ExperimentConfig.from_text(BASIC + "training.momentum=0.9\n")
    with pytest.raises(ConfigError, match="objective.1.colour"):
        ExperimentConfig.from_text(BASIC + "objective.1.colour=red\n")


def test_finetune_requires_checkpoint():
    with pytest.raises(ConfigError, match="init_checkpoint"):
        ExperimentConfig.from_text(BASIC + "scenario=finetune\n")


def test_checkpoint_reference():
    config = ExperimentConfig.from_text(BASIC + "scenario=finetune\ninit_checkpoint=experiment:base\n")
    assert config.init_reference == "base"
    assert ExperimentConfig.from_text(BASIC).init_reference is None


@pytest.mark.parametrize("line, message", [
    ("schedule.sampling=random\n", "schedule.sampling"),
    ("objective.3.kind=translation\n", "objective.3.kind"),
    ("objective.3.kind=seq2seq\n", "domain or texts"),
    ("objective.3.kind=seq2seq\nobjective.3.domain=XX\n", "unknown domain"),
    ("objective.3.kind=seq2seq\nobjective.3.domain=ID\n", "duplicate objective id"),
    ("model.n_heads=3\n", "divisible"),
    ("training.eval_interval=0\n", ">= 1"),
    ("schedule.freeze_converged=maybe\n", "boolean"),
])
def test_invalid_values(line, message):
    with pytest.raises(ConfigError, match=message):
        ExperimentConfig.from_text(BASIC + line)


def test_no_objectives():
    with pytest.raises(ConfigError, match="at least one objective"):
        ExperimentConfig.from_text("experiment=empty\n")


def test_text_roundtrip():
    config = ExperimentConfig.from_text(BASIC + "training.gradient_accumulation_steps=2\ndata.dir=corpora\n")
    assert ExperimentConfig.from_text(config.to_text()) == config


def test_replace_keeps_other_fields():
    config = ExperimentConfig.from_text(BASIC)
    changed = config.replace(seed=9, output_dir="elsewhere")
    assert (changed.seed, changed.output_dir) == (9, "elsewhere")
    assert changed.objectives == config.objectives
    assert config.seed == 3


def test_default_grid_loads():
    paths = sorted(GRID_DIR.glob("*.cfg"))
    assert len(paths) == 8
    for path in paths:
        config = ExperimentConfig.from_file(path)
        assert config.experiment == path.stem
    finetuned = ExperimentConfig.from_file(GRID_DIR / "08_finetune_parallel_denoising_ad.cfg")
    assert finetuned.init_reference == "01_pretrain_seq2seq_id"


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="cannot read"):
        ExperimentConfig.from_file(tmp_path / "absent.cfg")


# Key/value parsing

def test_parse_key_value_text():
    entries = parse_key_value_text("# c\n\n a.b = x  y \nc=1=2\n")
    assert entries == {"a.b": "x y", "c": "1=2"}


@pytest.mark.parametrize("text, message", [
    ("novalue\n", "expected key=value"),
    ("a=1\na=2\n", "duplicate key"),
    ("1a=1\n", "invalid key"),
])
def test_malformed_lines(text, message):
    with pytest.raises(ConfigError, match=message):
        parse_key_value_text(text, origin="grid.cfg")


def test_small_helpers():
    assert clean_string(None) == ''
    assert parse_list("bleu, ,exact_match") == ["bleu", "exact_match"]
