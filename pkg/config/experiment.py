"""
Typed experiment configuration parsed from flat key=value files
"""
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from config.settings import (
    DEFAULT_BATCH_SIZE, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_D_MODEL, DEFAULT_DATA_SEED,
    DEFAULT_DEC_LAYERS, DEFAULT_DROPOUT, DEFAULT_ENC_LAYERS, DEFAULT_EPSILON, DEFAULT_EVAL_INTERVAL,
    DEFAULT_FFN_DIM, DEFAULT_LEARNING_RATE, DEFAULT_LOG_INTERVAL, DEFAULT_MAX_EVAL_SAMPLES,
    DEFAULT_MAX_LEN, DEFAULT_MIN_DELTA, DEFAULT_N_HEADS, DEFAULT_NOISE_WINDOW, DEFAULT_OUTPUT_DIR,
    DEFAULT_PATIENCE, DEFAULT_PERMUTE_FRACTION, DEFAULT_SEED, DEFAULT_TRAIN_SIZE, DEFAULT_VAL_SIZE,
    DEFAULT_WARMUP_STEPS, DOMAIN_ORDER, SAMPLING_STRATEGIES,
)
from utils.data_parser import parse_bool, parse_float, parse_int, parse_key_value_file, parse_key_value_text
from utils.errors import ConfigError

OBJECTIVE_KINDS = ['seq2seq', 'denoising', 'backtranslation', 'token_classification', 'sequence_classification']
SEQ2SEQ_KINDS = ['seq2seq', 'denoising', 'backtranslation']
SCENARIOS = ['pretrain', 'finetune']
SCHEDULES = ['sequential', 'parallel']
CHECKPOINT_REFERENCE = 'experiment:'

Parser = Callable[[str, str], Any]


def _text(key: str, value: str) -> str:
    return value


def _optional_int(key: str, value: str) -> Optional[int]:
    return None if value.lower() in ('', 'none') else parse_int(key, value, minimum=1)


def _positive_int(key: str, value: str) -> int:
    return parse_int(key, value, minimum=1)


def _non_negative_int(key: str, value: str) -> int:
    return parse_int(key, value, minimum=0)


def _non_negative_float(key: str, value: str) -> float:
    return parse_float(key, value, minimum=0.0)


@dataclass
class ObjectiveSpec:
    """One objective.<n>.* block"""
    index: int
    kind: str = ''
    domain: Optional[str] = None
    objective_id: Optional[str] = None
    batch_size: int = DEFAULT_BATCH_SIZE
    texts: Optional[str] = None
    labels: Optional[str] = None
    val_texts: Optional[str] = None
    val_labels: Optional[str] = None
    reverse_translator: str = 'oracle'
    noise_window: int = DEFAULT_NOISE_WINDOW
    noise_fraction: float = DEFAULT_PERMUTE_FRACTION
    share_head: bool = True
    cache_pseudo_sources: bool = False
    evaluators: Optional[str] = None

    @property
    def id(self) -> str:
        if self.objective_id:
            return self.objective_id
        return f"{self.kind}_{self.domain}" if self.domain else f"{self.kind}_{self.index}"

    @property
    def is_seq2seq(self) -> bool:
        return self.kind in SEQ2SEQ_KINDS

    def validate(self) -> None:
        prefix = f"objective.{self.index}"
        if self.kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"{prefix}.kind: expected one of {', '.join(OBJECTIVE_KINDS)}, got {self.kind!r}")
        if self.domain is None and self.texts is None:
            raise ConfigError(f"{prefix}: needs either a domain or texts")
        if self.domain is not None and self.domain not in DOMAIN_ORDER:
            raise ConfigError(f"{prefix}.domain: unknown domain {self.domain!r} (defined: {', '.join(DOMAIN_ORDER)})")
        if self.kind in ('token_classification', 'sequence_classification') and self.texts is not None and self.labels is None:
            raise ConfigError(f"{prefix}.labels: classification objectives need labels")
        if not 0.0 <= self.noise_fraction <= 1.0:
            raise ConfigError(f"{prefix}.noise.fraction: must lie in [0, 1], got {self.noise_fraction}")
        if self.noise_window < 2:
            raise ConfigError(f"{prefix}.noise.window: must be >= 2, got {self.noise_window}")


# key suffix -> (attribute, parser)
OBJECTIVE_KEYS: Dict[str, tuple] = {
    'kind': ('kind', _text),
    'domain': ('domain', _text),
    'id': ('objective_id', _text),
    'batch_size': ('batch_size', _positive_int),
    'texts': ('texts', _text),
    'labels': ('labels', _text),
    'val_texts': ('val_texts', _text),
    'val_labels': ('val_labels', _text),
    'reverse_translator': ('reverse_translator', _text),
    'noise.window': ('noise_window', _positive_int),
    'noise.fraction': ('noise_fraction', _non_negative_float),
    'share_head': ('share_head', parse_bool),
    'cache_pseudo_sources': ('cache_pseudo_sources', parse_bool),
    'evaluators': ('evaluators', _text),
}


@dataclass
class ExperimentConfig:
    """A complete, validated experiment description"""
    experiment: str = 'experiment'
    scenario: str = 'pretrain'
    schedule: str = 'parallel'
    seed: int = DEFAULT_SEED
    output_dir: str = DEFAULT_OUTPUT_DIR
    init_checkpoint: Optional[str] = None

    data_seed: int = DEFAULT_DATA_SEED
    train_size: int = DEFAULT_TRAIN_SIZE
    val_size: int = DEFAULT_VAL_SIZE
    data_dir: Optional[str] = None

    d_model: int = DEFAULT_D_MODEL
    n_heads: int = DEFAULT_N_HEADS
    enc_layers: int = DEFAULT_ENC_LAYERS
    dec_layers: int = DEFAULT_DEC_LAYERS
    ffn_dim: int = DEFAULT_FFN_DIM
    max_len: int = DEFAULT_MAX_LEN
    dropout: float = DEFAULT_DROPOUT

    max_steps: Optional[int] = None
    global_max_steps: Optional[int] = None
    sampling: str = 'round_robin'
    freeze_converged: bool = False

    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = DEFAULT_BETA1
    beta2: float = DEFAULT_BETA2
    epsilon: float = DEFAULT_EPSILON
    gradient_accumulation_steps: Optional[int] = None
    eval_interval: int = DEFAULT_EVAL_INTERVAL
    log_interval: int = DEFAULT_LOG_INTERVAL
    max_global_updates: Optional[int] = None
    warmup_steps: int = DEFAULT_WARMUP_STEPS
    patience: int = DEFAULT_PATIENCE
    min_delta: float = DEFAULT_MIN_DELTA
    reset_optimizer_between_phases: bool = True
    max_eval_samples: int = DEFAULT_MAX_EVAL_SAMPLES

    objectives: List[ObjectiveSpec] = field(default_factory=list)

    @property
    def objectives_label(self) -> str:
        """Table label such as seq2seq_ID+backtranslation_AD"""
        return '+'.join(spec.id for spec in self.objectives)

    @property
    def init_reference(self) -> Optional[str]:
        """Experiment id referenced by init_checkpoint=experiment:<id>, if any"""
        if self.init_checkpoint and self.init_checkpoint.startswith(CHECKPOINT_REFERENCE):
            return self.init_checkpoint[len(CHECKPOINT_REFERENCE):]
        return None

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario: expected one of {', '.join(SCENARIOS)}, got {self.scenario!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule: expected one of {', '.join(SCHEDULES)}, got {self.schedule!r}")
        if self.sampling not in SAMPLING_STRATEGIES:
            raise ConfigError(f"schedule.sampling: expected one of {', '.join(SAMPLING_STRATEGIES)}, got {self.sampling!r}")
        if self.scenario == 'finetune' and not self.init_checkpoint:
            raise ConfigError("init_checkpoint: the finetune scenario requires an init_checkpoint")
        if not self.objectives:
            raise ConfigError("objective.<n>.kind: at least one objective is required")
        seen = set()
        for spec in self.objectives:
            spec.validate()
            if spec.id in seen:
                raise ConfigError(f"objective.{spec.index}.id: duplicate objective id {spec.id!r}")
            seen.add(spec.id)
        if self.d_model % self.n_heads:
            raise ConfigError(f"model.d_model: {self.d_model} is not divisible by model.n_heads={self.n_heads}")

    # Parsing

    @classmethod
    def from_dict(cls, entries: Dict[str, str]) -> 'ExperimentConfig':
        """
        Build a config from raw key=value entries

        Every key must be recognised; the first unknown key raises ConfigError
        naming it.
        """
        config = cls()
        specs: Dict[int, ObjectiveSpec] = {}
        for key, value in entries.items():
            if key.startswith('objective.'):
                _, index, *rest = key.split('.')
                suffix = '.'.join(rest)
                if not index.isdigit() or suffix not in OBJECTIVE_KEYS:
                    raise ConfigError(f"unknown config key {key!r}")
                spec = specs.setdefault(int(index), ObjectiveSpec(index=int(index)))
                attribute, parser = OBJECTIVE_KEYS[suffix]
                setattr(spec, attribute, parser(key, value))
                continue
            if key not in TOP_LEVEL_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
            attribute, parser = TOP_LEVEL_KEYS[key]
            setattr(config, attribute, parser(key, value))
        config.objectives = [specs[index] for index in sorted(specs)]
        config.validate()
        return config

    @classmethod
    def from_text(cls, text: str, origin: str = "<config>") -> 'ExperimentConfig':
        return cls.from_dict(parse_key_value_text(text, origin))

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> 'ExperimentConfig':
        return cls.from_dict(parse_key_value_file(path))

    def to_dict(self) -> Dict[str, str]:
        """Flat key=value form; from_dict(to_dict()) rebuilds an equal config"""
        entries: Dict[str, str] = {}
        for key, (attribute, _) in TOP_LEVEL_KEYS.items():
            value = getattr(self, attribute)
            if value is not None:
                entries[key] = _format(value)
        for spec in self.objectives:
            for suffix, (attribute, _) in OBJECTIVE_KEYS.items():
                value = getattr(spec, attribute)
                if value is not None:
                    entries[f"objective.{spec.index}.{suffix}"] = _format(value)
        return entries

    def to_text(self) -> str:
        return ''.join(f"{key}={value}\n" for key, value in self.to_dict().items())

    def replace(self, **changes) -> 'ExperimentConfig':
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update(changes)
        return ExperimentConfig(**values)


def _format(value: Any) -> str:
    if isinstance(value, bool):
        return 'true' if value else 'false'
    return str(value)


TOP_LEVEL_KEYS: Dict[str, tuple] = {
    'experiment': ('experiment', _text),
    'scenario': ('scenario', _text),
    'schedule': ('schedule', _text),
    'seed': ('seed', _non_negative_int),
    'output_dir': ('output_dir', _text),
    'init_checkpoint': ('init_checkpoint', _text),
    'data.seed': ('data_seed', _non_negative_int),
    'data.train_size': ('train_size', _positive_int),
    'data.val_size': ('val_size', _positive_int),
    'data.dir': ('data_dir', _text),
    'model.d_model': ('d_model', _positive_int),
    'model.n_heads': ('n_heads', _positive_int),
    'model.enc_layers': ('enc_layers', _positive_int),
    'model.dec_layers': ('dec_layers', _positive_int),
    'model.ffn_dim': ('ffn_dim', _positive_int),
    'model.max_len': ('max_len', _positive_int),
    'model.dropout': ('dropout', _non_negative_float),
    'schedule.max_steps': ('max_steps', _optional_int),
    'schedule.global_max_steps': ('global_max_steps', _optional_int),
    'schedule.sampling': ('sampling', _text),
    'schedule.freeze_converged': ('freeze_converged', parse_bool),
    'training.learning_rate': ('learning_rate', _non_negative_float),
    'training.beta1': ('beta1', _non_negative_float),
    'training.beta2': ('beta2', _non_negative_float),
    'training.epsilon': ('epsilon', _non_negative_float),
    'training.gradient_accumulation_steps': ('gradient_accumulation_steps', _optional_int),
    'training.eval_interval': ('eval_interval', _positive_int),
    'training.log_interval': ('log_interval', _positive_int),
    'training.max_global_updates': ('max_global_updates', _optional_int),
    'training.warmup_steps': ('warmup_steps', _non_negative_int),
    'training.patience': ('patience', _positive_int),
    'training.min_delta': ('min_delta', _non_negative_float),
    'training.reset_optimizer_between_phases': ('reset_optimizer_between_phases', parse_bool),
    'training.max_eval_samples': ('max_eval_samples', _positive_int),
}
