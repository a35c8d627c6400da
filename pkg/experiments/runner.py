"""
Experiment runner: one config -> trained heads and a results row

An experiment generates (or reads) the synthetic ID/AD/OOD corpora, builds a
LangModule with one head per objective, trains it under the configured
schedule and finally scores the first seq2seq head on every domain's
validation split.
"""
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from backend.rng import RngStreams
from backend.tensor import Parameter
from config.experiment import ExperimentConfig, ObjectiveSpec
from config.settings import (
    DOMAIN_ORDER, ERROR_MARKER, LOG_FILE, RESULTS_COLUMNS, RESULTS_FILE, SHOW_PROGRESS,
)
from data.sources import TextPairSource
from data.synthetic import SyntheticDomain, default_domain_specs, generate_synthetic_domains, write_domains
from data.vocab import Vocab, build_vocab
from evaluation.evaluators import ConvergenceCriterion, parse_evaluators
from evaluation.metrics import corpus_bleu, exact_match, token_accuracy
from models.lang_module import LangModule
from models.transformer import Body, HeadKind, ModelConfig, build_model
from objectives.base import Objective, Pair
from objectives.classification import SequenceClassificationObjective, TokenClassificationObjective
from objectives.seq2seq import (
    BackTranslationObjective, DenoisingObjective, IdentityReverseTranslator, ModelReverseTranslator,
    NoiseConfig, OracleReverseTranslator, Seq2SeqObjective,
)
from schedules.base import Schedule
from schedules.strategies import ParallelSchedule, SequentialSchedule
from training.adapter import TrainingArguments, TrainingResult, train
from training.checkpoint import StandaloneModel, load_head_checkpoint
from utils.errors import AdaptorError, ConfigError
from utils.export_utils import export_metrics, export_results

CHECKPOINT_SUBDIR = "checkpoints"

log = logger.bind(source="experiments")


@dataclass
class ResultsRow:
    """One line of the results table"""
    experiment: str
    schedule: str
    objectives: str
    metrics: Dict[str, float] = field(default_factory=dict)
    error: Optional[str] = None

    def to_dict(self) -> Dict[str, object]:
        row: Dict[str, object] = {'experiment': self.experiment, 'schedule': self.schedule, 'objectives': self.objectives}
        for column in RESULTS_COLUMNS[3:]:
            row[column] = ERROR_MARKER if self.error is not None else self.metrics[column]
        return row

    @classmethod
    def failed(cls, config: ExperimentConfig, error: str) -> 'ResultsRow':
        return cls(config.experiment, config.schedule, config.objectives_label, error=error)


@dataclass
class ExperimentOutcome:
    row: ResultsRow
    output_dir: str
    checkpoints: Dict[str, str] = field(default_factory=dict)
    primary_objective: Optional[str] = None
    result: Optional[TrainingResult] = None

    @property
    def primary_checkpoint(self) -> Optional[str]:
        return self.checkpoints.get(self.primary_objective) if self.primary_objective else None


# Data

def prepare_domains(config: ExperimentConfig) -> Dict[str, SyntheticDomain]:
    """
    Synthetic corpora of the experiment

    With data.dir set, the corpora files written by generate-data replace the
    generated splits; the ciphers still come from data.seed.
    """
    domains = generate_synthetic_domains(config.data_seed, default_domain_specs(config.train_size, config.val_size))
    if config.data_dir:
        for domain_id, domain in domains.items():
            base = Path(config.data_dir) / domain_id
            domain.train = TextPairSource(base / "train.src", base / "train.tgt")
            domain.val = TextPairSource(base / "val.src", base / "val.tgt")
    return domains


def corpus_vocab(domains: Dict[str, SyntheticDomain]) -> Vocab:
    corpora = []
    for domain_id in DOMAIN_ORDER:
        if domain_id in domains:
            for split in ('train', 'val'):
                corpora += [domains[domain_id][split].texts, domains[domain_id][split].labels]
    return build_vocab(corpora)


# Model

def _copy_params(params: Dict[str, Parameter]) -> Dict[str, Parameter]:
    return {name: Parameter(name, np.array(p.data, copy=True), dtype=p.dtype) for name, p in params.items()}


def _model_config(config: ExperimentConfig, vocab: Vocab) -> ModelConfig:
    return ModelConfig(
        vocab_size=len(vocab), d_model=config.d_model, n_heads=config.n_heads, enc_layers=config.enc_layers,
        dec_layers=config.dec_layers, ffn_dim=config.ffn_dim, max_len=config.max_len, dropout=config.dropout,
    )


# Objectives

def _reverse_translator(spec: ObjectiveSpec, domains: Dict[str, SyntheticDomain]):
    choice = spec.reverse_translator
    if choice == 'identity':
        return IdentityReverseTranslator()
    if choice == 'oracle':
        if spec.domain is None:
            raise ConfigError(f"objective.{spec.index}.reverse_translator: the oracle needs a synthetic domain")
        return OracleReverseTranslator(domains[spec.domain])
    return ModelReverseTranslator(load_head_checkpoint(choice))


def _spec_sources(spec: ObjectiveSpec, domains: Dict[str, SyntheticDomain], target_side: bool):
    """(texts, labels, val_texts, val_labels) of an objective"""
    if spec.texts is not None:
        return spec.texts, spec.labels, spec.val_texts, spec.val_labels
    domain = domains[spec.domain]
    if target_side:
        return domain.train.labels, None, domain.val.labels, None
    return domain.train.texts, domain.train.labels, domain.val.texts, domain.val.labels


def build_objective(spec: ObjectiveSpec, config: ExperimentConfig, domains: Dict[str, SyntheticDomain],
                    vocab: Vocab) -> Objective:
    """Objective for one objective.<n> block"""
    kind = spec.kind
    common = dict(
        batch_size=spec.batch_size,
        criterion=ConvergenceCriterion(config.patience, config.min_delta),
        tokenizer=vocab,
        max_eval_samples=config.max_eval_samples,
    )
    if kind == 'seq2seq':
        texts, labels, val_texts, val_labels = _spec_sources(spec, domains, target_side=False)
        common['evaluators'] = parse_evaluators(spec.evaluators, HeadKind.SEQ2SEQ_LM)
        return Seq2SeqObjective(spec.id, texts, labels, val_texts, val_labels, **common)
    if kind == 'denoising':
        texts, _, val_texts, _ = _spec_sources(spec, domains, target_side=True)
        common['evaluators'] = parse_evaluators(spec.evaluators, HeadKind.SEQ2SEQ_LM)
        noise = NoiseConfig(permute_fraction=spec.noise_fraction, window=spec.noise_window)
        return DenoisingObjective(spec.id, texts, val_texts, noise=noise, seed=config.seed, **common)
    if kind == 'backtranslation':
        texts, _, val_texts, _ = _spec_sources(spec, domains, target_side=True)
        common['evaluators'] = parse_evaluators(spec.evaluators, HeadKind.SEQ2SEQ_LM)
        return BackTranslationObjective(
            spec.id, texts, _reverse_translator(spec, domains), val_texts,
            cache_pseudo_sources=spec.cache_pseudo_sources, **common,
        )
    if spec.texts is None or spec.labels is None:
        raise ConfigError(f"objective.{spec.index}: {kind} objectives need texts and labels")
    cls = TokenClassificationObjective if kind == 'token_classification' else SequenceClassificationObjective
    common['evaluators'] = parse_evaluators(spec.evaluators, cls.compatible_head)
    return cls(spec.id, spec.texts, spec.labels, spec.val_texts, spec.val_labels, **common)


def build_lang_module(config: ExperimentConfig, vocab: Vocab,
                      init: Optional[StandaloneModel] = None) -> LangModule:
    if init is not None:
        body = Body(init.config, _copy_params(init.body.params), RngStreams(config.seed).stream("dropout"))
        return LangModule(body, init.tokenizer or vocab, seed=config.seed)
    model_config = _model_config(config, vocab)
    return LangModule(build_model(model_config, config.seed), vocab, seed=config.seed)


def register_objectives(lang_module: LangModule, config: ExperimentConfig, objectives: Sequence[Objective],
                        init: Optional[StandaloneModel] = None) -> Optional[str]:
    """
    Register every objective; seq2seq-family objectives with share_head reuse
    one head, initialized from the checkpoint's head when fine-tuning

    Returns:
        Id of the first seq2seq objective (the one scored on every domain)
    """
    shared_owner: Optional[str] = None
    primary: Optional[str] = None
    for spec, objective in zip(config.objectives, objectives):
        if spec.is_seq2seq:
            primary = primary or objective.objective_id
            if spec.share_head and shared_owner is not None:
                objective.objective_module = lang_module.module_copy(shared_owner)
            elif init is not None and HeadKind(init.head.kind) == HeadKind.SEQ2SEQ_LM:
                objective.objective_module = _copy_params(init.head.named_parameters())
        lang_module.register_objective(objective)
        if spec.is_seq2seq and spec.share_head and shared_owner is None:
            shared_owner = objective.objective_id
    return primary


def build_schedule(config: ExperimentConfig, objectives: Sequence[Objective]) -> Schedule:
    if config.schedule == 'parallel':
        return ParallelSchedule(
            objectives, max_steps=config.max_steps, global_max_steps=config.global_max_steps, seed=config.seed,
            freeze_converged=config.freeze_converged, sampling=config.sampling,
        )
    return SequentialSchedule(objectives, max_steps=config.max_steps, global_max_steps=config.global_max_steps,
                              seed=config.seed)


# Evaluation

def score_translations(model: StandaloneModel, pairs: Sequence[Pair]) -> Dict[str, float]:
    """BLEU, exact match and token accuracy of greedy translations"""
    candidates = [text.split() for text in model.translate_batch([source for source, _ in pairs])]
    references = [label.split() for _, label in pairs]
    return {
        'bleu': corpus_bleu(candidates, references),
        'exact_match': exact_match(candidates, references),
        'token_accuracy': token_accuracy(candidates, references),
    }


def score_domains(model: StandaloneModel, domains: Dict[str, SyntheticDomain]) -> Dict[str, float]:
    """Results-table cells for every domain's validation split"""
    cells = {}
    for domain_id in DOMAIN_ORDER:
        scores = score_translations(model, domains[domain_id].val.pairs())
        suffix = domain_id.lower()
        cells[f"bleu_{suffix}"] = scores['bleu']
        cells[f"em_{suffix}"] = scores['exact_match']
        cells[f"acc_{suffix}"] = scores['token_accuracy']
    return cells


# Experiments

def run_experiment(config: ExperimentConfig, show_progress: bool = SHOW_PROGRESS) -> ExperimentOutcome:
    """
    Train and score one experiment

    Writes <output_dir>/<experiment>/{config.cfg, log.tsv, results.tsv} and one
    checkpoint directory per head under checkpoints/.

    Args:
        config: Validated experiment config; init_checkpoint must be a directory
        show_progress: Draw a progress bar

    Returns:
        ExperimentOutcome with the results row and checkpoint paths
    """
    config.validate()
    if config.init_reference is not None:
        raise ConfigError(f"init_checkpoint: {config.init_checkpoint!r} is only resolvable inside a grid")
    out = Path(config.output_dir) / config.experiment
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(config.to_text(), encoding='utf-8')
    log.info(f"experiment {config.experiment}: {config.schedule} {config.objectives_label}")

    domains = prepare_domains(config)
    init = load_head_checkpoint(config.init_checkpoint) if config.scenario == 'finetune' else None
    vocab = init.tokenizer if init is not None and init.tokenizer is not None else corpus_vocab(domains)
    lang_module = build_lang_module(config, vocab, init)
    objectives = [build_objective(spec, config, domains, vocab) for spec in config.objectives]
    primary = register_objectives(lang_module, config, objectives, init)

    schedule = build_schedule(config, objectives)
    args = TrainingArguments(
        learning_rate=config.learning_rate, beta1=config.beta1, beta2=config.beta2, epsilon=config.epsilon,
        gradient_accumulation_steps=config.gradient_accumulation_steps, eval_interval=config.eval_interval,
        log_interval=config.log_interval, checkpoint_dir=str(out / CHECKPOINT_SUBDIR), seed=config.seed,
        max_global_updates=config.max_global_updates, warmup_steps=config.warmup_steps,
        reset_optimizer_between_phases=config.reset_optimizer_between_phases,
        log_file=str(out / LOG_FILE), show_progress=show_progress,
    )
    result = train(lang_module, schedule, args)

    if primary is None:
        raise ConfigError("objective.<n>.kind: no seq2seq objective to score on the domains")
    model = StandaloneModel(lang_module.body_for(primary), lang_module.head_for(primary), vocab)
    row = ResultsRow(config.experiment, config.schedule, config.objectives_label, score_domains(model, domains))
    export_results([row], out / RESULTS_FILE)
    log.info(
        f"{config.experiment}: em ID/AD/OOD = "
        f"{row.metrics['em_id']:.3f}/{row.metrics['em_ad']:.3f}/{row.metrics['em_ood']:.3f}"
    )
    return ExperimentOutcome(row, str(out), result.checkpoints, primary, result)


def _run_safely(config: ExperimentConfig, show_progress: bool) -> Tuple[Dict[str, object], Optional[str]]:
    """Process-pool entry point: the row and the primary checkpoint, errors kept in-row"""
    try:
        outcome = run_experiment(config, show_progress)
        return outcome.row.to_dict(), outcome.primary_checkpoint
    except Exception as e:
        log.error(f"experiment {config.experiment} failed: {type(e).__name__}: {e}")
        return ResultsRow.failed(config, str(e)).to_dict(), None


@dataclass
class _TableRow:
    values: Dict[str, object]

    def to_dict(self) -> Dict[str, object]:
        return self.values


def _resolve(config: ExperimentConfig, checkpoints: Dict[str, Optional[str]]) -> ExperimentConfig:
    changes = {}
    reference = config.init_reference
    if reference is not None:
        path = checkpoints.get(reference)
        if path is None:
            raise ConfigError(f"init_checkpoint: experiment {reference!r} has no checkpoint in this grid")
        changes['init_checkpoint'] = path
    specs = []
    for spec in config.objectives:
        if spec.reverse_translator.startswith('experiment:'):
            path = checkpoints.get(spec.reverse_translator.split(':', 1)[1])
            if path is None:
                raise ConfigError(f"objective.{spec.index}.reverse_translator: {spec.reverse_translator!r} has no checkpoint")
            spec = ObjectiveSpec(**{**spec.__dict__, 'reverse_translator': path})
        specs.append(spec)
    changes['objectives'] = specs
    return config.replace(**changes)


def _references(config: ExperimentConfig) -> List[str]:
    names = [config.init_reference] + [
        spec.reverse_translator.split(':', 1)[1] for spec in config.objectives
        if spec.reverse_translator.startswith('experiment:')
    ]
    return [name for name in names if name]


def run_grid(configs: Sequence[ExperimentConfig], output_dir: Union[str, Path], jobs: int = 1,
             show_progress: bool = SHOW_PROGRESS) -> Path:
    """
    Run every config and write one results row per config, in config order

    Experiments referenced through experiment:<id> run before the experiments
    that reference them. Failed experiments get ERROR cells; the grid goes on.

    Args:
        configs: Experiment configs
        output_dir: Root directory of every experiment and of results.tsv
        jobs: Number of worker processes

    Returns:
        Path of the results table
    """
    output_dir = Path(output_dir)
    configs = [config.replace(output_dir=str(output_dir)) for config in configs]
    rows: Dict[int, Dict[str, object]] = {}
    checkpoints: Dict[str, Optional[str]] = {}
    pending = list(range(len(configs)))

    while pending:
        ready = [i for i in pending if all(ref in checkpoints for ref in _references(configs[i]))]
        if not ready:
            for i in pending:
                missing = [ref for ref in _references(configs[i]) if ref not in checkpoints]
                rows[i] = ResultsRow.failed(configs[i], f"unresolved experiment reference(s): {', '.join(missing)}").to_dict()
            break
        wave: Dict[int, ExperimentConfig] = {}
        for i in ready:
            try:
                wave[i] = _resolve(configs[i], checkpoints)
            except AdaptorError as e:
                log.error(f"experiment {configs[i].experiment}: {e}")
                rows[i] = ResultsRow.failed(configs[i], str(e)).to_dict()
                checkpoints[configs[i].experiment] = None
        if jobs > 1 and len(wave) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                futures = {i: pool.submit(_run_safely, config, False) for i, config in wave.items()}
                outcomes = {i: future.result() for i, future in futures.items()}
        else:
            outcomes = {i: _run_safely(config, show_progress) for i, config in wave.items()}
        for i, (row, checkpoint) in outcomes.items():
            rows[i] = row
            checkpoints[configs[i].experiment] = checkpoint
        pending = [i for i in pending if i not in rows]

    path = export_results([_TableRow(rows[i]) for i in range(len(configs))], output_dir / RESULTS_FILE)
    log.info(f"grid of {len(configs)} experiment(s) written to {path}")
    return path


def load_grid(directory: Union[str, Path]) -> List[ExperimentConfig]:
    """Every *.cfg of a directory, in file name order"""
    paths = sorted(Path(directory).glob("*.cfg"))
    if not paths:
        raise ConfigError(f"no *.cfg files in {directory}")
    return [ExperimentConfig.from_file(path) for path in paths]


# Standalone operations

def generate_data(config: ExperimentConfig, directory: Union[str, Path]) -> List[str]:
    """Write the experiment's synthetic corpora as <directory>/<domain>/{train,val}.{src,tgt}"""
    domains = generate_synthetic_domains(config.data_seed, default_domain_specs(config.train_size, config.val_size))
    written = write_domains(domains, directory)
    log.info(f"wrote {len(written)} corpus files to {directory}")
    return written


def _evaluation_pairs(spec: ObjectiveSpec, domains: Dict[str, SyntheticDomain]) -> List[Pair]:
    if spec.texts is None:
        return domains[spec.domain].val.pairs()
    if spec.val_texts is not None:
        return TextPairSource(spec.val_texts, spec.val_labels).pairs()
    return TextPairSource(spec.texts, spec.labels).pairs()


def score_classifications(model: StandaloneModel, pairs: Sequence[Pair]) -> Dict[str, float]:
    """Exact match and label accuracy of a classification head"""
    predicted = model.classify([text for text, _ in pairs])
    candidates = [p if isinstance(p, list) else [p] for p in predicted]
    token_level = HeadKind(model.head.kind) == HeadKind.TOKEN_CLASSIFICATION
    references = [label.split() if token_level else [label.strip()] for _, label in pairs]
    return {
        'exact_match': exact_match(candidates, references),
        'token_accuracy': token_accuracy(candidates, references),
    }


def evaluate_checkpoint(config: ExperimentConfig, checkpoint: Optional[Union[str, Path]] = None,
                        path: Optional[Union[str, Path]] = None) -> Dict[str, float]:
    """
    Score a saved head on the validation data of every objective block

    Args:
        config: Config whose objective blocks name the corpora
        checkpoint: Archive directory; defaults to config.init_checkpoint
        path: Optional metrics TSV to write

    Returns:
        Metrics keyed "<objective id>.<metric>"
    """
    checkpoint = checkpoint or config.init_checkpoint
    if not checkpoint:
        raise ConfigError("init_checkpoint: evaluate needs a checkpoint directory")
    model = load_head_checkpoint(checkpoint)
    domains = prepare_domains(config)
    seq2seq = HeadKind(model.head.kind) == HeadKind.SEQ2SEQ_LM
    metrics: Dict[str, float] = {}
    for spec in config.objectives:
        pairs = _evaluation_pairs(spec, domains)
        scores = score_translations(model, pairs) if seq2seq else score_classifications(model, pairs)
        for name, value in scores.items():
            metrics[f"{spec.id}.{name}"] = value
    if path is not None:
        export_metrics(metrics, path)
    log.info(f"evaluated {checkpoint} on {len(config.objectives)} corpora")
    return metrics
