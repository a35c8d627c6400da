import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from backend.rng import RngStreams
from backend.tensor import Tensor
from config.settings import BOS_ID, EOS_ID, IGNORE_ID, PAD_ID
from data.vocab import Vocab
from evaluation.evaluators import ConvergenceCriterion, Evaluator
from objectives.base import evaluate_objective
from objectives.batch import BatchRow, collate
from objectives.classification import SequenceClassificationObjective, TokenClassificationObjective
from objectives.seq2seq import (
    BackTranslationObjective, DenoisingObjective, IdentityReverseTranslator, ModelReverseTranslator, NoiseConfig,
    OracleReverseTranslator, Seq2SeqObjective, make_backtranslation_pair, permute_noise,
)
from schedules.strategies import ParallelSchedule
from training.adapter import TrainingArguments, train
from training.checkpoint import load_head_checkpoint, save_head_checkpoint
from utils.errors import (
    AlignmentError, ConfigError, DataError, EncodingError, EvaluationError, RoutingError, VocabularyError,
)

ABC_VOCAB = Vocab(['<pad>', '<s>', '</s>', '<unk>', 'x', 'a', 'b', 'c'])


def test_seq2seq_encoding():
    objective = Seq2SeqObjective("s2s", ["a b"], ["c"], tokenizer=ABC_VOCAB)
    row = objective.encode(("a b", "c"))
    assert row.source_ids == [BOS_ID, 5, 6, EOS_ID]
    assert row.decoder_input_ids == [BOS_ID, 7]
    assert row.labels == [7, EOS_ID]


def test_seq2seq_empty_text():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=ABC_VOCAB)
    with pytest.raises(EncodingError):
        objective.encode(("", "b"))


def test_missing_tokenizer():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"])
    with pytest.raises(EncodingError, match="tokenizer"):
        objective.encode(("a", "b"))


def test_mixed_length_batch_is_padded(vocab):
    objective = Seq2SeqObjective("s2s", ["a", "a b c d"], ["b c", "d"], tokenizer=vocab)
    batch = objective.make_batch(objective.dataset('train').pairs())
    assert batch.source_ids.shape == (2, 6)
    np.testing.assert_array_equal(batch.source_mask.sum(axis=1), [3, 6])
    assert batch.source_ids[0, 3:].tolist() == [PAD_ID] * 3
    assert batch.labels[1].tolist() == [vocab.tokenize("d")[0], EOS_ID, IGNORE_ID]
    assert batch.decoder_mask.sum() == 3 + 2
    assert batch.n_targets == 3 + 2


def test_loss_of_uniform_logits():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=ABC_VOCAB)
    batch = objective.make_batch([("a", "b c")])
    loss = objective.compute_loss(Tensor(np.zeros(batch.labels.shape + (70,))), batch)
    assert loss.item() == pytest.approx(math.log(70), abs=1e-3)
    assert objective.state.steps_taken == 1


def test_loss_of_one_hot_logits():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=ABC_VOCAB)
    batch = objective.make_batch([("a", "b c")])
    logits = np.zeros(batch.labels.shape + (8,))
    np.put_along_axis(logits, batch.labels[..., None], 50.0, axis=-1)
    assert objective.compute_loss(Tensor(logits), batch).item() < 1e-3


def test_loss_rejects_foreign_batch():
    first = Seq2SeqObjective("first", ["a"], ["b"], tokenizer=ABC_VOCAB)
    second = Seq2SeqObjective("second", ["a"], ["b"], tokenizer=ABC_VOCAB)
    batch = first.make_batch([("a", "b")])
    with pytest.raises(RoutingError):
        second.compute_loss(Tensor(np.zeros(batch.labels.shape + (8,))), batch)


def test_loss_rejects_wrong_head_shape():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=ABC_VOCAB)
    batch = objective.make_batch([("a", "b c")])
    with pytest.raises(RoutingError, match="head"):
        objective.compute_loss(Tensor(np.zeros((1, 8))), batch)


def test_misaligned_files(tmp_path):
    texts, labels = tmp_path / "texts.txt", tmp_path / "labels.txt"
    texts.write_text("a\nb\n", encoding='utf-8')
    labels.write_text("a\n", encoding='utf-8')
    with pytest.raises(DataError, match="line-aligned"):
        Seq2SeqObjective("s2s", texts, labels)


def test_generative_metric_on_classifier():
    with pytest.raises(ConfigError, match="seq2seq_lm"):
        TokenClassificationObjective("tok", ["a"], ["X"], evaluators=[Evaluator('bleu')])


# Denoising

def test_single_token_is_unchanged():
    assert permute_noise(["a"], NoiseConfig(), np.random.default_rng(0)) == ["a"]


def test_zero_fraction_is_identity():
    tokens = list("abcdef")
    assert permute_noise(tokens, NoiseConfig(permute_fraction=0.0), np.random.default_rng(0)) == tokens


def test_permutation_regression():
    rng = RngStreams(0).fresh("noise.regression")
    first = permute_noise([1, 2, 3, 4, 5, 6], NoiseConfig(permute_fraction=1.0, window=3), rng)
    again = permute_noise([1, 2, 3, 4, 5, 6], NoiseConfig(permute_fraction=1.0, window=3), RngStreams(0).fresh("noise.regression"))
    assert first == again
    assert sorted(first[:3]) == [1, 2, 3] and sorted(first[3:]) == [4, 5, 6]


@given(st.lists(st.integers(0, 9), max_size=20), st.floats(0.0, 1.0), st.integers(2, 5), st.integers(0, 1000))
def test_noise_preserves_multiset(tokens, fraction, window, seed):
    noised = permute_noise(tokens, NoiseConfig(permute_fraction=fraction, window=window), np.random.default_rng(seed))
    assert sorted(noised) == sorted(tokens)


def test_invalid_noise_config():
    with pytest.raises(ConfigError):
        NoiseConfig(window=1)
    with pytest.raises(ConfigError):
        NoiseConfig(permute_fraction=1.5)


def test_denoising_pairs_change_per_epoch(vocab):
    texts = ["a b c d e f", "f e d c b a"]
    objective = DenoisingObjective("den", texts, noise=NoiseConfig(window=6), tokenizer=vocab, seed=3)
    epoch0, epoch1 = objective.epoch_pairs('train', 0), objective.epoch_pairs('train', 1)
    assert [target for _, target in epoch0] == texts
    assert epoch0 == objective.epoch_pairs('train', 0)
    assert epoch0 != epoch1


# Back-translation

def test_identity_reverse_translator():
    assert make_backtranslation_pair("a b", IdentityReverseTranslator()) == ("a b", "a b")


def test_empty_back_translation_is_skipped(vocab):
    objective = BackTranslationObjective("bt", ["a b", "c"], lambda text: "" if text == "c" else text, tokenizer=vocab)
    assert objective.epoch_pairs('train', 0) == [("a b", "a b")]
    assert objective.skipped_pairs == 1


def test_oracle_recovers_true_sources(small_domains, domain_vocab):
    domain = small_domains['AD']
    objective = BackTranslationObjective("bt", domain.train.labels, OracleReverseTranslator(domain), tokenizer=domain_vocab)
    assert objective.epoch_pairs('train', 0) == domain.train.pairs()


def test_cached_pseudo_sources(vocab):
    calls = []

    def translator(text):
        calls.append(text)
        return text

    objective = BackTranslationObjective("bt", ["a", "b"], translator, tokenizer=vocab, cache_pseudo_sources=True)
    objective.epoch_pairs('train', 0)
    objective.epoch_pairs('train', 1)
    assert calls == ["a", "b"]


def test_skip_count_is_stable_across_evaluations(lang_module, vocab):
    objective = BackTranslationObjective("bt", ["a b", "c"], lambda text: "" if text == "c" else text,
                                         ["c", "a b"], tokenizer=vocab)
    lang_module.register_objective(objective)
    objective.epoch_pairs('train', 0)
    objective.epoch_pairs('train', 1)
    evaluate_objective(objective, 'val', lang_module)
    evaluate_objective(objective, 'val', lang_module)
    assert objective.skipped_pairs == 1


@pytest.fixture
def checkpoint_translator(lang_module, vocab, tmp_path):
    reverse = Seq2SeqObjective("rev", ["a b"], ["b a"], tokenizer=vocab)
    lang_module.register_objective(reverse)
    # every decoding step picks "a"
    lang_module.head_for("rev").params['proj.bias'].data[vocab.tokenize("a")[0]] = 100.0
    save_head_checkpoint(lang_module, "rev", tmp_path / "rev")
    return ModelReverseTranslator(load_head_checkpoint(tmp_path / "rev"), max_len=3)


def test_checkpoint_as_reverse_translator(checkpoint_translator, vocab):
    targets = ["b c", "d e f", "a"]
    objective = BackTranslationObjective("bt", targets, checkpoint_translator, tokenizer=vocab)
    assert objective.epoch_pairs('train', 0) == [("a a a", target) for target in targets]
    assert objective.skipped_pairs == 0


def test_checkpoint_translator_pairs_are_deterministic(checkpoint_translator, vocab):
    objective = BackTranslationObjective("bt", ["b c", "d e f"], checkpoint_translator, tokenizer=vocab)
    assert objective.epoch_pairs('train', 0) == objective.epoch_pairs('train', 1) == objective.epoch_pairs('train', 2)


def test_training_leaves_reverse_translator_frozen(checkpoint_translator, lang_module, vocab):
    before = {name: p.data.tobytes() for name, p in checkpoint_translator.model.parameters().items()}
    objective = BackTranslationObjective("bt", ["b c", "d e f", "c a"], checkpoint_translator,
                                         tokenizer=vocab, batch_size=2)
    lang_module.register_objective(objective)
    result = train(lang_module, ParallelSchedule([objective], max_steps=3),
                   TrainingArguments(evaluate_at_end=False, show_progress=False))
    assert result.global_updates == 3
    after = {name: p.data.tobytes() for name, p in checkpoint_translator.model.parameters().items()}
    assert after == before


# Classification

def test_token_classification_encoding(vocab):
    objective = TokenClassificationObjective("tok", ["a b c"], ["O B O"], tokenizer=vocab)
    assert objective.labels == ["B", "O"]
    row = objective.encode(("a b c", "O B O"))
    assert row.labels == [1, 0, 1]
    assert row.decoder_input_ids is None


def test_token_classification_alignment(vocab):
    objective = TokenClassificationObjective("tok", ["a b"], ["O O"], tokenizer=vocab)
    with pytest.raises(AlignmentError):
        objective.encode(("a b", "O"))


def test_unknown_label(vocab):
    objective = SequenceClassificationObjective("seq", ["a b", "c"], ["pos", "neg"], tokenizer=vocab)
    with pytest.raises(VocabularyError):
        objective.encode(("a", "neutral"))


def test_sequence_classification_batch(vocab):
    objective = SequenceClassificationObjective("seq", ["a b", "c"], ["pos", "neg"], tokenizer=vocab)
    batch = objective.make_batch(objective.dataset('train').pairs())
    assert batch.labels.tolist() == [1, 0]
    assert objective.head_output_dim(len(vocab)) == 2


def test_collate_int_labels():
    batch = collate("seq", [BatchRow([4, 5], 1), BatchRow([6], 0)])
    assert batch.labels.shape == (2,)
    assert batch.source_mask.tolist() == [[True, True], [True, False]]


# Evaluation

def test_evaluation_is_pure(lang_module, vocab):
    objective = Seq2SeqObjective("s2s", ["a b", "c"], ["b a", "c"], ["a c", "b"], ["c a", "b"], tokenizer=vocab)
    lang_module.register_objective(objective)
    first = evaluate_objective(objective, 'val', lang_module)
    second = evaluate_objective(objective, 'val', lang_module)
    assert first == second
    assert set(first) == {'val_loss', 'bleu', 'exact_match', 'token_accuracy'}
    assert objective.state.val_loss_history == [first['val_loss'], first['val_loss']]


def test_evaluation_without_data(lang_module, vocab):
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=vocab)
    lang_module.register_objective(objective)
    with pytest.raises(EvaluationError):
        evaluate_objective(objective, 'val', lang_module)


def test_convergence_restarts_with_phase():
    objective = Seq2SeqObjective("s2s", ["a"], ["b"], tokenizer=ABC_VOCAB, criterion=ConvergenceCriterion(patience=2))
    for _ in range(3):
        objective.state.record_evaluation({'val_loss': 1.0}, objective.criterion)
    assert objective.state.converged
    objective.state.begin_phase()
    assert not objective.state.converged
    objective.state.record_evaluation({'val_loss': 1.0}, objective.criterion)
    assert not objective.state.converged
