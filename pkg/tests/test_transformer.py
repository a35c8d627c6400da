import numpy as np
import pytest

from backend.losses import cross_entropy
from backend.rng import RngStreams
from backend.tensor import Tensor, default_dtype, gradient_check
from config.settings import BOS_ID, EOS_ID, PAD_ID
from models.transformer import (
    Body, HeadKind, ModelConfig, body_parameter_shapes, build_model, count_parameters, encode, forward,
    greedy_decode, greedy_decode_batch, init_head, key_padding_bias, multi_head_attention,
)
from objectives.batch import BatchRow, collate
from utils.errors import CompatibilityError, ConfigError, LengthError


def seq2seq_batch(rows=None):
    rows = rows or [
        BatchRow([BOS_ID, 4, 5, EOS_ID], [6, EOS_ID], [BOS_ID, 6]),
        BatchRow([BOS_ID, 7, EOS_ID], [8, 9, 4, EOS_ID], [BOS_ID, 8, 9, 4]),
    ]
    return collate("s2s", rows)


def test_same_seed_gives_bit_identical_parameters(tiny_config):
    first, second = build_model(tiny_config, seed=3), build_model(tiny_config, seed=3)
    assert list(first.params) == list(second.params)
    for name in first.params:
        assert first[name].data.tobytes() == second[name].data.tobytes()


def test_different_seeds_differ(tiny_config):
    first, second = build_model(tiny_config, seed=3), build_model(tiny_config, seed=4)
    assert not np.array_equal(first['body.embed.tokens'].data, second['body.embed.tokens'].data)


def test_default_embedding_shape():
    body = build_model(ModelConfig(vocab_size=70), seed=1)
    assert body['body.embed.tokens'].shape == (70, 64)


def test_default_parameter_count():
    body = build_model(ModelConfig(vocab_size=70), seed=1)
    v, d, f = 70, 64, 128
    attention = 4 * (d * d + d)
    norm = 2 * d
    ffn = 2 * d * f + f + d
    encoder_layer = attention + ffn + 2 * norm
    decoder_layer = 2 * attention + ffn + 3 * norm
    expected = v * d + 2 * encoder_layer + norm + 2 * decoder_layer + norm
    assert expected == 172160
    assert count_parameters(body.params) == expected


def test_permuting_examples_permutes_logits(tiny_body, tiny_config):
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", tiny_config, tiny_config.vocab_size, RngStreams(0))
    rows = [
        BatchRow([BOS_ID, 4, 5, EOS_ID], [6, EOS_ID], [BOS_ID, 6]),
        BatchRow([BOS_ID, 7, EOS_ID], [8, 9, 4, EOS_ID], [BOS_ID, 8, 9, 4]),
        BatchRow([BOS_ID, 9, 9, 8, 6, EOS_ID], [5, EOS_ID], [BOS_ID, 5]),
    ]
    order = [2, 0, 1]
    logits = forward(tiny_body, head, collate("s2s", rows)).data
    permuted = forward(tiny_body, head, collate("s2s", [rows[i] for i in order])).data
    np.testing.assert_allclose(permuted, logits[order], atol=1e-6)


def test_encoder_states_are_independent_per_example(tiny_body):
    sources = np.array([[BOS_ID, 4, 5, EOS_ID], [BOS_ID, 6, 7, EOS_ID]])
    mask = np.ones_like(sources, dtype=bool)
    together = encode(tiny_body, sources, mask).data
    alone = encode(tiny_body, sources[1:], mask[1:]).data
    np.testing.assert_allclose(together[1:], alone, atol=1e-6)


def test_parameter_names_are_hierarchical(tiny_config):
    names = list(body_parameter_shapes(tiny_config))
    assert 'body.encoder.layer0.attn.wq' in names
    assert 'body.decoder.layer0.cross_attn.wk' in names
    assert all(name.startswith('body.') for name in names)


def test_invalid_dimensions(vocab):
    with pytest.raises(ConfigError, match="divisible"):
        ModelConfig(vocab_size=len(vocab), d_model=10, n_heads=3).validate()


def test_seq2seq_logits_shape(tiny_body, tiny_config):
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", tiny_config, tiny_config.vocab_size, RngStreams(0))
    rows = [BatchRow([BOS_ID, 4, EOS_ID], [5] * 6 + [EOS_ID], [BOS_ID] + [5] * 6) for _ in range(3)]
    logits = forward(tiny_body, head, collate("s2s", rows))
    assert logits.shape == (3, 7, tiny_config.vocab_size)


def test_classification_logits_shapes(tiny_body, tiny_config):
    streams = RngStreams(0)
    rows = [BatchRow([4, 5, 6], [0, 1, 2]), BatchRow([7], [1])]
    token_head = init_head(HeadKind.TOKEN_CLASSIFICATION, "tok", tiny_config, 3, streams)
    assert forward(tiny_body, token_head, collate("tok", rows)).shape == (2, 3, 3)

    sequence_head = init_head(HeadKind.SEQUENCE_CLASSIFICATION, "seq", tiny_config, 4, streams)
    batch = collate("seq", [BatchRow([4, 5, 6], 0), BatchRow([7], 3)])
    assert forward(tiny_body, sequence_head, batch).shape == (2, 4)


def test_all_padding_source_row_stays_finite(tiny_body, tiny_config):
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", tiny_config, tiny_config.vocab_size, RngStreams(0))
    batch = seq2seq_batch()
    batch.source_ids[1] = PAD_ID
    batch.source_mask[1] = False
    assert np.isfinite(forward(tiny_body, head, batch).data).all()


def test_key_padding_bias_unmasks_sentinel():
    bias = key_padding_bias(np.array([[True, False], [False, False]]))
    assert bias.shape == (2, 1, 1, 2)
    assert bias[1, 0, 0, 0] == 0.0 and bias[1, 0, 0, 1] < -1e8


def test_attention_weights_are_distributions(tiny_body):
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 16)))
    _, weights = multi_head_attention(tiny_body, "body.encoder.layer0.attn", x, x, np.zeros((1, 1, 1, 5)),
                                      return_weights=True)
    assert weights.shape == (2, 2, 5, 5)
    np.testing.assert_allclose(weights.data.sum(axis=-1), 1.0, atol=1e-5)


def test_head_kind_must_match_batch(tiny_body, tiny_config):
    head = init_head(HeadKind.TOKEN_CLASSIFICATION, "tok", tiny_config, 3, RngStreams(0))
    with pytest.raises(CompatibilityError, match="decoder inputs"):
        forward(tiny_body, head, seq2seq_batch())


def test_source_longer_than_max_len(tiny_body, tiny_config):
    ids = np.full((1, tiny_config.max_len + 1), 4)
    with pytest.raises(LengthError, match="max_len"):
        encode(tiny_body, ids, np.ones_like(ids, dtype=bool))


def test_zero_output_head(tiny_config):
    with pytest.raises(CompatibilityError):
        init_head(HeadKind.SEQUENCE_CLASSIFICATION, "seq", tiny_config, 0, RngStreams(0))


def test_greedy_decode_stops_at_eos(tiny_body, tiny_config):
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", tiny_config, tiny_config.vocab_size, RngStreams(0))
    head.params['proj.weight'].data[:] = 0.0
    head.params['proj.bias'].data[:] = 0.0
    head.params['proj.bias'].data[EOS_ID] = 10.0
    assert greedy_decode(tiny_body, head, [BOS_ID, 4, 5, EOS_ID]) == []


def test_greedy_decode_respects_max_len(tiny_body, tiny_config):
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", tiny_config, tiny_config.vocab_size, RngStreams(0))
    head.params['proj.weight'].data[:] = 0.0
    head.params['proj.bias'].data[:] = 0.0
    head.params['proj.bias'].data[6] = 10.0
    outputs = greedy_decode_batch(tiny_body, head, [[BOS_ID, 4, EOS_ID], [BOS_ID, 5, 6, 7, EOS_ID]], max_len=5)
    assert outputs == [[6] * 5, [6] * 5]


def test_greedy_decode_needs_seq2seq_head(tiny_body, tiny_config):
    head = init_head(HeadKind.TOKEN_CLASSIFICATION, "tok", tiny_config, 3, RngStreams(0))
    with pytest.raises(CompatibilityError):
        greedy_decode(tiny_body, head, [BOS_ID, 4, EOS_ID])


def test_count_parameters_counts_shared_objects_once(tiny_body):
    params = dict(tiny_body.params)
    total = count_parameters(params)
    params['alias'] = params['body.embed.tokens']
    assert count_parameters(params) == total


def test_full_model_gradient(vocab):
    config = ModelConfig(vocab_size=len(vocab), d_model=8, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=16, max_len=8)
    with default_dtype(np.float64):
        body = build_model(config, seed=5)
        head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", config, config.vocab_size, RngStreams(5))
        batch = seq2seq_batch()

        def loss():
            return cross_entropy(forward(body, head, batch), batch.labels)

        probed = [body['body.embed.tokens'], body['body.encoder.layer0.attn.wq'],
                  body['body.decoder.layer0.cross_attn.wv'], body['body.decoder.layer0.ffn.w1'],
                  body['body.encoder.layer0.ln1.gamma'], head.params['proj.weight']]
        error = gradient_check(loss, probed, samples=60, rng=np.random.default_rng(0))
    assert error < 1e-4


def test_dropout_only_in_training(tiny_config):
    config = ModelConfig(**{**tiny_config.to_dict(), 'dropout': 0.5})
    body = build_model(config, seed=0)
    head = init_head(HeadKind.SEQ2SEQ_LM, "s2s", config, config.vocab_size, RngStreams(0))
    batch = seq2seq_batch()
    eval_a = forward(body, head, batch).data
    eval_b = forward(body, head, batch).data
    np.testing.assert_array_equal(eval_a, eval_b)
    training = Body(config, body.params, body.dropout_rng, training=True)
    assert not np.array_equal(forward(training, head, batch).data, eval_a)
