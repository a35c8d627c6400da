"""
Tiny encoder-decoder transformer with interchangeable heads

The body (embeddings, encoder, decoder) is a flat dict of named Parameters;
heads are small projection modules registered per objective. forward() is a
pure function of (body, head, batch).
"""
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from backend.rng import RngStreams
from backend.tensor import Parameter, Tensor, apply_primitive, get_default_dtype, no_grad
from config.settings import (
    ATTENTION_MASK_VALUE, BOS_ID, DEFAULT_D_MODEL, DEFAULT_DEC_LAYERS, DEFAULT_DROPOUT,
    DEFAULT_ENC_LAYERS, DEFAULT_FFN_DIM, DEFAULT_MAX_LEN, DEFAULT_N_HEADS, EMBEDDING_INIT_STD,
    EOS_ID, LAYER_NORM_EPS, PAD_ID,
)
from utils.errors import CompatibilityError, ConfigError, LengthError

if TYPE_CHECKING:
    from objectives.batch import Batch


class HeadKind(str, Enum):
    SEQ2SEQ_LM = 'seq2seq_lm'
    TOKEN_CLASSIFICATION = 'token_classification'
    SEQUENCE_CLASSIFICATION = 'sequence_classification'


@dataclass
class ModelConfig:
    """Model dimensions"""
    vocab_size: int
    d_model: int = DEFAULT_D_MODEL
    n_heads: int = DEFAULT_N_HEADS
    enc_layers: int = DEFAULT_ENC_LAYERS
    dec_layers: int = DEFAULT_DEC_LAYERS
    ffn_dim: int = DEFAULT_FFN_DIM
    max_len: int = DEFAULT_MAX_LEN
    dropout: float = DEFAULT_DROPOUT

    def validate(self) -> None:
        """Raise ConfigError on inconsistent dimensions"""
        if self.vocab_size < 5:
            raise ConfigError(f"vocab_size must cover the 4 special tokens plus at least one token, got {self.vocab_size}")
        for name in ('d_model', 'n_heads', 'enc_layers', 'dec_layers', 'ffn_dim', 'max_len'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, float]) -> 'ModelConfig':
        return cls(**{key: data[key] for key in cls.__dataclass_fields__ if key in data})


@dataclass
class Body:
    """Shared parameters of the encoder-decoder, addressed by canonical name"""
    config: ModelConfig
    params: Dict[str, Parameter]
    dropout_rng: Optional[np.random.Generator] = None
    training: bool = False

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def with_params(self, params: Dict[str, Parameter]) -> 'Body':
        """View of this body with some parameters substituted"""
        return Body(self.config, params, self.dropout_rng, self.training)


@dataclass
class Head:
    """Objective-specific output projection"""
    kind: HeadKind
    objective_id: str
    params: Dict[str, Parameter]
    output_dim: int
    labels: Optional[List[str]] = field(default=None)

    @property
    def prefix(self) -> str:
        return f"head.{self.objective_id}"

    def named_parameters(self) -> Dict[str, Parameter]:
        """Parameters under their archive names head.<objective_id>.<local>"""
        return {f"{self.prefix}.{local}": param for local, param in self.params.items()}


# Parameter construction

def _uniform_matrix(rng: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    bound = 1.0 / math.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


def body_parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Canonical name -> shape of every body parameter"""
    d, f = config.d_model, config.ffn_dim
    shapes: Dict[str, Tuple[int, ...]] = {'body.embed.tokens': (config.vocab_size, d)}

    def attention(prefix: str) -> None:
        for proj in ('q', 'k', 'v', 'o'):
            shapes[f"{prefix}.w{proj}"] = (d, d)
            shapes[f"{prefix}.b{proj}"] = (d,)

    def norm(prefix: str) -> None:
        shapes[f"{prefix}.gamma"] = (d,)
        shapes[f"{prefix}.beta"] = (d,)

    def ffn(prefix: str) -> None:
        shapes.update({f"{prefix}.w1": (d, f), f"{prefix}.b1": (f,), f"{prefix}.w2": (f, d), f"{prefix}.b2": (d,)})

    for i in range(config.enc_layers):
        layer = f"body.encoder.layer{i}"
        attention(f"{layer}.attn")
        norm(f"{layer}.ln1")
        ffn(f"{layer}.ffn")
        norm(f"{layer}.ln2")
    norm("body.encoder.ln_f")
    for i in range(config.dec_layers):
        layer = f"body.decoder.layer{i}"
        attention(f"{layer}.self_attn")
        norm(f"{layer}.ln1")
        attention(f"{layer}.cross_attn")
        norm(f"{layer}.ln2")
        ffn(f"{layer}.ffn")
        norm(f"{layer}.ln3")
    norm("body.decoder.ln_f")
    return shapes


def head_parameter_shapes(config: ModelConfig, output_dim: int) -> Dict[str, Tuple[int, ...]]:
    """Local name -> shape of a head projecting d_model to output_dim"""
    return {'proj.weight': (config.d_model, output_dim), 'proj.bias': (output_dim,)}


def _init_value(name: str, shape: Tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    leaf = name.rsplit('.', 1)[-1]
    if name.endswith('embed.tokens'):
        return rng.normal(0.0, EMBEDDING_INIT_STD, size=shape)
    if leaf == 'gamma':
        return np.ones(shape)
    if len(shape) == 1:
        return np.zeros(shape)
    return _uniform_matrix(rng, shape)


def build_model(config: ModelConfig, seed: int) -> Body:
    """
    Build a deterministic body for a seed

    Args:
        config: Model dimensions
        seed: Seed of the per-parameter initialization streams

    Returns:
        Body with parameters named body.embed.*, body.encoder.*, body.decoder.*
    """
    config.validate()
    streams = RngStreams(seed)
    dtype = get_default_dtype()
    params = {
        name: Parameter(name, _init_value(name, shape, streams.fresh(f"init.{name}")).astype(dtype))
        for name, shape in body_parameter_shapes(config).items()
    }
    return Body(config, params, dropout_rng=streams.stream("dropout"))


def init_head(kind: HeadKind, objective_id: str, config: ModelConfig, output_dim: int,
              streams: RngStreams, labels: Optional[List[str]] = None) -> Head:
    """Randomly initialized head for an objective"""
    kind = HeadKind(kind)
    if output_dim < 1:
        raise CompatibilityError(f"head for {objective_id!r} needs at least one output, got {output_dim}")
    dtype = get_default_dtype()
    params = {}
    for local, shape in head_parameter_shapes(config, output_dim).items():
        name = f"head.{objective_id}.{local}"
        params[local] = Parameter(name, _init_value(name, shape, streams.fresh(f"init.{name}")).astype(dtype))
    return Head(kind, objective_id, params, output_dim, labels)


def count_parameters(params) -> int:
    """Total element count over distinct parameter objects"""
    seen = {}
    for param in (params.values() if isinstance(params, dict) else params):
        seen[id(param)] = param.size
    return sum(seen.values())


# Forward pass

def sinusoidal_positions(length: int, d_model: int) -> np.ndarray:
    positions = np.arange(length)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, d_model, 2) / d_model))
    table = np.zeros((length, d_model))
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: d_model // 2])
    return table


def _linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return apply_primitive('add', [apply_primitive('matmul', [x, weight]), bias])


def _layer_norm(body: Body, prefix: str, x: Tensor) -> Tensor:
    return apply_primitive('layer_norm', [x, body[f"{prefix}.gamma"], body[f"{prefix}.beta"]], {'eps': LAYER_NORM_EPS})


def _dropout(body: Body, x: Tensor) -> Tensor:
    rate = body.config.dropout
    if not body.training or rate == 0.0 or body.dropout_rng is None:
        return x
    keep = (body.dropout_rng.random(x.shape) >= rate) / (1.0 - rate)
    return apply_primitive('mul', [x, Tensor(keep)])


def key_padding_bias(mask: np.ndarray) -> np.ndarray:
    """
    Additive attention bias of shape [batch, 1, 1, keys]

    Rows with no real key attend to position 0 as a sentinel so that their
    outputs stay finite.
    """
    mask = np.asarray(mask, dtype=bool).copy()
    empty = ~mask.any(axis=1)
    mask[empty, 0] = True
    return np.where(mask, 0.0, ATTENTION_MASK_VALUE)[:, None, None, :]


def causal_bias(length: int) -> np.ndarray:
    return np.triu(np.full((length, length), ATTENTION_MASK_VALUE), k=1)[None, None, :, :]


def multi_head_attention(body: Body, prefix: str, x_q: Tensor, x_kv: Tensor, bias: np.ndarray,
                         return_weights: bool = False):
    """
    Scaled dot-product attention over n_heads heads

    Args:
        body: Parameters
        prefix: Parameter prefix, e.g. body.encoder.layer0.attn
        x_q: Queries [batch, q_len, d_model]
        x_kv: Keys/values [batch, k_len, d_model]
        bias: Additive bias broadcastable to [batch, heads, q_len, k_len]
        return_weights: Also return the attention probabilities

    Returns:
        Output [batch, q_len, d_model] (and the probability tensor)
    """
    config = body.config
    batch, q_len, d_model = x_q.shape
    k_len = x_kv.shape[1]
    h, dh = config.n_heads, config.head_dim

    def split(x: Tensor, length: int, axes: Tuple[int, ...]) -> Tensor:
        return x.reshape(batch, length, h, dh).transpose(axes)

    q = split(_linear(x_q, body[f"{prefix}.wq"], body[f"{prefix}.bq"]), q_len, (0, 2, 1, 3))
    k = split(_linear(x_kv, body[f"{prefix}.wk"], body[f"{prefix}.bk"]), k_len, (0, 2, 3, 1))
    v = split(_linear(x_kv, body[f"{prefix}.wv"], body[f"{prefix}.bv"]), k_len, (0, 2, 1, 3))
    scores = apply_primitive('scale', [apply_primitive('matmul', [q, k])], {'factor': 1.0 / math.sqrt(dh)})
    scores = apply_primitive('add', [scores, Tensor(bias)])
    weights = apply_primitive('softmax', [scores], {'axis': -1})
    context = apply_primitive('matmul', [weights, v])
    context = apply_primitive('transpose', [context], {'axes': (0, 2, 1, 3)}).reshape(batch, q_len, d_model)
    out = _linear(context, body[f"{prefix}.wo"], body[f"{prefix}.bo"])
    return (out, weights) if return_weights else out


def _feed_forward(body: Body, prefix: str, x: Tensor) -> Tensor:
    hidden = apply_primitive('gelu', [_linear(x, body[f"{prefix}.w1"], body[f"{prefix}.b1"])])
    return _linear(_dropout(body, hidden), body[f"{prefix}.w2"], body[f"{prefix}.b2"])


def _embed(body: Body, ids: np.ndarray) -> Tensor:
    d_model = body.config.d_model
    x = apply_primitive('embedding_lookup', [body['body.embed.tokens']], {'ids': ids})
    x = apply_primitive('scale', [x], {'factor': math.sqrt(d_model)})
    x = apply_primitive('add', [x, Tensor(sinusoidal_positions(ids.shape[1], d_model))])
    return _dropout(body, x)


def _check_length(body: Body, ids: np.ndarray, what: str) -> None:
    if ids.ndim != 2:
        raise LengthError(f"{what} ids must be a [batch, length] matrix, got shape {ids.shape}")
    if ids.shape[1] > body.config.max_len:
        raise LengthError(f"{what} length {ids.shape[1]} exceeds max_len {body.config.max_len}")


def encode(body: Body, source_ids: np.ndarray, source_mask: np.ndarray) -> Tensor:
    """Encoder states [batch, src_len, d_model]"""
    source_ids = np.asarray(source_ids, dtype=np.int64)
    _check_length(body, source_ids, "source")
    bias = key_padding_bias(source_mask)
    x = _embed(body, source_ids)
    for i in range(body.config.enc_layers):
        layer = f"body.encoder.layer{i}"
        normed = _layer_norm(body, f"{layer}.ln1", x)
        x = x + _dropout(body, multi_head_attention(body, f"{layer}.attn", normed, normed, bias))
        x = x + _dropout(body, _feed_forward(body, f"{layer}.ffn", _layer_norm(body, f"{layer}.ln2", x)))
    return _layer_norm(body, "body.encoder.ln_f", x)


def decode(body: Body, memory: Tensor, source_mask: np.ndarray, decoder_input_ids: np.ndarray) -> Tensor:
    """Decoder states [batch, tgt_len, d_model] under a causal mask"""
    decoder_input_ids = np.asarray(decoder_input_ids, dtype=np.int64)
    _check_length(body, decoder_input_ids, "decoder input")
    self_bias = causal_bias(decoder_input_ids.shape[1])
    cross_bias = key_padding_bias(source_mask)
    y = _embed(body, decoder_input_ids)
    for i in range(body.config.dec_layers):
        layer = f"body.decoder.layer{i}"
        normed = _layer_norm(body, f"{layer}.ln1", y)
        y = y + _dropout(body, multi_head_attention(body, f"{layer}.self_attn", normed, normed, self_bias))
        y = y + _dropout(body, multi_head_attention(body, f"{layer}.cross_attn", _layer_norm(body, f"{layer}.ln2", y), memory, cross_bias))
        y = y + _dropout(body, _feed_forward(body, f"{layer}.ffn", _layer_norm(body, f"{layer}.ln3", y)))
    return _layer_norm(body, "body.decoder.ln_f", y)


def _project(head: Head, states: Tensor) -> Tensor:
    return _linear(states, head.params['proj.weight'], head.params['proj.bias'])


def _masked_mean(states: Tensor, mask: np.ndarray) -> Tensor:
    mask = np.asarray(mask, dtype=bool).copy()
    mask[~mask.any(axis=1), 0] = True
    weights = mask / mask.sum(axis=1, keepdims=True)
    pooled = apply_primitive('matmul', [Tensor(weights[:, None, :]), states])
    return pooled.reshape(states.shape[0], states.shape[2])


def forward(body: Body, head: Head, batch: 'Batch') -> Tensor:
    """
    Logits of a head for a batch

    Args:
        body: Shared parameters
        head: Head registered for the batch's objective
        batch: Encoded batch

    Returns:
        seq2seq_lm: [batch, tgt_len, vocab]; token_classification: [batch, src_len, n_labels];
        sequence_classification: [batch, n_labels]
    """
    kind = HeadKind(head.kind)
    has_decoder_inputs = batch.decoder_input_ids is not None
    if has_decoder_inputs != (kind == HeadKind.SEQ2SEQ_LM):
        raise CompatibilityError(
            f"head {head.objective_id!r} of kind {kind.value} "
            f"{'requires' if kind == HeadKind.SEQ2SEQ_LM else 'does not take'} decoder inputs"
        )
    memory = encode(body, batch.source_ids, batch.source_mask)
    if kind == HeadKind.SEQ2SEQ_LM:
        return _project(head, decode(body, memory, batch.source_mask, batch.decoder_input_ids))
    if kind == HeadKind.TOKEN_CLASSIFICATION:
        return _project(head, memory)
    return _project(head, _masked_mean(memory, batch.source_mask))


def _pad(rows: Sequence[Sequence[int]]) -> Tuple[np.ndarray, np.ndarray]:
    width = max(1, max(len(row) for row in rows))
    ids = np.full((len(rows), width), PAD_ID, dtype=np.int64)
    mask = np.zeros((len(rows), width), dtype=bool)
    for i, row in enumerate(rows):
        ids[i, :len(row)] = row
        mask[i, :len(row)] = True
    return ids, mask


def greedy_decode_batch(body: Body, head: Head, sources: Sequence[Sequence[int]],
                        max_len: Optional[int] = None) -> List[List[int]]:
    """
    Greedy autoregressive decoding of several sources at once

    Each output starts after BOS, appends the argmax token (lowest id on ties)
    and stops at EOS or max_len tokens. BOS/EOS are not included.
    """
    if HeadKind(head.kind) != HeadKind.SEQ2SEQ_LM:
        raise CompatibilityError(f"greedy decoding needs a seq2seq_lm head, got {head.kind}")
    if not sources:
        return []
    max_len = min(max_len or body.config.max_len, body.config.max_len)
    source_ids, source_mask = _pad(sources)
    outputs: List[List[int]] = [[] for _ in sources]
    finished = np.zeros(len(sources), dtype=bool)
    with no_grad():
        memory = encode(body, source_ids, source_mask)
        decoder_ids = np.full((len(sources), 1), BOS_ID, dtype=np.int64)
        for _ in range(max_len):
            states = decode(body, memory, source_mask, decoder_ids)
            logits = _project(head, states).data[:, -1, :]
            next_ids = np.argmax(logits, axis=-1)
            for i, token in enumerate(next_ids):
                if finished[i]:
                    continue
                if token == EOS_ID:
                    finished[i] = True
                else:
                    outputs[i].append(int(token))
            if finished.all() or decoder_ids.shape[1] >= max_len:
                break
            decoder_ids = np.concatenate([decoder_ids, next_ids[:, None]], axis=1)
    return outputs


def greedy_decode(body: Body, head: Head, source_ids: Sequence[int], max_len: Optional[int] = None) -> List[int]:
    """Greedy decoding of a single source"""
    return greedy_decode_batch(body, head, [list(source_ids)], max_len)[0]
