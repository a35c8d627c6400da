"""
Sequence-to-sequence objectives: supervised, denoising and back-translation
"""
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Dict, List, Optional, Sequence, Set, Tuple, TypeVar

import numpy as np
from loguru import logger

from backend.rng import RngStreams
from config.settings import BOS_ID, DEFAULT_NOISE_WINDOW, DEFAULT_PERMUTE_FRACTION, EOS_ID
from models.transformer import HeadKind, greedy_decode_batch
from objectives.base import Objective, Pair, TokenCorpus
from objectives.batch import BatchRow
from utils.errors import ConfigError, EncodingError

if TYPE_CHECKING:
    from data.synthetic import SyntheticDomain
    from models.lang_module import LangModule
    from training.checkpoint import StandaloneModel

T = TypeVar('T')
ReverseTranslator = Callable[[str], str]

DECODE_CHUNK = 64

log = logger.bind(source="objective")


class Seq2SeqObjective(Objective):
    """Supervised translation of texts into labels"""
    compatible_head = HeadKind.SEQ2SEQ_LM

    def encode_source(self, text: str) -> List[int]:
        ids = self.tokenizer.tokenize(text)
        if not ids:
            raise EncodingError(f"{self.objective_id}: cannot encode an empty source text")
        return [BOS_ID] + ids + [EOS_ID]

    def encode(self, pair: Pair) -> BatchRow:
        text, label = pair
        target = self.tokenizer.tokenize(label)
        return BatchRow(
            source_ids=self.encode_source(text),
            labels=target + [EOS_ID],
            decoder_input_ids=[BOS_ID] + target,
            raw_source=text,
            raw_ref=label,
        )

    def predict(self, lang_module: 'LangModule', pairs: Sequence[Pair]) -> Tuple[TokenCorpus, TokenCorpus]:
        body = lang_module.body_for(self.objective_id)
        head = lang_module.head_for(self.objective_id)
        sources = [self.encode_source(text) for text, _ in pairs]
        outputs: List[List[int]] = []
        for start in range(0, len(sources), DECODE_CHUNK):
            outputs += greedy_decode_batch(body, head, sources[start:start + DECODE_CHUNK])
        candidates = [self.tokenizer.tokens(ids) for ids in outputs]
        references = [label.split() for _, label in pairs]
        return candidates, references


# Denoising

@dataclass(frozen=True)
class NoiseConfig:
    """Windowed token permutation"""
    permute_fraction: float = DEFAULT_PERMUTE_FRACTION
    window: int = DEFAULT_NOISE_WINDOW
    stream: str = 'noise'

    def __post_init__(self):
        if not 0.0 <= self.permute_fraction <= 1.0:
            raise ConfigError(f"permute_fraction must lie in [0, 1], got {self.permute_fraction}")
        if self.window < 2:
            raise ConfigError(f"noise window must be >= 2, got {self.window}")


def permute_noise(tokens: Sequence[T], cfg: NoiseConfig, rng: np.random.Generator) -> List[T]:
    """
    Shuffle tokens inside consecutive windows of a random span

    The span covers ceil(permute_fraction * len) positions; each run of
    cfg.window positions inside it is permuted independently.

    Args:
        tokens: Token sequence without BOS/EOS
        cfg: Noise configuration
        rng: Generator of the noise stream

    Returns:
        Noised copy with the same multiset of tokens
    """
    out = list(tokens)
    span = math.ceil(cfg.permute_fraction * len(out))
    if len(out) <= 1 or span <= 1:
        return out
    start = int(rng.integers(0, len(out) - span + 1))
    end = start + span
    for window_start in range(start, end, cfg.window):
        window = out[window_start:min(window_start + cfg.window, end)]
        order = rng.permutation(len(window))
        out[window_start:window_start + len(window)] = [window[i] for i in order]
    return out


class DenoisingObjective(Seq2SeqObjective):
    """
    Reconstruct texts from a permuted version of themselves

    Only texts are used; fresh noise is drawn for every epoch from the stream
    noise.<objective_id>.<split>.<epoch>.
    """

    def __init__(self, objective_id: str, texts_or_path, val_texts_or_path=None,
                 noise: Optional[NoiseConfig] = None, seed: int = 0, **kwargs):
        super().__init__(objective_id, texts_or_path, None, val_texts_or_path, None, **kwargs)
        self.noise = noise or NoiseConfig()
        self.streams = RngStreams(seed)

    def epoch_pairs(self, split: str, epoch: int) -> List[Pair]:
        rng = self.streams.fresh(f"{self.noise.stream}.{self.objective_id}.{split}.{epoch}")
        return [
            (' '.join(permute_noise(text.split(), self.noise, rng)), text)
            for text in self.dataset(split).texts
        ]


# Back-translation

class IdentityReverseTranslator:
    """Returns its input"""

    def __call__(self, text: str) -> str:
        return text


class OracleReverseTranslator:
    """Exact inverse of a synthetic domain's mapping"""

    def __init__(self, domain: 'SyntheticDomain'):
        self.domain = domain

    def __call__(self, text: str) -> str:
        return self.domain.inverse_translate(text)


class ModelReverseTranslator:
    """Frozen standalone checkpoint decoding greedily in the reverse direction"""

    def __init__(self, model: 'StandaloneModel', max_len: Optional[int] = None):
        self.model = model
        self.max_len = max_len

    def __call__(self, text: str) -> str:
        return self.translate_batch([text])[0]

    def translate_batch(self, texts: Sequence[str]) -> List[str]:
        return self.model.translate_batch(texts, max_len=self.max_len)


def translate_all(reverse_translator: ReverseTranslator, texts: Sequence[str]) -> List[str]:
    batched = getattr(reverse_translator, 'translate_batch', None)
    if batched is not None:
        return list(batched(texts))
    return [reverse_translator(text) for text in texts]


def make_backtranslation_pair(target_text: str, reverse_translator: ReverseTranslator) -> Optional[Pair]:
    """
    Pseudo-parallel pair for a target-side text

    Returns:
        (pseudo_source, target_text), or None when the reverse translator
        produces no tokens
    """
    pseudo_source = reverse_translator(target_text)
    if not pseudo_source.split():
        return None
    return pseudo_source, target_text


class BackTranslationObjective(Seq2SeqObjective):
    """
    Supervised training on pseudo-sources produced by a reverse translator

    Only target-side texts are needed. Pseudo-sources are produced per epoch
    unless cache_pseudo_sources is set; pairs whose pseudo-source is empty
    are skipped; skipped_pairs counts the distinct training texts affected.
    """

    def __init__(self, objective_id: str, texts_or_path, reverse_translator: ReverseTranslator,
                 val_texts_or_path=None, cache_pseudo_sources: bool = False, **kwargs):
        super().__init__(objective_id, texts_or_path, None, val_texts_or_path, None, **kwargs)
        self.reverse_translator = reverse_translator
        self.cache_pseudo_sources = cache_pseudo_sources
        self._cache: Dict[str, List[Pair]] = {}
        self._skipped: Set[str] = set()

    @property
    def skipped_pairs(self) -> int:
        return len(self._skipped)

    def epoch_pairs(self, split: str, epoch: int) -> List[Pair]:
        if self.cache_pseudo_sources and split in self._cache:
            return list(self._cache[split])
        targets = self.dataset(split).texts
        translated = dict(zip(targets, translate_all(self.reverse_translator, targets)))
        pairs = []
        for target in targets:
            pair = make_backtranslation_pair(target, translated.__getitem__)
            if pair is None:
                if split == 'train':
                    self._skipped.add(target)
            else:
                pairs.append(pair)
        if len(pairs) < len(targets):
            log.warning(f"{self.objective_id}: skipped {len(targets) - len(pairs)} empty back-translations on {split}")
        if self.cache_pseudo_sources:
            self._cache[split] = list(pairs)
        return pairs
