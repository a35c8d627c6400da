"""
Synthetic multi-domain translation corpora

Each domain is a toy "language pair": a source line is a random token
sequence over the domain's token range, and its target is a bijective token
substitution (cipher) optionally followed by reversing the token order.
Domains overlap in vocabulary but their ciphers disagree on every shared
token, so a model adapted to one domain measurably forgets the other.
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set

import numpy as np
from loguru import logger

from backend.rng import RngStreams
from config.settings import (
    DEFAULT_TRAIN_SIZE, DEFAULT_VAL_SIZE, DOMAIN_ORDER, MAX_SENTENCE_LENGTH,
    MIN_SENTENCE_LENGTH, SYNTHETIC_DOMAINS,
)
from data.sources import TextPairSource
from utils.errors import SpecError

TRANSFORMS = ('reverse_order', 'identity')

log = logger.bind(source="synthetic")


def token_name(index: int) -> str:
    return f"t{index:02d}"


@dataclass
class SyntheticDomainSpec:
    """Recipe for one synthetic domain"""
    domain_id: str
    first_token: int
    last_token: int
    transform: str = 'identity'
    cipher: Optional[Dict[str, str]] = None
    min_length: int = MIN_SENTENCE_LENGTH
    max_length: int = MAX_SENTENCE_LENGTH
    train_size: int = DEFAULT_TRAIN_SIZE
    val_size: int = DEFAULT_VAL_SIZE

    @property
    def vocab_subset(self) -> List[str]:
        return [token_name(i) for i in range(self.first_token, self.last_token + 1)]

    def validate(self) -> None:
        if self.transform not in TRANSFORMS:
            raise SpecError(f"{self.domain_id}: unknown transform {self.transform!r}")
        if self.first_token > self.last_token:
            raise SpecError(f"{self.domain_id}: empty token range")
        if not 1 <= self.min_length <= self.max_length:
            raise SpecError(f"{self.domain_id}: invalid length range [{self.min_length}, {self.max_length}]")
        if self.cipher is not None:
            subset = set(self.vocab_subset)
            if set(self.cipher) != subset or set(self.cipher.values()) != subset:
                raise SpecError(f"{self.domain_id}: cipher is not a bijection on its token range")


def default_domain_specs(train_size: int = DEFAULT_TRAIN_SIZE, val_size: int = DEFAULT_VAL_SIZE) -> List[SyntheticDomainSpec]:
    """ID / AD / OOD recipes from settings"""
    return [
        SyntheticDomainSpec(
            domain_id=domain_id,
            first_token=SYNTHETIC_DOMAINS[domain_id]['first_token'],
            last_token=SYNTHETIC_DOMAINS[domain_id]['last_token'],
            transform=SYNTHETIC_DOMAINS[domain_id]['transform'],
            train_size=train_size,
            val_size=val_size,
        )
        for domain_id in DOMAIN_ORDER
    ]


@dataclass
class SyntheticDomain:
    """Generated corpora plus the exact forward and inverse mappings"""
    spec: SyntheticDomainSpec
    cipher: Dict[str, str]
    train: TextPairSource
    val: TextPairSource
    inverse_cipher: Dict[str, str] = field(init=False)

    def __post_init__(self):
        self.inverse_cipher = {target: source for source, target in self.cipher.items()}

    def __getitem__(self, split: str) -> TextPairSource:
        return {'train': self.train, 'val': self.val}[split]

    def translate(self, source: str) -> str:
        return encipher(source, self.cipher, self.spec.transform)

    def inverse_translate(self, target: str) -> str:
        """Exact reverse translator: undo the transform, then the cipher"""
        tokens = _apply_transform(target.split(), self.spec.transform)
        return ' '.join(self.inverse_cipher.get(token, token) for token in tokens)


def _apply_transform(tokens: List[str], transform: str) -> List[str]:
    # both transforms are involutions
    return list(reversed(tokens)) if transform == 'reverse_order' else list(tokens)


def encipher(source: str, cipher: Dict[str, str], transform: str) -> str:
    """Apply the cipher to every token, then the transform"""
    tokens = [cipher.get(token, token) for token in source.split()]
    return ' '.join(_apply_transform(tokens, transform))


def _draw_cipher(
    subset: Sequence[str],
    forbidden: Dict[str, Set[str]],
    rng: np.random.Generator,
    domain_id: str,
) -> Dict[str, str]:
    """Random bijection on subset avoiding forbidden images, repaired by swaps"""
    images = [subset[i] for i in rng.permutation(len(subset))]
    mapping = dict(zip(subset, images))
    for _ in range(100):
        bad = [token for token in subset if mapping[token] in forbidden.get(token, ())]
        if not bad:
            return mapping
        for token in bad:
            if mapping[token] not in forbidden.get(token, ()):
                continue
            for index in rng.permutation(len(subset)):
                other = subset[index]
                if other == token:
                    continue
                if (mapping[other] not in forbidden.get(token, ())
                        and mapping[token] not in forbidden.get(other, ())):
                    mapping[token], mapping[other] = mapping[other], mapping[token]
                    break
    raise SpecError(f"{domain_id}: cannot draw a cipher that diverges from earlier domains")


def generate_synthetic_domains(
    master_seed: int,
    specs: Optional[Sequence[SyntheticDomainSpec]] = None,
) -> Dict[str, SyntheticDomain]:
    """
    Generate train/val corpora for every domain

    Ciphers of later domains are forced to disagree with the ciphers of earlier
    domains on every token they share. Validation sources are deduplicated
    against training sources and against each other.

    Args:
        master_seed: Seed of every random stream used
        specs: Domain recipes; defaults to ID, AD and OOD from settings

    Returns:
        Mapping of domain_id to SyntheticDomain
    """
    specs = list(specs) if specs is not None else default_domain_specs()
    streams = RngStreams(master_seed)
    domains: Dict[str, SyntheticDomain] = {}
    for spec in specs:
        spec.validate()
        subset = spec.vocab_subset
        if spec.cipher is not None:
            cipher = dict(spec.cipher)
        else:
            forbidden: Dict[str, Set[str]] = {}
            for earlier in domains.values():
                for token, image in earlier.cipher.items():
                    forbidden.setdefault(token, set()).add(image)
            cipher = _draw_cipher(subset, forbidden, streams.fresh(f"cipher.{spec.domain_id}"), spec.domain_id)

        corpus_rng = streams.fresh(f"corpus.{spec.domain_id}")

        def sample_line() -> str:
            length = int(corpus_rng.integers(spec.min_length, spec.max_length + 1))
            return ' '.join(subset[i] for i in corpus_rng.integers(0, len(subset), size=length))

        train_sources = [sample_line() for _ in range(spec.train_size)]
        seen = set(train_sources)
        val_sources: List[str] = []
        attempts = 0
        while len(val_sources) < spec.val_size:
            attempts += 1
            if attempts > 100 * max(spec.val_size, 1):
                raise SpecError(f"{spec.domain_id}: cannot draw {spec.val_size} validation lines disjoint from train")
            line = sample_line()
            if line not in seen:
                seen.add(line)
                val_sources.append(line)

        domains[spec.domain_id] = SyntheticDomain(
            spec=spec,
            cipher=cipher,
            train=TextPairSource(train_sources, [encipher(s, cipher, spec.transform) for s in train_sources]),
            val=TextPairSource(val_sources, [encipher(s, cipher, spec.transform) for s in val_sources]),
        )
        log.debug(f"generated domain {spec.domain_id}: {spec.train_size} train / {spec.val_size} val lines")
    return domains


def write_domains(domains: Dict[str, SyntheticDomain], directory) -> List[str]:
    """Write <dir>/<domain>/{train,val}.{src,tgt}; returns the written paths"""
    written = []
    for domain_id, domain in domains.items():
        for split in ('train', 'val'):
            base = Path(directory) / domain_id
            texts_path, labels_path = base / f"{split}.src", base / f"{split}.tgt"
            domain[split].write(texts_path, labels_path)
            written += [str(texts_path), str(labels_path)]
    return written
