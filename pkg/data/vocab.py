"""
Whitespace tokenizer with a closed, deterministic vocabulary
"""
from collections import Counter
from typing import Dict, Iterable, List, Sequence

from config.settings import BOS_ID, EOS_ID, PAD_ID, SPECIAL_TOKENS, UNK_ID, UNK_TOKEN
from utils.errors import DataError


class Vocab:
    """Token <-> id bijection with the four special tokens at fixed ids"""

    def __init__(self, tokens: Sequence[str]):
        if list(tokens[:len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            tokens = SPECIAL_TOKENS + [t for t in tokens if t not in SPECIAL_TOKENS]
        self.id_to_token: List[str] = list(tokens)
        self.token_to_id: Dict[str, int] = {token: i for i, token in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            duplicates = sorted(t for t, n in Counter(self.id_to_token).items() if n > 1)
            raise DataError(f"vocabulary tokens must be unique, duplicated: {duplicates}")

    pad_id = PAD_ID
    bos_id = BOS_ID
    eos_id = EOS_ID
    unk_id = UNK_ID

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocab) and self.id_to_token == other.id_to_token

    def tokenize(self, text: str) -> List[int]:
        """Map whitespace-separated tokens to ids (unknown tokens -> UNK)"""
        return [self.token_to_id.get(token, UNK_ID) for token in text.split()]

    def detokenize(self, ids: Iterable[int]) -> str:
        """Map ids back to text, dropping PAD/BOS/EOS"""
        return ' '.join(self.tokens(ids))

    def tokens(self, ids: Iterable[int]) -> List[str]:
        skipped = (PAD_ID, BOS_ID, EOS_ID)
        return [
            self.id_to_token[i] if 0 <= i < len(self.id_to_token) else UNK_TOKEN
            for i in (int(i) for i in ids) if i not in skipped
        ]

    def to_dict(self) -> Dict[str, List[str]]:
        return {'tokens': list(self.id_to_token)}

    @classmethod
    def from_dict(cls, data: Dict[str, List[str]]) -> 'Vocab':
        return cls(data['tokens'])


def build_vocab(corpora: Iterable[Iterable[str]]) -> Vocab:
    """
    Build a vocabulary from corpora of whitespace-tokenized lines

    Tokens are ordered by frequency (descending), ties broken lexicographically,
    after the four specials.

    Args:
        corpora: Iterables of text lines

    Returns:
        Vocab
    """
    counts: Counter = Counter()
    for corpus in corpora:
        for line in corpus:
            counts.update(token for token in line.split() if token not in SPECIAL_TOKENS)
    ordered = sorted(counts, key=lambda token: (-counts[token], token))
    return Vocab(SPECIAL_TOKENS + ordered)
