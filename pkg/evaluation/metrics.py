"""
Corpus metrics over token sequences
"""
from typing import Any, List, Sequence

from sacrebleu.metrics import BLEU

from config.settings import BLEU_MAX_ORDER
from utils.errors import InputError

TokenCorpus = Sequence[Sequence[Any]]


def _check_corpora(candidates: TokenCorpus, references: TokenCorpus, metric: str) -> None:
    if len(candidates) != len(references):
        raise InputError(f"{metric}: {len(candidates)} candidates but {len(references)} references")
    if not references:
        raise InputError(f"{metric}: empty corpus")


def _as_line(tokens: Sequence[Any]) -> str:
    if isinstance(tokens, str):
        return tokens
    return ' '.join(str(token) for token in tokens)


def corpus_bleu(candidates: TokenCorpus, references: TokenCorpus, max_order: int = BLEU_MAX_ORDER) -> float:
    """
    Corpus BLEU on pre-tokenized sequences, unsmoothed

    Modified n-gram precisions are pooled over the corpus, combined by their
    geometric mean and scaled by the brevity penalty. Any zero pooled
    precision yields 0.

    Args:
        candidates: Hypothesis token sequences (strings are taken as already
            whitespace-tokenized lines)
        references: One reference token sequence per candidate
        max_order: Highest n-gram order

    Returns:
        Score in [0, 100]
    """
    _check_corpora(candidates, references, 'corpus_bleu')
    bleu = BLEU(tokenize='none', smooth_method='none', max_ngram_order=max_order, effective_order=False)
    result = bleu.corpus_score([_as_line(c) for c in candidates], [[_as_line(r) for r in references]])
    return float(result.score)


def token_accuracy(candidates: TokenCorpus, references: TokenCorpus) -> float:
    """
    Matched positions over reference positions

    Positions beyond the candidate's length count as wrong; extra candidate
    tokens are ignored.
    """
    _check_corpora(candidates, references, 'token_accuracy')
    matched = total = 0
    for candidate, reference in zip(candidates, references):
        candidate, reference = list(candidate), list(reference)
        total += len(reference)
        matched += sum(1 for c, r in zip(candidate, reference) if c == r)
    return matched / total if total else float(all(len(c) == 0 for c in candidates))


def exact_match(candidates: TokenCorpus, references: TokenCorpus) -> float:
    """Fraction of candidates identical to their reference"""
    _check_corpora(candidates, references, 'exact_match')
    hits = sum(1 for c, r in zip(candidates, references) if list(c) == list(r))
    return hits / len(references)


METRIC_FUNCTIONS = {
    'bleu': corpus_bleu,
    'token_accuracy': token_accuracy,
    'exact_match': exact_match,
}


def metric_names() -> List[str]:
    return sorted(METRIC_FUNCTIONS) + ['val_loss']
