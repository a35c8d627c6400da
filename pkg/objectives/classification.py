"""
Token and sequence classification objectives
"""
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Tuple

import numpy as np

from backend.tensor import no_grad
from models.transformer import HeadKind, forward
from objectives.base import Objective, Pair, TokenCorpus
from objectives.batch import BatchRow
from utils.errors import AlignmentError, EncodingError, VocabularyError

if TYPE_CHECKING:
    from models.lang_module import LangModule


class _ClassificationObjective(Objective):
    """Shared label vocabulary handling"""

    def __init__(self, objective_id: str, texts_or_path, labels_or_path, *args,
                 labels: Optional[Sequence[str]] = None, **kwargs):
        super().__init__(objective_id, texts_or_path, labels_or_path, *args, **kwargs)
        self.labels = list(labels) if labels is not None else self._collect_labels()
        self.label_to_id: Dict[str, int] = {label: i for i, label in enumerate(self.labels)}

    def _collect_labels(self) -> List[str]:
        return sorted({label for line in self.train_source.labels for label in self._split_labels(line)})

    def _split_labels(self, line: str) -> List[str]:
        return line.split()

    @property
    def head_labels(self) -> List[str]:
        return list(self.labels)

    def head_output_dim(self, vocab_size: int) -> int:
        return len(self.labels)

    def label_id(self, label: str) -> int:
        try:
            return self.label_to_id[label]
        except KeyError:
            raise VocabularyError(f"{self.objective_id}: unknown label {label!r}") from None

    def encode_source(self, text: str) -> List[int]:
        ids = self.tokenizer.tokenize(text)
        if not ids:
            raise EncodingError(f"{self.objective_id}: cannot encode an empty text")
        return ids

    def _predicted_ids(self, lang_module: 'LangModule', pairs: Sequence[Pair]) -> List[np.ndarray]:
        body = lang_module.body_for(self.objective_id)
        head = lang_module.head_for(self.objective_id)
        predictions = []
        with no_grad():
            for start in range(0, len(pairs), self.batch_size):
                batch = self.make_batch(pairs[start:start + self.batch_size])
                predictions += list(np.argmax(forward(body, head, batch).data, axis=-1))
        return predictions


class TokenClassificationObjective(_ClassificationObjective):
    """One label per input token; labels lines are whitespace-separated label strings"""
    compatible_head = HeadKind.TOKEN_CLASSIFICATION

    def encode(self, pair: Pair) -> BatchRow:
        text, label_line = pair
        ids = self.encode_source(text)
        labels = label_line.split()
        if len(labels) != len(ids):
            raise AlignmentError(f"{self.objective_id}: {len(ids)} tokens but {len(labels)} labels in {text!r}")
        return BatchRow(source_ids=ids, labels=[self.label_id(label) for label in labels],
                        raw_source=text, raw_ref=label_line)

    def predict(self, lang_module: 'LangModule', pairs: Sequence[Pair]) -> Tuple[TokenCorpus, TokenCorpus]:
        candidates = []
        for (text, _), row in zip(pairs, self._predicted_ids(lang_module, pairs)):
            candidates.append([self.labels[i] for i in row[:len(text.split())]])
        return candidates, [label_line.split() for _, label_line in pairs]


class SequenceClassificationObjective(_ClassificationObjective):
    """One label per input text"""
    compatible_head = HeadKind.SEQUENCE_CLASSIFICATION

    def _split_labels(self, line: str) -> List[str]:
        return [line.strip()]

    def encode(self, pair: Pair) -> BatchRow:
        text, label = pair
        return BatchRow(source_ids=self.encode_source(text), labels=self.label_id(label.strip()),
                        raw_source=text, raw_ref=label)

    def predict(self, lang_module: 'LangModule', pairs: Sequence[Pair]) -> Tuple[TokenCorpus, TokenCorpus]:
        predicted = self._predicted_ids(lang_module, pairs)
        return [[self.labels[int(i)]] for i in predicted], [[label.strip()] for _, label in pairs]
