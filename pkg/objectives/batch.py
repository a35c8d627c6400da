"""
Encoded examples and padded batches
"""
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from config.settings import IGNORE_ID, PAD_ID


@dataclass
class BatchRow:
    """One encoded example"""
    source_ids: List[int]
    labels: Union[List[int], int]
    decoder_input_ids: Optional[List[int]] = None
    raw_source: str = ""
    raw_ref: str = ""


@dataclass
class Batch:
    """Padded rows of one objective, tagged with its id for routing"""
    objective_id: str
    source_ids: np.ndarray
    source_mask: np.ndarray
    labels: np.ndarray
    decoder_input_ids: Optional[np.ndarray] = None
    decoder_mask: Optional[np.ndarray] = None
    raw_sources: List[str] = field(default_factory=list)
    raw_refs: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.source_ids.shape[0])

    @property
    def n_targets(self) -> int:
        """Number of non-ignored label positions"""
        return int((self.labels != IGNORE_ID).sum())


def pad_rows(rows: Sequence[Sequence[int]], pad_value: int) -> np.ndarray:
    width = max((len(row) for row in rows), default=0)
    out = np.full((len(rows), max(width, 1)), pad_value, dtype=np.int64)
    for i, row in enumerate(rows):
        out[i, :len(row)] = row
    return out


def _mask(rows: Sequence[Sequence[int]], width: int) -> np.ndarray:
    lengths = np.array([len(row) for row in rows])
    return np.arange(width)[None, :] < lengths[:, None]


def collate(objective_id: str, rows: Sequence[BatchRow]) -> Batch:
    """
    Pad encoded rows to the longest row of the batch

    Token ids are padded with PAD_ID, token labels with IGNORE_ID. Rows with
    integer labels (sequence classification) give a [batch] label vector.
    """
    sources = [row.source_ids for row in rows]
    source_ids = pad_rows(sources, PAD_ID)
    if rows and isinstance(rows[0].labels, (int, np.integer)):
        labels = np.array([int(row.labels) for row in rows], dtype=np.int64)
    else:
        labels = pad_rows([row.labels for row in rows], IGNORE_ID)

    decoder_input_ids = decoder_mask = None
    if rows and rows[0].decoder_input_ids is not None:
        decoder_rows = [row.decoder_input_ids for row in rows]
        decoder_input_ids = pad_rows(decoder_rows, PAD_ID)
        decoder_mask = _mask(decoder_rows, decoder_input_ids.shape[1])

    return Batch(
        objective_id=objective_id,
        source_ids=source_ids,
        source_mask=_mask(sources, source_ids.shape[1]),
        labels=labels,
        decoder_input_ids=decoder_input_ids,
        decoder_mask=decoder_mask,
        raw_sources=[row.raw_source for row in rows],
        raw_refs=[row.raw_ref for row in rows],
    )
