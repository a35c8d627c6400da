"""
Per-head checkpoint archives and the standalone model they load into

An archive directory holds:
    manifest.tsv  name, shape, dtype and byte offset of every parameter
    weights.bin   concatenated little-endian float32 values, manifest order
    config.json   model dimensions, head description and tokenizer
It contains the full body plus one head, and loads without any Objective,
Schedule or LangModule.
"""
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from loguru import logger

from backend.tensor import Parameter, Tensor, no_grad
from config.settings import (
    BOS_ID, CHECKPOINT_DTYPE, CONFIG_FILE, EOS_ID, JSON_INDENT, MANIFEST_FILE, WEIGHTS_FILE,
)
from data.vocab import Vocab
from models.transformer import (
    Body, Head, HeadKind, ModelConfig, body_parameter_shapes, forward, greedy_decode, greedy_decode_batch,
    head_parameter_shapes,
)
from objectives.batch import BatchRow, collate
from utils.errors import CompatibilityError, CorruptionError, EncodingError

if TYPE_CHECKING:
    from models.lang_module import LangModule

MANIFEST_COLUMNS = ['name', 'shape', 'dtype', 'offset']

log = logger.bind(source="checkpoint")


def _write_archive(directory: Union[str, Path], params: Dict[str, Parameter], config: Dict) -> List[str]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rows, offset = [], 0
    with open(directory / WEIGHTS_FILE, 'wb') as blob:
        for name, param in params.items():
            data = np.ascontiguousarray(param.data, dtype=CHECKPOINT_DTYPE)
            rows.append({
                'name': name,
                'shape': ','.join(str(d) for d in data.shape),
                'dtype': 'float32',
                'offset': offset,
            })
            blob.write(data.tobytes())
            offset += data.nbytes
    pd.DataFrame(rows, columns=MANIFEST_COLUMNS).to_csv(directory / MANIFEST_FILE, sep='\t', index=False)
    (directory / CONFIG_FILE).write_text(json.dumps(config, indent=JSON_INDENT), encoding='utf-8')
    return [str(directory / name) for name in (MANIFEST_FILE, WEIGHTS_FILE, CONFIG_FILE)]


def save_head_checkpoint(lang_module: 'LangModule', objective_id: str, directory: Union[str, Path]) -> List[str]:
    """
    Write the body and one objective's head as a standalone archive

    Args:
        lang_module: Registry holding the objective
        objective_id: Objective whose head is saved
        directory: Target directory, created if needed

    Returns:
        Paths of the written files
    """
    head = lang_module.head_for(objective_id)
    params = lang_module.objective_parameters(objective_id)
    config = {
        'model': lang_module.config.to_dict(),
        'head': {
            'kind': head.kind.value,
            'objective_id': objective_id,
            'output_dim': head.output_dim,
            'labels': head.labels,
        },
        'tokenizer': lang_module.tokenizer.to_dict() if lang_module.tokenizer is not None else None,
    }
    written = _write_archive(directory, params, config)
    log.info(f"saved {objective_id} checkpoint ({len(params)} parameters) to {directory}")
    return written


def _read_manifest(path: Path) -> pd.DataFrame:
    try:
        manifest = pd.read_csv(path, sep='\t', dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise CorruptionError(f"cannot read manifest {path}: {e}") from e
    if list(manifest.columns) != MANIFEST_COLUMNS:
        raise CorruptionError(f"manifest {path} has columns {list(manifest.columns)}, expected {MANIFEST_COLUMNS}")
    return manifest


def load_parameters(directory: Union[str, Path]) -> Dict[str, Parameter]:
    """Parameters of an archive, checked against the manifest's byte accounting"""
    directory = Path(directory)
    manifest = _read_manifest(directory / MANIFEST_FILE)
    try:
        blob = (directory / WEIGHTS_FILE).read_bytes()
    except OSError as e:
        raise CorruptionError(f"cannot read weights of {directory}: {e}") from e

    itemsize = np.dtype(CHECKPOINT_DTYPE).itemsize
    params: Dict[str, Parameter] = {}
    expected_offset = 0
    for row in manifest.itertuples(index=False):
        try:
            shape = tuple(int(d) for d in row.shape.split(',')) if row.shape else ()
            offset = int(row.offset)
        except ValueError:
            raise CorruptionError(f"malformed manifest row for {row.name!r}") from None
        if offset != expected_offset:
            raise CorruptionError(f"{row.name}: offset {offset} but previous parameters end at {expected_offset}")
        nbytes = int(np.prod(shape, dtype=np.int64)) * itemsize
        if offset + nbytes > len(blob):
            raise CorruptionError(f"{row.name}: needs bytes [{offset}, {offset + nbytes}) but the blob has {len(blob)}")
        data = np.frombuffer(blob, dtype=CHECKPOINT_DTYPE, count=nbytes // itemsize, offset=offset).reshape(shape)
        params[row.name] = Parameter(row.name, data.astype(np.float32), dtype=np.float32)
        expected_offset = offset + nbytes
    if expected_offset != len(blob):
        raise CorruptionError(f"manifest accounts for {expected_offset} bytes but the blob has {len(blob)}")
    return params


@dataclass
class StandaloneModel:
    """Body, one head and a tokenizer: everything needed to run a trained head"""
    body: Body
    head: Head
    tokenizer: Optional[Vocab] = None

    @property
    def config(self) -> ModelConfig:
        return self.body.config

    def parameters(self) -> Dict[str, Parameter]:
        return {**self.body.params, **self.head.named_parameters()}

    def forward(self, batch) -> Tensor:
        return forward(self.body, self.head, batch)

    def greedy_decode(self, source_ids: Sequence[int], max_len: Optional[int] = None) -> List[int]:
        return greedy_decode(self.body, self.head, source_ids, max_len)

    def _vocab(self) -> Vocab:
        if self.tokenizer is None:
            raise EncodingError("checkpoint has no tokenizer")
        return self.tokenizer

    def translate_batch(self, texts: Sequence[str], max_len: Optional[int] = None) -> List[str]:
        """Greedy translations of whitespace-tokenized texts"""
        vocab = self._vocab()
        sources = [[BOS_ID] + vocab.tokenize(text) + [EOS_ID] for text in texts]
        with no_grad():
            outputs = greedy_decode_batch(self.body, self.head, sources, max_len)
        return [vocab.detokenize(ids) for ids in outputs]

    def translate(self, text: str, max_len: Optional[int] = None) -> str:
        return self.translate_batch([text], max_len)[0]

    def classify(self, texts: Sequence[str]) -> List[Union[str, List[str]]]:
        """Predicted label per text (sequence heads) or per token (token heads)"""
        kind = HeadKind(self.head.kind)
        if kind == HeadKind.SEQ2SEQ_LM or not self.head.labels:
            raise CompatibilityError(f"classify needs a labelled classification head, got {kind.value}")
        vocab = self._vocab()
        rows = []
        for text in texts:
            ids = vocab.tokenize(text)
            labels = 0 if kind == HeadKind.SEQUENCE_CLASSIFICATION else [0] * len(ids)
            rows.append(BatchRow(source_ids=ids, labels=labels, raw_source=text))
        with no_grad():
            predicted = np.argmax(self.forward(collate(self.head.objective_id, rows)).data, axis=-1)
        if kind == HeadKind.SEQUENCE_CLASSIFICATION:
            return [self.head.labels[int(i)] for i in predicted]
        return [[self.head.labels[int(i)] for i in row[:len(text.split())]] for text, row in zip(texts, predicted)]


def _check_shapes(params: Dict[str, Parameter], expected: Dict[str, tuple], owner: str) -> None:
    missing = sorted(set(expected) - set(params))
    if missing:
        raise CorruptionError(f"archive is missing {owner} parameters {missing}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise CorruptionError(f"archive has unknown {owner} parameters {extra}")
    for name, shape in expected.items():
        if tuple(params[name].shape) != tuple(shape):
            raise CorruptionError(f"{owner} parameter {name}: shape {params[name].shape}, config expects {tuple(shape)}")


def load_head_checkpoint(directory: Union[str, Path]) -> StandaloneModel:
    """
    Load an archive written by save_head_checkpoint

    Raises:
        CorruptionError: manifest, blob and config disagree
    """
    directory = Path(directory)
    try:
        config = json.loads((directory / CONFIG_FILE).read_text(encoding='utf-8'))
    except (OSError, ValueError) as e:
        raise CorruptionError(f"cannot read {directory / CONFIG_FILE}: {e}") from e
    params = load_parameters(directory)

    model_config = ModelConfig.from_dict(config['model'])
    head_config = config['head']
    objective_id = head_config['objective_id']
    prefix = f"head.{objective_id}."
    body_params = {name: p for name, p in params.items() if name.startswith('body.')}
    head_params = {name[len(prefix):]: p for name, p in params.items() if name.startswith(prefix)}
    unexpected = set(params) - set(body_params) - {prefix + local for local in head_params}
    if unexpected:
        raise CorruptionError(f"archive holds parameters of other heads: {sorted(unexpected)}")
    if not head_params:
        raise CorruptionError(f"archive has no parameters for head {objective_id!r}")
    _check_shapes(body_params, body_parameter_shapes(model_config), "body")
    output_dim = int(head_config['output_dim'])
    _check_shapes(head_params, head_parameter_shapes(model_config, output_dim), f"head {objective_id!r}")

    body = Body(model_config, body_params)
    head = Head(HeadKind(head_config['kind']), objective_id, head_params, output_dim, head_config.get('labels'))
    tokenizer = Vocab.from_dict(config['tokenizer']) if config.get('tokenizer') else None
    return StandaloneModel(body, head, tokenizer)
