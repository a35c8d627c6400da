"""
Line-aligned text/label sources
"""
from pathlib import Path
from typing import Iterator, List, Optional, Sequence, Tuple, Union

from utils.errors import DataError

TextsOrPath = Union[str, Path, Sequence[str]]


def read_lines(texts_or_path: TextsOrPath) -> List[str]:
    """
    Resolve an in-memory list or a UTF-8 file path into lines

    Args:
        texts_or_path: List of strings, or path to a file with one example per line

    Returns:
        List of lines without trailing newlines
    """
    if isinstance(texts_or_path, (str, Path)):
        path = Path(texts_or_path)
        try:
            with path.open(encoding='utf-8') as handle:
                return [line.rstrip('\n').rstrip('\r') for line in handle]
        except OSError as e:
            raise DataError(f"cannot read {path}: {e}") from e
        except UnicodeDecodeError as e:
            raise DataError(f"{path} is not valid UTF-8: {e}") from e
    return [str(line) for line in texts_or_path]


class TextPairSource:
    """Texts and labels, aligned line by line"""

    def __init__(self, texts_or_path: TextsOrPath, labels_or_path: Optional[TextsOrPath] = None):
        self.texts = read_lines(texts_or_path)
        self.labels = read_lines(labels_or_path) if labels_or_path is not None else list(self.texts)
        if len(self.texts) != len(self.labels):
            raise DataError(f"texts and labels are not line-aligned: {len(self.texts)} vs {len(self.labels)} lines")

    def __len__(self) -> int:
        return len(self.texts)

    def __iter__(self) -> Iterator[Tuple[str, str]]:
        return iter(zip(self.texts, self.labels))

    def pairs(self) -> List[Tuple[str, str]]:
        return list(zip(self.texts, self.labels))

    def write(self, texts_path: Union[str, Path], labels_path: Union[str, Path]) -> None:
        """Write both sides as UTF-8, one example per line"""
        for path, lines in ((Path(texts_path), self.texts), (Path(labels_path), self.labels)):
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(''.join(line + '\n' for line in lines), encoding='utf-8')

    def __repr__(self) -> str:
        return f"TextPairSource(length={len(self)})"
