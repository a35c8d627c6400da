"""
Parsing utilities for flat key=value configuration files
"""
import re
from pathlib import Path
from typing import Any, Dict, List, Union

from utils.errors import ConfigError

_KEY_PATTERN = re.compile(r'^[A-Za-z_][A-Za-z0-9_]*(\.[A-Za-z0-9_]+)*$')


def parse_key_value_text(text: str, origin: str = "<config>") -> Dict[str, str]:
    """
    Parse key=value lines with dotted keys

    Args:
        text: File contents; blank lines and lines starting with '#' are skipped
        origin: Name used in error messages

    Returns:
        Ordered mapping of key to raw string value
    """
    entries: Dict[str, str] = {}
    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith('#'):
            continue
        if '=' not in line:
            raise ConfigError(f"{origin}:{number}: expected key=value, got {raw_line!r}")
        key, value = line.split('=', 1)
        key = clean_string(key)
        if not _KEY_PATTERN.match(key):
            raise ConfigError(f"{origin}:{number}: invalid key {key!r}")
        if key in entries:
            raise ConfigError(f"{origin}:{number}: duplicate key {key!r}")
        entries[key] = clean_string(value)
    return entries


def parse_key_value_file(path: Union[str, Path]) -> Dict[str, str]:
    """Read and parse a UTF-8 key=value file"""
    path = Path(path)
    try:
        text = path.read_text(encoding='utf-8')
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_key_value_text(text, origin=str(path))


def clean_string(value: Any) -> str:
    """
    Clean and normalize string values

    Args:
        value: Input value

    Returns:
        Cleaned string
    """
    if value is None:
        return ''
    return re.sub(r'\s+', ' ', str(value).strip())


def parse_bool(key: str, value: str) -> bool:
    lowered = value.lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ConfigError(f"{key}: expected a boolean, got {value!r}")


def parse_int(key: str, value: str, minimum: int = None) -> int:
    try:
        number = int(value)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {value!r}") from None
    if minimum is not None and number < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {number}")
    return number


def parse_float(key: str, value: str, minimum: float = None) -> float:
    try:
        number = float(value)
    except ValueError:
        raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if minimum is not None and number < minimum:
        raise ConfigError(f"{key}: must be >= {minimum}, got {number}")
    return number


def parse_list(value: str) -> List[str]:
    """Split a comma-separated value, dropping empty items"""
    return [item.strip() for item in value.split(',') if item.strip()]
