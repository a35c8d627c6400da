"""
Export utilities for training logs and results tables
"""
from pathlib import Path
from typing import Any, Dict, Iterable, List, Sequence, Union

import pandas as pd

from config.settings import FLOAT_FORMAT, LOG_COLUMNS, RESULTS_COLUMNS


def records_to_frame(rows: Iterable[Dict[str, Any]], columns: Sequence[str]) -> pd.DataFrame:
    """
    Build a DataFrame with a fixed column order

    Args:
        rows: Row dictionaries
        columns: Column names; missing cells become empty

    Returns:
        DataFrame with exactly the given columns
    """
    return pd.DataFrame(list(rows), columns=list(columns))


def export_log_records(records: Iterable[Any], path: Union[str, Path], append: bool = False) -> Path:
    """
    Write LogRecords as TSV: update, objective, split, metric, value

    Args:
        records: LogRecord instances (anything with to_row())
        path: Target file
        append: Append to an existing file instead of rewriting it

    Returns:
        Path of the written file
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = records_to_frame((record.to_row() for record in records), LOG_COLUMNS)
    write_header = not (append and path.exists())
    frame.to_csv(path, sep='\t', index=False, header=write_header, mode='a' if append else 'w')
    return path


def export_results(rows: Iterable[Any], path: Union[str, Path]) -> Path:
    """
    Write ResultsRows as the fixed-header results table

    An empty iterable produces a header-only file.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = records_to_frame((row.to_dict() for row in rows), RESULTS_COLUMNS)
    frame.to_csv(path, sep='\t', index=False, float_format=FLOAT_FORMAT)
    return path


def export_metrics(metrics: Dict[str, float], path: Union[str, Path], columns: List[str] = None) -> Path:
    """Write one metric map as a two-column TSV (metric, value)"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [{'metric': name, 'value': value} for name, value in metrics.items()],
        columns=columns or ['metric', 'value'],
    )
    frame.to_csv(path, sep='\t', index=False, float_format=FLOAT_FORMAT)
    return path


def read_table(path: Union[str, Path]) -> pd.DataFrame:
    """Read a TSV written by this module"""
    return pd.read_csv(path, sep='\t', keep_default_na=False)
