"""
Utilities package for adaptorx
"""

from .errors import *
from .data_parser import parse_key_value_text, parse_key_value_file, clean_string
from .export_utils import export_log_records, export_results, export_metrics, read_table
