"""
Training package for adaptorx: the Adapter loop and per-head checkpoints
"""

from .checkpoint import StandaloneModel, save_head_checkpoint, load_head_checkpoint, load_parameters
from .adapter import Adapter, LogRecord, LogStream, TrainingArguments, TrainingResult, train
