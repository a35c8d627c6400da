"""
Models package for adaptorx: the encoder-decoder body, heads and the LangModule
"""

from .transformer import (
    Body, Head, HeadKind, ModelConfig, build_model, count_parameters, forward,
    greedy_decode, greedy_decode_batch, init_head, multi_head_attention,
)
from .lang_module import LangModule, MergeReport, merge_shared_parameters
