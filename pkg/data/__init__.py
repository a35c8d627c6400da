"""
Data package: tokenizer, line-aligned sources and synthetic domains
"""

from .vocab import Vocab, build_vocab
from .sources import TextPairSource, read_lines
from .synthetic import (
    SyntheticDomain, SyntheticDomainSpec, default_domain_specs,
    generate_synthetic_domains, write_domains,
)
