"""
Shared fixtures: tiny models, vocabularies and synthetic corpora
"""
import os

os.environ.setdefault("ADAPTORX_SHOW_PROGRESS", "0")

import pytest

from data.synthetic import default_domain_specs, generate_synthetic_domains
from data.vocab import Vocab, build_vocab
from models.lang_module import LangModule
from models.transformer import ModelConfig, build_model


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow end-to-end tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_DIMS = dict(d_model=16, n_heads=2, enc_layers=1, dec_layers=1, ffn_dim=32, max_len=16)


@pytest.fixture
def vocab():
    return Vocab(['<pad>', '<s>', '</s>', '<unk>', 'a', 'b', 'c', 'd', 'e', 'f'])


@pytest.fixture
def tiny_config(vocab):
    return ModelConfig(vocab_size=len(vocab), **TINY_DIMS)


@pytest.fixture
def tiny_body(tiny_config):
    return build_model(tiny_config, seed=0)


@pytest.fixture
def lang_module(tiny_body, vocab):
    return LangModule(tiny_body, vocab, seed=0)


@pytest.fixture(scope="session")
def small_domains():
    return generate_synthetic_domains(7, default_domain_specs(train_size=40, val_size=8))


@pytest.fixture(scope="session")
def domain_vocab(small_domains):
    corpora = []
    for domain in small_domains.values():
        corpora += [domain.train.texts, domain.train.labels, domain.val.texts, domain.val.labels]
    return build_vocab(corpora)
