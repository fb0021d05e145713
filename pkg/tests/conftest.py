import numpy as np
import pytest
import torch

from metaed.data import CorpusSpec, corpus_layout, generate_corpus
from metaed.encoder import EncoderConfig, TriggerPromptEncoder

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_corpus_spec():
    return CorpusSpec(
        num_event_types=6,
        triggers_per_type=2,
        background_vocab=20,
        context_len_range=(5, 9),
        examples_per_type=15,
        trigger_noise=0.0,
        seed=7,
    )


@pytest.fixture(scope="session")
def tiny_pools(tiny_corpus_spec):
    return generate_corpus(tiny_corpus_spec)


@pytest.fixture(scope="session")
def tiny_layout(tiny_corpus_spec):
    return corpus_layout(tiny_corpus_spec)


@pytest.fixture
def tiny_model(tiny_layout):
    torch.manual_seed(0)
    config = EncoderConfig(
        vocab_size=tiny_layout.vocab_size, max_len=20, num_layers=2, num_heads=2, hidden_dim=16
    )
    return TriggerPromptEncoder(config)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
