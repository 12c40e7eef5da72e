import pytest
import torch

from spamgan.backbone import BackboneConfig
from spamgan.config import RunConfig
from spamgan.evalkit import make_synth_corpus

# Small enough for a full train run in a couple of seconds.
TINY_CONFIG = dict(
    vocab_size=30,
    max_length=8,
    max_positions=8,
    num_layers=1,
    hidden_size=8,
    num_heads=2,
    embedding_size=8,
    feedforward_size=16,
    noise_dim=2,
    pretrain_g_epochs=1,
    pretrain_d_epochs=1,
    pretrain_c_epochs=1,
    pretrain_critic_epochs=1,
    training_epochs=1,
    batch_size=8,
    adv_batches=1,
    validation_fraction=0.25,
    synth_vocab_size=30,
    synth_min_words=2,
    synth_max_words=5,
    synth_keywords=3,
    synth_labeled=16,
    synth_unlabeled=16,
    synth_test=8,
)


def tiny_backbone(kind: str, **overrides) -> BackboneConfig:
    """Dropout-free backbone for exact and finite-difference checks."""
    values = dict(
        kind=kind,
        num_layers=1,
        hidden_size=4,
        num_heads=2,
        embedding_size=4,
        feedforward_size=8,
        max_positions=4,
        embedding_dropout=0.0,
        core_dropout=0.0,
        head_dropout=0.0,
        init_std=0.5,
    )
    values.update(overrides)
    return BackboneConfig(**values)


@pytest.fixture
def tiny_config():
    return RunConfig.from_dict(TINY_CONFIG)


@pytest.fixture
def tiny_corpus(tiny_config):
    corpus = make_synth_corpus(tiny_config.synth_spec())
    vocab, dataset = corpus.build(tiny_config.max_length)
    return corpus, vocab, dataset


@pytest.fixture
def sequences():
    # Vocabulary of five: the four special tokens and one word (id 4).
    return torch.tensor(
        [
            [0, 4, 3, 1],
            [0, 4, 1, 2],
            [0, 1, 2, 2],
        ]
    )
