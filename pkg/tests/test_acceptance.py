"""
Learnability and direction-of-effect runs on synthetic corpora. These train
desk-scale models for minutes; run them with ``pytest -m slow``.
"""
import pytest
import torch

from spamgan.config import RunConfig
from spamgan.corpus import encode_pool
from spamgan.evalkit import classify, evaluate, make_synth_corpus, perplexity
from spamgan.evalkit.sweep import sweep
from spamgan.network import SpamGAN, evaluating
from spamgan.numcore import RngStreams
from spamgan.trainer import SpamGANTrainer

pytestmark = pytest.mark.slow

SEPARABLE_CORPUS = dict(
    vocab_size=50,
    max_length=20,
    max_positions=20,
    synth_vocab_size=50,
    synth_zipf_exponent=1.5,
    synth_separation=1.0,
    synth_labeled=1000,
    synth_unlabeled=1000,
    synth_test=200,
    validation_fraction=0.0,
)

ONLY_CLASSIFIER = dict(
    pretrain_g_epochs=0,
    pretrain_d_epochs=0,
    pretrain_critic_epochs=0,
    training_epochs=0,
)


def _setup(**values):
    config = RunConfig.from_dict(values)
    corpus = make_synth_corpus(config.synth_spec())
    vocab, dataset = corpus.build(config.max_length)
    test_sequences, test_labels = encode_pool(corpus.test, vocab, config.max_length)
    model = SpamGAN.from_config(config, len(vocab), seed=config.seed)
    return config, dataset, model, test_sequences, test_labels


def test_generator_learns_the_corpus():
    config, dataset, model, sequences, labels = _setup(
        **SEPARABLE_CORPUS,
        pretrain_g_epochs=30,
        pretrain_d_epochs=0,
        pretrain_c_epochs=0,
        pretrain_critic_epochs=0,
        training_epochs=0,
    )

    def held_out():
        return perplexity(model.generator, sequences, labels, torch.Generator().manual_seed(0))

    before = held_out()
    SpamGANTrainer(model, dataset, config.schedule(), seed=0).pretrain()
    assert before > 40.0
    assert held_out() <= 30.0


def test_classifier_learns_separable_keywords():
    config, dataset, model, sequences, labels = _setup(
        **SEPARABLE_CORPUS, **ONLY_CLASSIFIER, pretrain_c_epochs=20, c_lr=1e-3
    )
    SpamGANTrainer(model, dataset, config.schedule(), seed=0).pretrain()
    report = evaluate(model, sequences, labels, with_perplexity=False)
    assert report.accuracy >= 0.95


def test_generated_sentences_follow_their_class():
    config, dataset, model, _, _ = _setup(
        **SEPARABLE_CORPUS,
        pretrain_g_epochs=20,
        pretrain_d_epochs=5,
        pretrain_c_epochs=10,
        pretrain_critic_epochs=5,
        training_epochs=5,
        c_lr=1e-3,
    )
    SpamGANTrainer(model, dataset, config.schedule(), seed=0).train()

    generator = RngStreams(0).generator("acceptance")
    classes = torch.cat([torch.zeros(200, dtype=torch.long), torch.ones(200, dtype=torch.long)])
    z = model.generator.noise.sample(len(classes), generator)
    with torch.no_grad(), evaluating(model.generator):
        fakes, _ = model.generator.decode(classes, z, config.decode(), generator)
    predictions, _ = classify(model.classifier, fakes)
    assert (predictions == classes).double().mean() >= 0.8


def test_unlabeled_data_does_not_hurt_accuracy():
    config = RunConfig.from_dict(
        dict(
            SEPARABLE_CORPUS,
            synth_separation=0.8,
            synth_labeled=40,
            synth_unlabeled=2000,
            synth_test=400,
            pretrain_g_epochs=10,
            pretrain_d_epochs=3,
            pretrain_c_epochs=10,
            pretrain_critic_epochs=3,
            training_epochs=5,
            c_lr=1e-3,
        )
    )
    base, full = sweep(config, [1.0], [1.0], seeds=range(5))
    assert full.accuracy_mean >= base.accuracy_mean


def test_inseparable_corpus_gives_chance_accuracy():
    accuracies = []
    for seed in range(5):
        config, dataset, model, sequences, labels = _setup(
            **dict(SEPARABLE_CORPUS, synth_separation=0.0, synth_labeled=200, synth_test=2000),
            **ONLY_CLASSIFIER,
            pretrain_c_epochs=5,
            c_lr=1e-3,
            seed=seed,
        )
        SpamGANTrainer(model, dataset, config.schedule(), seed=seed).pretrain()
        accuracies.append(evaluate(model, sequences, labels, with_perplexity=False).accuracy)
    assert abs(sum(accuracies) / len(accuracies) - 0.5) <= 0.03
