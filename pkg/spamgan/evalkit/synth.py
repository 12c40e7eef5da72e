"""
Synthetic two-class review corpus with a tunable class separation.

Words are ``w000, w001, ...``. The first ``keywords_per_class`` words are spam
keywords, the next ``keywords_per_class`` non-spam keywords, the rest shared
filler drawn from a Zipf profile. Every sentence has at least one keyword
slot; a keyword slot of a sentence of class c draws from c's own keywords with
probability ``(1 + separation) / 2`` and from the other class's otherwise.
"""
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from ..corpus import SPECIAL_TOKENS, ClassLabel, Dataset, Vocab, build_vocab
from ..numcore import RngStreams


@dataclass(frozen=True)
class SynthCorpusSpec:
    """
    Parameters:
        vocab_size: size of the full vocabulary, special tokens included.
        min_words, max_words: inclusive range of the sentence length in words.
        keywords_per_class: size of each class keyword set.
        keyword_rate: probability that a word slot is a keyword slot.
        zipf_exponent: exponent of the filler word frequency profile.
        separation: 0 gives identical classes, 1 disjoint keyword usage.
        num_labeled, num_unlabeled, num_test: pool sizes.
        seed: root seed of the corpus.
    """

    vocab_size: int = 50
    min_words: int = 4
    max_words: int = 12
    keywords_per_class: int = 5
    keyword_rate: float = 0.3
    zipf_exponent: float = 1.1
    separation: float = 1.0
    num_labeled: int = 200
    num_unlabeled: int = 1000
    num_test: int = 200
    seed: int = 0

    def __post_init__(self):
        num_words = self.vocab_size - len(SPECIAL_TOKENS)
        if num_words < 2 * self.keywords_per_class + 1:
            raise ValueError(
                f"vocab_size {self.vocab_size} leaves no filler words next to "
                f"{2 * self.keywords_per_class} keywords"
            )
        if self.keywords_per_class < 1:
            raise ValueError("keywords_per_class must be at least 1")
        if not 1 <= self.min_words <= self.max_words:
            raise ValueError(
                f"Need 1 <= min_words <= max_words, got {self.min_words}, {self.max_words}"
            )
        if not 0.0 <= self.separation <= 1.0:
            raise ValueError(f"separation must lie in [0, 1], got {self.separation}")
        if not 0.0 <= self.keyword_rate <= 1.0:
            raise ValueError(f"keyword_rate must lie in [0, 1], got {self.keyword_rate}")
        for name in ("num_labeled", "num_unlabeled", "num_test"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @property
    def words(self) -> List[str]:
        return [f"w{i:03d}" for i in range(self.vocab_size - len(SPECIAL_TOKENS))]

    @property
    def spam_keywords(self) -> List[str]:
        return self.words[: self.keywords_per_class]

    @property
    def nonspam_keywords(self) -> List[str]:
        return self.words[self.keywords_per_class : 2 * self.keywords_per_class]

    @property
    def filler(self) -> List[str]:
        return self.words[2 * self.keywords_per_class :]


@dataclass
class SynthCorpus:
    """Texts of the three pools; labels are kept for all of them."""

    spec: SynthCorpusSpec
    labeled: List[Tuple[str, ClassLabel]]
    unlabeled: List[Tuple[str, ClassLabel]]
    test: List[Tuple[str, ClassLabel]]

    def build(self, max_length: int, unlabeled_fraction: float = 1.0) -> Tuple[Vocab, Dataset]:
        """
        Vocabulary over the whole word list and the training pools encoded to
        ``max_length``; only the first ``unlabeled_fraction`` of the unlabeled
        pool is kept.
        """
        vocab = build_vocab([" ".join(self.spec.words)], self.spec.vocab_size)
        keep = int(round(len(self.unlabeled) * unlabeled_fraction))
        dataset = Dataset.from_texts(
            self.labeled,
            [text for text, _ in self.unlabeled[:keep]],
            vocab,
            max_length,
        )
        return vocab, dataset


def keyword_rule(spec: SynthCorpusSpec, text: str) -> ClassLabel:
    """Majority vote of the keywords in ``text``; ties go to non-spam."""
    words = text.split()
    spam = sum(word in spec.spam_keywords for word in words)
    nonspam = sum(word in spec.nonspam_keywords for word in words)
    return ClassLabel.SPAM if spam > nonspam else ClassLabel.NON_SPAM


def _sentence(spec: SynthCorpusSpec, label: ClassLabel, rng: np.random.Generator, filler_p) -> str:
    length = int(rng.integers(spec.min_words, spec.max_words + 1))
    keyword_slots = rng.random(length) < spec.keyword_rate
    if not keyword_slots.any():
        keyword_slots[rng.integers(length)] = True

    own, other = (
        (spec.spam_keywords, spec.nonspam_keywords)
        if label == ClassLabel.SPAM
        else (spec.nonspam_keywords, spec.spam_keywords)
    )
    words = []
    for is_keyword in keyword_slots:
        if is_keyword:
            pool = own if rng.random() < (1.0 + spec.separation) / 2.0 else other
            words.append(pool[rng.integers(len(pool))])
        else:
            words.append(spec.filler[rng.choice(len(spec.filler), p=filler_p)])
    return " ".join(words)


def _pool(spec: SynthCorpusSpec, size: int, name: str, filler_p) -> List[Tuple[str, ClassLabel]]:
    rng = RngStreams(spec.seed).numpy("synth", name)
    labels = np.array([i % 2 for i in range(size)], dtype=np.int64)
    rng.shuffle(labels)
    pool = []
    for label in labels:
        label = ClassLabel(int(label))
        pool.append((_sentence(spec, label, rng, filler_p), label))
    return pool


def make_synth_corpus(spec: SynthCorpusSpec) -> SynthCorpus:
    """Sample the labeled, unlabeled and test pools; deterministic per ``spec.seed``."""
    ranks = np.arange(1, len(spec.filler) + 1, dtype=np.float64)
    filler_p = ranks ** -spec.zipf_exponent
    filler_p /= filler_p.sum()
    return SynthCorpus(
        spec=spec,
        labeled=_pool(spec, spec.num_labeled, "labeled", filler_p),
        unlabeled=_pool(spec, spec.num_unlabeled, "unlabeled", filler_p),
        test=_pool(spec, spec.num_test, "test", filler_p),
    )

