"""
Evaluation metrics: accuracy and F1 with spam as the positive class,
token-level generator perplexity, and the seeded 80-20 split of labeled data.
"""
import json
import math
from dataclasses import asdict, dataclass
from typing import Optional, Sequence, Tuple, TypeVar

import torch

from ..classifier import ClassifierModel, predict, sentence_score
from ..corpus import ClassLabel
from ..generator import GeneratorModel
from ..network import SpamGAN, evaluating
from ..numcore import RngStreams

T = TypeVar("T")


@dataclass
class EvalReport:
    """
    Classification metrics over ``samples`` sentences, spam being positive.
    ``perplexity`` is ``None`` when no generator was evaluated.
    """

    accuracy: float
    precision: float
    recall: float
    f1: float
    true_positives: int
    false_positives: int
    false_negatives: int
    true_negatives: int
    samples: int
    perplexity: Optional[float] = None
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def accuracy_f1(predictions, truths, seed: Optional[int] = None) -> EvalReport:
    """
    Confusion-matrix metrics of ``predictions`` against ``truths`` (0/1 or
    :class:`ClassLabel`). Precision, recall and F1 are 0 when undefined.
    """
    predictions = torch.as_tensor([int(p) for p in predictions], dtype=torch.long)
    truths = torch.as_tensor([int(t) for t in truths], dtype=torch.long)
    if predictions.shape != truths.shape:
        raise ValueError(
            f"Got {predictions.numel()} predictions for {truths.numel()} labels"
        )
    if predictions.numel() == 0:
        raise ValueError("Cannot evaluate an empty set of predictions")

    spam = int(ClassLabel.SPAM)
    tp = int(((predictions == spam) & (truths == spam)).sum())
    fp = int(((predictions == spam) & (truths != spam)).sum())
    fn = int(((predictions != spam) & (truths == spam)).sum())
    tn = int(((predictions != spam) & (truths != spam)).sum())
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return EvalReport(
        accuracy=(tp + tn) / predictions.numel(),
        precision=precision,
        recall=recall,
        f1=f1,
        true_positives=tp,
        false_positives=fp,
        false_negatives=fn,
        true_negatives=tn,
        samples=predictions.numel(),
        seed=seed,
    )


@torch.no_grad()
def perplexity(
    model: GeneratorModel,
    sequences: torch.Tensor,
    classes: torch.Tensor,
    noise_generator: torch.Generator,
    batch_size: int = 64,
) -> float:
    """
    exp of the mean negative log-likelihood per non-pad target token
    (``<end>`` included), in evaluation mode. One z per sequence is drawn
    from ``noise_generator`` up front.
    """
    if sequences.shape[0] == 0:
        raise ValueError("Perplexity needs at least one held-out sequence")
    z = model.noise.sample(sequences.shape[0], noise_generator)
    total, count = 0.0, 0
    with evaluating(model):
        for start in range(0, sequences.shape[0], batch_size):
            stop = start + batch_size
            log_probs, mask = model.token_log_probs(
                sequences[start:stop], sequences[start:stop], classes[start:stop], z[start:stop]
            )
            total -= float(log_probs.double().sum())
            count += int(mask.sum())
    return math.exp(total / count)


@torch.no_grad()
def classify(
    model: ClassifierModel, sequences: torch.Tensor, batch_size: int = 64
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Predicted labels and spam sentence scores, in evaluation mode."""
    labels, scores = [], []
    with evaluating(model):
        for start in range(0, sequences.shape[0], batch_size):
            trace = model.step_scores(sequences[start : start + batch_size])
            labels.append(predict(trace))
            scores.append(sentence_score(trace, ClassLabel.SPAM))
    if not labels:
        return torch.zeros(0, dtype=torch.long), torch.zeros(0)
    return torch.cat(labels), torch.cat(scores)


def evaluate(
    model: SpamGAN,
    sequences: torch.Tensor,
    labels: torch.Tensor,
    seed: int = 0,
    with_perplexity: bool = True,
) -> EvalReport:
    """Classifier metrics on labeled sentences, plus generator perplexity."""
    predictions, _ = classify(model.classifier, sequences)
    report = accuracy_f1(predictions.tolist(), labels.tolist(), seed=seed)
    if with_perplexity:
        noise = RngStreams(seed).generator("perplexity-noise")
        report.perplexity = perplexity(model.generator, sequences, labels, noise)
    return report


def train_test_split(
    items: Sequence[T], test_fraction: float = 0.2, seed: int = 0
) -> Tuple[list, list]:
    """Seeded shuffle, then the last ``test_fraction`` of the items is the test set."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    order = RngStreams(seed).numpy("train-test-split").permutation(len(items))
    num_test = int(round(len(items) * test_fraction))
    shuffled = [items[i] for i in order]
    split = len(items) - num_test
    return shuffled[:split], shuffled[split:]
