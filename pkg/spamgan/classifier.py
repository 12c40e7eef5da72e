"""
Two-class per-timestep scoring, prediction, the classifier losses on real
and generated sentences and the classification critic.
"""
from dataclasses import dataclass
from typing import Union

import torch

from .backbone import BackboneConfig
from .corpus import ClassLabel
from .numcore import entropy, safe_log, softmax
from .scorer import SequenceScorer, masked_mean

ENTROPY_SIGNS = ("max-entropy", "min-entropy")


@dataclass
class StepTraceC:
    """
    Per-timestep classifier outputs over the action positions.

    Attributes:
        q: (batch, steps, 2) class distribution after each token.
        v: (batch, steps, 2) critic estimate of ``q`` from the preceding prefix.
        mask: (batch, steps) bool, True at non-pad positions.
    """

    q: torch.Tensor
    v: torch.Tensor
    mask: torch.Tensor

    def __len__(self):
        return self.q.shape[1]


class ClassifierModel(SequenceScorer):
    """
    Predicts spam vs non-spam after every token with a two-way softmax head;
    the classification critic is a second, per-class head.

    Parameters
    ----------
    vocab_size: int
        Number of tokens.
    config: BackboneConfig
        Backbone architecture.
    beta: float
        Weight of the entropy term of :func:`c_loss_fake`.
    """

    def __init__(self, vocab_size: int, config: BackboneConfig, beta: float = 1.0):
        super().__init__(vocab_size, config, score_size=2, critic_size=2)
        self.beta = beta

    def step_scores(self, sequences: torch.Tensor) -> StepTraceC:
        scores, values, mask = self.heads(sequences)
        return StepTraceC(q=softmax(scores, axis=-1), v=values, mask=mask)

    def forward(self, sequences: torch.Tensor) -> torch.Tensor:
        """Sentence-level class distributions, shape (batch, 2)."""
        return class_distribution(self.step_scores(sequences))


def select_class(per_class: torch.Tensor, classes) -> torch.Tensor:
    if isinstance(classes, int):
        classes = int(classes)
    classes = torch.as_tensor(classes, dtype=torch.long, device=per_class.device)
    if classes.dim() == 0:
        classes = classes.expand(per_class.shape[0])
    index = classes.view(-1, *([1] * (per_class.dim() - 1))).expand(*per_class.shape[:-1], 1)
    return per_class.gather(-1, index).squeeze(-1)


def class_distribution(trace: StepTraceC) -> torch.Tensor:
    """Mean over unmasked positions of the per-timestep class distributions."""
    return masked_mean(trace.q, trace.mask)


def sentence_score(trace: StepTraceC, classes: Union[int, torch.Tensor]) -> torch.Tensor:
    """C(y_1:T, c): mean of Q_C(., c) over the unmasked positions, shape (batch,)."""
    return select_class(class_distribution(trace), classes)


def predict(trace: StepTraceC) -> torch.Tensor:
    """Spam when the spam sentence score exceeds 0.5; a tie goes to non-spam."""
    spam = sentence_score(trace, ClassLabel.SPAM)
    return (spam > 0.5).long()


def c_loss_real(trace: StepTraceC, labels: torch.Tensor) -> torch.Tensor:
    """Mean cross-entropy of the true labels under the sentence scores."""
    return -safe_log(sentence_score(trace, labels)).mean()


def c_loss_fake(
    trace: StepTraceC,
    classes: torch.Tensor,
    beta: float = 1.0,
    entropy_sign: str = "max-entropy",
) -> torch.Tensor:
    """
    Loss on generated sentences: cross-entropy of the intended classes minus
    ``beta`` times the Shannon entropy of the sentence-level class
    distribution (``entropy_sign="max-entropy"``), or plus it
    (``entropy_sign="min-entropy"``). May be negative.
    """
    if entropy_sign not in ENTROPY_SIGNS:
        raise ValueError(f"Unknown entropy_sign `{entropy_sign}`, expected one of {ENTROPY_SIGNS}")
    dist = class_distribution(trace)
    cross = -safe_log(select_class(dist, classes))
    sign = -1.0 if entropy_sign == "max-entropy" else 1.0
    return (cross + sign * beta * entropy(dist, axis=-1)).mean()


def c_critic_loss(trace: StepTraceC, classes: torch.Tensor) -> torch.Tensor:
    """
    Squared error between the class-c critic and the constant Q_C(., c),
    summed over unmasked positions and averaged over the batch.
    """
    q = select_class(trace.q.detach(), classes)
    v = select_class(trace.v, classes)
    return (((q - v) ** 2) * trace.mask).sum(dim=1).mean()
