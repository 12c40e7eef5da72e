"""
Real-vs-fake scoring: per-timestep scores Q_D, the discrimination critic
V_D, the averaged sentence score and the two losses.
"""
from dataclasses import dataclass

import torch

from .backbone import BackboneConfig
from .numcore import safe_log
from .scorer import SequenceScorer, masked_mean


@dataclass
class StepTraceD:
    """
    Per-timestep discriminator outputs over the action positions.

    Attributes:
        q: (batch, steps) probability that the sentence is real after each token.
        v: (batch, steps) critic estimate of ``q`` from the preceding prefix.
        mask: (batch, steps) bool, True at non-pad positions.
    """

    q: torch.Tensor
    v: torch.Tensor
    mask: torch.Tensor

    def __len__(self):
        return self.q.shape[1]


class DiscriminatorModel(SequenceScorer):
    """
    Scores every prefix of a sentence with a sigmoid head. A second scalar
    head, the discrimination critic, predicts that score from the prefix
    without the latest token.
    """

    def __init__(self, vocab_size: int, config: BackboneConfig):
        super().__init__(vocab_size, config, score_size=1, critic_size=1)

    def step_scores(self, sequences: torch.Tensor) -> StepTraceD:
        scores, values, mask = self.heads(sequences)
        return StepTraceD(
            q=torch.sigmoid(scores.squeeze(-1)),
            v=values.squeeze(-1),
            mask=mask,
        )

    def forward(self, sequences: torch.Tensor) -> torch.Tensor:
        """Sentence scores D(y_1:T), shape (batch,)."""
        return sentence_score(self.step_scores(sequences))


def sentence_score(trace: StepTraceD) -> torch.Tensor:
    """Mean of Q_D over the unmasked positions of each sentence."""
    return masked_mean(trace.q, trace.mask)


def d_loss(real_scores: torch.Tensor, fake_scores: torch.Tensor) -> torch.Tensor:
    """
    mean(-log D(real)) + mean(-log(1 - D(fake))), probabilities floored
    before the logarithm.
    """
    if not torch.is_tensor(real_scores):
        real_scores = torch.tensor(real_scores, dtype=torch.get_default_dtype())
    if not torch.is_tensor(fake_scores):
        fake_scores = torch.tensor(fake_scores, dtype=torch.get_default_dtype())
    return -safe_log(real_scores).mean() - safe_log(1.0 - fake_scores).mean()


def d_critic_loss(trace: StepTraceD) -> torch.Tensor:
    """
    Squared error between the critic and the (constant) per-timestep scores,
    summed over unmasked positions and averaged over the batch.
    """
    error = (trace.q.detach() - trace.v) ** 2
    return (error * trace.mask).sum(dim=1).mean()
