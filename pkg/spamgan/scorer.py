from typing import Iterator, Optional

import torch
import torch.nn as nn

from .backbone import BackboneConfig, build_backbone, init_gaussian_
from .corpus import PAD_ID


def masked_mean(values: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """
    Mean of ``values`` (batch, steps, ...) over the unmasked steps of each row.
    Raises if a row has no unmasked step.
    """
    counts = mask.sum(dim=1)
    if (counts == 0).any():
        row = int((counts == 0).nonzero()[0, 0])
        raise ValueError(f"Sequence {row} has no unmasked position to score")
    weights = mask.to(values.dtype)
    while weights.dim() < values.dim():
        weights = weights.unsqueeze(-1)
    counts = counts.to(values.dtype)
    while counts.dim() < values.dim() - 1:
        counts = counts.unsqueeze(-1)
    return (values * weights).sum(dim=1) / counts


class SequenceScorer(nn.Module):
    """
    Shared trunk of the discriminator and the classifier: token embedding,
    backbone and two per-timestep heads. The score head reads the state after
    each action token; the critic head reads the state one position earlier,
    with gradients stopped at the trunk. Encoder backbones compute the critic
    states in an extra causally masked pass.

    Parameters
    ----------
    vocab_size: int
        Number of tokens.
    config: BackboneConfig
        Backbone architecture; ``recurrent`` or ``attention-unmasked``.
    score_size: int
        Output width of the score head.
    critic_size: int
        Output width of the critic head.
    """

    def __init__(self, vocab_size: int, config: BackboneConfig, score_size: int, critic_size: int):
        super().__init__()
        self.vocab_size = vocab_size
        self.config = config
        self.embedding = nn.Embedding(vocab_size, config.embedding_size)
        self.embedding_dropout = nn.Dropout(config.embedding_dropout)
        self.backbone = build_backbone(config, config.embedding_size)
        self.head_dropout = nn.Dropout(config.head_dropout)
        self.score_head = nn.Linear(config.hidden_size, score_size)
        self.critic_head = nn.Linear(config.hidden_size, critic_size)
        init_gaussian_(self, config.init_std)

    def states(self, sequences: torch.Tensor, causal: Optional[bool] = None) -> torch.Tensor:
        """
        Backbone states (batch, T, hidden) after head dropout. ``causal=True``
        restricts every state to its prefix, also for encoder backbones.
        """
        embedded = self.embedding_dropout(self.embedding(sequences))
        states = self.backbone(embedded, padding_mask=sequences == PAD_ID, causal=causal)
        return self.head_dropout(states)

    def heads(self, sequences: torch.Tensor):
        """
        Raw head outputs over the T - 1 action positions that follow
        ``<start>``.

        Returns:
            scores: torch.Tensor
                Score head on the states at positions 1..T-1.
            values: torch.Tensor
                Critic head on the detached states at positions 0..T-2. For
                encoder backbones these come from a separate causal pass, so
                the value at an action never sees that action.
            mask: torch.Tensor
                (batch, T - 1) bool, True at non-pad positions.
        """
        states = self.states(sequences)
        scores = self.score_head(states[:, 1:])
        if self.config.causal:
            prefix_states = states.detach()
        else:
            with torch.no_grad():
                prefix_states = self.states(sequences, causal=True)
        values = self.critic_head(prefix_states[:, :-1])
        return scores, values, sequences[:, 1:] != PAD_ID

    def score_parameters(self) -> Iterator[nn.Parameter]:
        """Everything except the critic head."""
        for name, param in self.named_parameters():
            if not name.startswith("critic_head."):
                yield param

    def critic_parameters(self) -> Iterator[nn.Parameter]:
        return self.critic_head.parameters()
