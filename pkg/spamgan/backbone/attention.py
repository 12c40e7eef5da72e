from typing import Optional

import torch
import torch.nn as nn

from .stateful_backbone import BackboneConfig, StatefulBackbone


class AttentionBlock(nn.Module):
    """
    Pre-normalisation transformer block: self-attention and a two-layer GELU
    feedforward, each on a residual branch with dropout.
    """

    def __init__(self, hidden_size: int, num_heads: int, feedforward_size: int, dropout: float):
        super().__init__()
        self.attention_norm = nn.LayerNorm(hidden_size)
        self.attention = nn.MultiheadAttention(hidden_size, num_heads, batch_first=True)
        self.feedforward_norm = nn.LayerNorm(hidden_size)
        self.feedforward = nn.Sequential(
            nn.Linear(hidden_size, feedforward_size),
            nn.GELU(),
            nn.Linear(feedforward_size, hidden_size),
        )
        self.residual_dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, blocked: Optional[torch.Tensor]) -> torch.Tensor:
        h = self.attention_norm(x)
        attended, _ = self.attention(h, h, h, attn_mask=blocked, need_weights=False)
        x = x + self.residual_dropout(attended)
        x = x + self.residual_dropout(self.feedforward(self.feedforward_norm(x)))
        return x


class AttentionBackbone(StatefulBackbone):
    """
    Stack of attention blocks over projected inputs plus learned position
    embeddings. ``attention-masked`` lets position t attend to positions <= t
    only (decoder); ``attention-unmasked`` attends over the whole sequence
    except padding (encoder).

    Parameters
    ----------
    config: BackboneConfig
        ``kind`` must be one of the attention kinds.
    input_size: int
        Width of the per-timestep inputs.
    """

    def __init__(self, config: BackboneConfig, input_size: int):
        super().__init__(config, input_size, state_names=["history"])
        if config.kind == "recurrent":
            raise ValueError("AttentionBackbone needs an attention kind")
        self.causal = config.causal
        self.input_projection = nn.Linear(input_size, config.hidden_size)
        self.position_embedding = nn.Embedding(config.max_positions, config.hidden_size)
        self.input_dropout = nn.Dropout(config.core_dropout)
        self.blocks = nn.ModuleList(
            [
                AttentionBlock(
                    config.hidden_size,
                    config.num_heads,
                    config.feedforward_size,
                    config.core_dropout,
                )
                for _ in range(config.num_layers)
            ]
        )
        self.final_norm = nn.LayerNorm(config.hidden_size)

    def _blocked_pairs(self, batch_size: int, time_steps: int, padding_mask, causal: bool, device):
        # True marks query/key pairs that may not attend.
        blocked = None
        if causal:
            blocked = torch.ones(time_steps, time_steps, dtype=torch.bool, device=device).triu(1)
        if padding_mask is not None and padding_mask.any():
            keys = padding_mask[:, None, :].expand(batch_size, time_steps, time_steps)
            blocked = keys if blocked is None else keys | blocked
            blocked = blocked.repeat_interleave(self.config.num_heads, dim=0)
        return blocked

    def forward(
        self,
        inputs: torch.Tensor,
        padding_mask: Optional[torch.Tensor] = None,
        causal: Optional[bool] = None,
    ):
        """
        Parameters:
            inputs: torch.Tensor
                Embedded sequence of shape (batch, time, input_size).
            padding_mask: torch.Tensor
                Optional (batch, time) bool tensor, True at padding. Padding
                positions are never attended to. The first position must not
                be padding.
            causal: bool
                Overrides the attention direction of the backbone kind. An
                encoder run with ``causal=True`` gives prefix-only states.

        Returns:
            torch.Tensor
                States of shape (batch, time, hidden_size).
        """
        batch_size, time_steps, _ = inputs.shape
        self.check_length(time_steps)

        positions = torch.arange(time_steps, device=inputs.device)
        x = self.input_projection(inputs) + self.position_embedding(positions)
        x = self.input_dropout(x)
        causal = self.causal if causal is None else causal
        blocked = self._blocked_pairs(batch_size, time_steps, padding_mask, causal, inputs.device)
        for block in self.blocks:
            x = block(x, blocked)
        return self.final_norm(x)

    def step(self, inputs: torch.Tensor) -> torch.Tensor:
        """
        Append one timestep of shape (batch, input_size) to the history and
        return the state at the newest position. Only causal backbones can be
        stepped.
        """
        if not self.causal:
            raise ValueError("Incremental decoding needs a causal (attention-masked) backbone")
        batch_size = inputs.shape[0]
        if not self.is_state_initialised() or self.history.shape[0] != batch_size:
            self.init_state_with_shape((batch_size, 0, self.input_size))
        self.history = torch.cat([self.history.to(inputs.dtype), inputs[:, None, :]], dim=1)
        return self.forward(self.history)[:, -1]
