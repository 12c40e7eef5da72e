from typing import List, Optional

import torch
import torch.nn as nn

from . import functional
from .stateful_backbone import BackboneConfig, StatefulBackbone


class RecurrentBackbone(StatefulBackbone):
    """
    Unidirectional stack of gated recurrent units.

    Per layer and timestep:

    .. math ::
        r_t = \\sigma(W_r x_t + U_r h_{t-1}), \\quad u_t = \\sigma(W_u x_t + U_u h_{t-1})

        n_t = \\tanh(W_n x_t + r_t \\odot U_n h_{t-1}), \\quad h_t = (1 - u_t) n_t + u_t h_{t-1}

    The initial state is zero. In training mode the outputs of every layer but
    the last are multiplied by a dropout mask that is drawn once per sequence
    and reused at every timestep (variational dropout, rate ``core_dropout``).
    Positions are not used; order is carried by the recurrence.

    Parameters
    ----------
    config: BackboneConfig
        Must have ``kind="recurrent"``.
    input_size: int
        Width of the per-timestep inputs.
    """

    def __init__(self, config: BackboneConfig, input_size: int):
        super().__init__(config, input_size, state_names=["hidden"])
        self.cells = nn.ModuleList(
            [
                nn.GRUCell(input_size if layer == 0 else config.hidden_size, config.hidden_size)
                for layer in range(config.num_layers)
            ]
        )

    def _dropout_masks(self, batch_size: int, like: torch.Tensor) -> Optional[List[torch.Tensor]]:
        rate = self.config.core_dropout
        if not self.training or rate == 0.0 or len(self.cells) < 2:
            return None
        keep = torch.full(
            (batch_size, self.hidden_size), 1.0 - rate, dtype=like.dtype, device=like.device
        )
        return [torch.bernoulli(keep) / (1.0 - rate) for _ in range(len(self.cells) - 1)]

    def initial_state(self, batch_size: int, like: torch.Tensor) -> dict:
        return {
            "hidden": torch.zeros(
                (len(self.cells), batch_size, self.hidden_size),
                dtype=like.dtype,
                device=like.device,
            )
        }

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
                Ignored; states after the content are masked by the callers.
            causal: bool
                Ignored; the recurrence only ever sees the prefix.

        Returns:
            torch.Tensor
                States of the last layer, shape (batch, time, hidden_size).
        """
        batch_size, time_steps, _ = inputs.shape
        self.check_length(time_steps)

        outputs, _ = functional.gru_forward(
            input_data=inputs,
            state=self.initial_state(batch_size, inputs),
            cells=self.cells,
            dropout_masks=self._dropout_masks(batch_size, inputs),
        )
        return outputs

    def step(self, inputs: torch.Tensor) -> torch.Tensor:
        """
        Consume one timestep of shape (batch, input_size) and return the state
        of the last layer. No dropout is applied.
        """
        batch_size = inputs.shape[0]
        if not self.is_state_initialised() or self.hidden.shape[1] != batch_size:
            self.init_state_with_shape((len(self.cells), batch_size, self.hidden_size))

        output, state = functional.gru_forward_single(
            input_data=inputs,
            state={"hidden": self.hidden.to(inputs.dtype)},
            cells=self.cells,
        )
        self.hidden = state["hidden"]
        return output
