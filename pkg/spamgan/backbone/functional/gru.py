import torch
from typing import Optional, Sequence


def gru_forward_single(
    input_data: torch.Tensor,
    state: dict,
    cells: Sequence[torch.nn.GRUCell],
    dropout_masks: Optional[Sequence[torch.Tensor]] = None,
):
    # hidden: (num_layers, batch, hidden)
    layer_input = input_data
    new_hidden = []
    for layer, cell in enumerate(cells):
        if layer > 0 and dropout_masks is not None:
            layer_input = layer_input * dropout_masks[layer - 1]
        hidden = cell(layer_input, state["hidden"][layer])
        new_hidden.append(hidden)
        layer_input = hidden

    state = state.copy()
    state["hidden"] = torch.stack(new_hidden)
    return layer_input, state


def gru_forward(
    input_data: torch.Tensor,
    state: dict,
    cells: Sequence[torch.nn.GRUCell],
    dropout_masks: Optional[Sequence[torch.Tensor]] = None,
):
    n_time_steps = input_data.shape[1]

    outputs = []
    for step in range(n_time_steps):
        output, state = gru_forward_single(
            input_data=input_data[:, step],
            state=state,
            cells=cells,
            dropout_masks=dropout_masks,
        )
        outputs.append(output)

    return torch.stack(outputs, 1), state
