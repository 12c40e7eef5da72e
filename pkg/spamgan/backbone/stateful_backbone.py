from dataclasses import dataclass
from typing import List, Optional

import torch
import torch.nn as nn

BACKBONE_KINDS = ("recurrent", "attention-masked", "attention-unmasked")


@dataclass
class BackboneConfig:
    """
    Architecture of a sequence feature extractor.

    Parameters:
        kind: ``recurrent`` (GRU stack), ``attention-masked`` (causal decoder
            blocks) or ``attention-unmasked`` (encoder blocks).
        num_layers: GRU layers or attention blocks. Full scale: 2 GRU layers, 12 blocks.
        hidden_size: width of the per-timestep states. Full scale: 1024 (generator
            GRU), 512 (discriminator GRU), 768 (attention).
        num_heads: attention heads; must divide ``hidden_size``. Full scale: 12.
        embedding_size: token embedding width. Full scale: 50 for the GRU models.
        feedforward_size: inner width of the attention feedforward. Full scale: 3072.
        max_positions: longest sequence the backbone accepts.
        embedding_dropout: dropout on token embeddings.
        core_dropout: dropout between GRU layers (one mask per sequence) or on
            the residual branches of attention blocks.
        head_dropout: dropout applied to the states before the output heads.
        init_std: standard deviation of the Gaussian weight initialisation.
    """

    kind: str = "recurrent"
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 2
    embedding_size: int = 32
    feedforward_size: int = 256
    max_positions: int = 64
    embedding_dropout: float = 0.2
    core_dropout: float = 0.1
    head_dropout: float = 0.2
    init_std: float = 0.02

    def __post_init__(self):
        if self.kind not in BACKBONE_KINDS:
            raise ValueError(f"Unknown backbone kind `{self.kind}`, expected one of {BACKBONE_KINDS}")
        if self.num_layers < 1:
            raise ValueError(f"num_layers must be at least 1, got {self.num_layers}")
        if self.kind != "recurrent" and self.hidden_size % self.num_heads != 0:
            raise ValueError(
                f"hidden_size {self.hidden_size} is not divisible by num_heads {self.num_heads}"
            )
        for name in ("embedding_dropout", "core_dropout", "head_dropout"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {rate}")

    @property
    def causal(self) -> bool:
        return self.kind != "attention-unmasked"


def init_gaussian_(module: nn.Module, std: float = 0.02) -> nn.Module:
    """
    Draw every weight of ``module`` from N(0, std), zero the biases and reset
    layer norms to identity. Uses the global torch RNG.
    """
    for sub in module.modules():
        if isinstance(sub, nn.LayerNorm):
            nn.init.ones_(sub.weight)
            nn.init.zeros_(sub.bias)
            continue
        for name, param in sub.named_parameters(recurse=False):
            if "bias" in name:
                nn.init.zeros_(param)
            else:
                nn.init.normal_(param, mean=0.0, std=std)
    return module


class StatefulBackbone(nn.Module):
    """
    Base class of the sequence feature extractors. Maps an embedded sequence
    (batch, time, input_size) to per-timestep states (batch, time, hidden_size).

    Besides the full-sequence :meth:`forward`, subclasses implement
    :meth:`step`, which consumes one timestep and keeps whatever it needs for
    the next one in buffers. These buffers are not parameters and are not saved
    with the model.

    Parameters:
        config: BackboneConfig
        input_size: width of the per-timestep input vectors.
        state_names: names of the buffers holding the decoding state.
    """

    def __init__(self, config: BackboneConfig, input_size: int, state_names: List[str]):
        super().__init__()
        self.config = config
        self.input_size = input_size
        self.hidden_size = config.hidden_size

        for state_name in state_names:
            self.register_buffer(state_name, torch.zeros((0)), persistent=False)

    def forward(
        self,
        inputs: torch.Tensor,
        padding_mask: Optional[torch.Tensor] = None,
        causal: Optional[bool] = None,
    ):
        """
        Not implemented - You need to implement a forward method in child class
        """
        raise NotImplementedError("No forward method has been implemented for this class")

    def step(self, inputs: torch.Tensor) -> torch.Tensor:
        """
        Not implemented - You need to implement a step method in child class
        """
        raise NotImplementedError("No step method has been implemented for this class")

    def check_length(self, length: int) -> None:
        if length > self.config.max_positions:
            raise ValueError(
                f"Sequence length {length} exceeds the backbone limit of "
                f"max_positions={self.config.max_positions}"
            )

    def is_state_initialised(self) -> bool:
        """
        Checks if buffers are of shape 0 and returns
        True only if none of them are.
        """
        for buffer in self.buffers():
            if buffer.shape == torch.Size([0]):
                return False
        return True

    def init_state_with_shape(self, shape) -> None:
        """
        Initialise all state buffers with zeros of a specific shape.
        """
        for name, buffer in list(self._buffers.items()):
            self.register_buffer(
                name, torch.zeros(shape, device=buffer.device), persistent=False
            )

    def reset_states(self) -> None:
        """
        Forget the decoding state. The next :meth:`step` starts a new sequence.
        """
        for name, buffer in list(self._buffers.items()):
            self.register_buffer(
                name, torch.zeros((0), device=buffer.device), persistent=False
            )

    def __repr__(self):
        return (
            f"{self.__class__.__name__}(kind={self.config.kind}, "
            f"num_layers={self.config.num_layers}, hidden_size={self.hidden_size})"
        )
