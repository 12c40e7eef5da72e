from .stateful_backbone import (
    BACKBONE_KINDS,
    BackboneConfig,
    StatefulBackbone,
    init_gaussian_,
)
from .recurrent import RecurrentBackbone
from .attention import AttentionBackbone, AttentionBlock

_backbones = {
    "recurrent": RecurrentBackbone,
    "attention-masked": AttentionBackbone,
    "attention-unmasked": AttentionBackbone,
}


def build_backbone(config: BackboneConfig, input_size: int) -> StatefulBackbone:
    """
    Instantiate the backbone named by ``config.kind``.

    Parameters
    ----------
    config: BackboneConfig
        Architecture of the backbone.
    input_size: int
        Width of the per-timestep inputs it will receive.
    """
    try:
        backbone_class = _backbones[config.kind]
    except KeyError:
        raise ValueError(
            f"No backbone registered for kind `{config.kind}`, "
            f"available: {sorted(_backbones)}"
        )
    return backbone_class(config, input_size)
