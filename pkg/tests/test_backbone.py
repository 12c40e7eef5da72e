import pytest
import torch
import torch.nn as nn

from spamgan.backbone import (
    AttentionBackbone,
    BackboneConfig,
    RecurrentBackbone,
    build_backbone,
    init_gaussian_,
)
from spamgan.backbone.functional import gru_forward
from spamgan.numcore import ParamSet, default_dtype, grad_check

from conftest import tiny_backbone


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked", "attention-unmasked"])
def test_backbone_output_shape(kind):
    backbone = build_backbone(tiny_backbone(kind, max_positions=6), input_size=3)
    out = backbone(torch.rand(2, 5, 3))
    assert out.shape == (2, 5, 4)
    assert torch.isnan(out).sum() == 0
    # Make sure __repr__ works
    repr(backbone)


def test_backbone_config_validation():
    with pytest.raises(ValueError):
        BackboneConfig(kind="lstm")
    with pytest.raises(ValueError):
        BackboneConfig(kind="attention-masked", hidden_size=5, num_heads=2)
    with pytest.raises(ValueError):
        BackboneConfig(core_dropout=1.0)
    assert BackboneConfig(kind="recurrent").causal
    assert BackboneConfig(kind="attention-masked").causal
    assert not BackboneConfig(kind="attention-unmasked").causal


def test_attention_backbone_rejects_recurrent_kind():
    with pytest.raises(ValueError):
        AttentionBackbone(tiny_backbone("recurrent"), input_size=3)


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked", "attention-unmasked"])
def test_length_limit(kind):
    backbone = build_backbone(tiny_backbone(kind, max_positions=4), input_size=3)
    with pytest.raises(ValueError, match="max_positions"):
        backbone(torch.rand(1, 5, 3))


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked"])
def test_step_reproduces_forward(kind):
    torch.manual_seed(0)
    backbone = build_backbone(tiny_backbone(kind, max_positions=6), input_size=3)
    backbone.eval()
    inputs = torch.rand(2, 6, 3)
    with torch.no_grad():
        full = backbone(inputs)
        stepped = torch.stack([backbone.step(inputs[:, t]) for t in range(6)], dim=1)
    assert torch.allclose(full, stepped, atol=1e-5)


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked"])
def test_causal_backbones_ignore_future(kind):
    torch.manual_seed(0)
    backbone = build_backbone(tiny_backbone(kind, max_positions=6), input_size=3)
    inputs = torch.rand(1, 6, 3)
    changed = inputs.clone()
    changed[:, 4:] = torch.rand(1, 2, 3)
    assert torch.allclose(backbone(inputs)[:, :4], backbone(changed)[:, :4], atol=1e-6)


def test_unmasked_backbone_sees_future():
    torch.manual_seed(0)
    backbone = build_backbone(tiny_backbone("attention-unmasked", max_positions=6), input_size=3)
    inputs = torch.rand(1, 6, 3)
    changed = inputs.clone()
    changed[:, 5] += 1.0
    assert not torch.allclose(backbone(inputs)[:, 0], backbone(changed)[:, 0])
    with pytest.raises(ValueError):
        backbone.step(inputs[:, 0])


def test_unmasked_backbone_with_causal_override_ignores_future():
    torch.manual_seed(0)
    backbone = build_backbone(tiny_backbone("attention-unmasked", max_positions=6), input_size=3)
    inputs = torch.rand(1, 6, 3)
    changed = inputs.clone()
    changed[:, 4:] = torch.rand(1, 2, 3)
    first = backbone(inputs, causal=True)[:, :4]
    second = backbone(changed, causal=True)[:, :4]
    assert torch.allclose(first, second, atol=1e-6)


@pytest.mark.parametrize("kind", ["attention-masked", "attention-unmasked"])
def test_padding_keys_are_ignored(kind):
    torch.manual_seed(0)
    backbone = build_backbone(tiny_backbone(kind, max_positions=6), input_size=3)
    inputs = torch.rand(1, 6, 3)
    padding = torch.tensor([[False, False, False, True, True, True]])
    changed = inputs.clone()
    changed[:, 3:] = torch.rand(1, 3, 3)
    first = backbone(inputs, padding_mask=padding)[:, :3]
    second = backbone(changed, padding_mask=padding)[:, :3]
    assert torch.allclose(first, second, atol=1e-6)


def test_reset_states():
    backbone = build_backbone(tiny_backbone("recurrent"), input_size=3)
    assert not backbone.is_state_initialised()
    assert backbone.hidden.shape == torch.zeros((0)).shape

    backbone.step(torch.rand(2, 3))
    assert backbone.is_state_initialised()
    assert backbone.hidden.shape == (1, 2, 4)

    backbone.reset_states()
    assert not backbone.is_state_initialised()

    # A new batch size starts a new state.
    backbone.step(torch.rand(2, 3))
    backbone.step(torch.rand(5, 3))
    assert backbone.hidden.shape == (1, 5, 4)


def test_states_are_not_saved():
    backbone = build_backbone(tiny_backbone("attention-masked"), input_size=3)
    backbone.step(torch.rand(2, 3))
    assert "history" not in backbone.state_dict()


def test_gru_stack_matches_torch_gru():
    torch.manual_seed(0)
    config = tiny_backbone("recurrent", num_layers=2, hidden_size=5)
    backbone = RecurrentBackbone(config, input_size=3)
    reference = nn.GRU(3, 5, num_layers=2, batch_first=True)
    with torch.no_grad():
        for layer, cell in enumerate(backbone.cells):
            getattr(reference, f"weight_ih_l{layer}").copy_(cell.weight_ih)
            getattr(reference, f"weight_hh_l{layer}").copy_(cell.weight_hh)
            getattr(reference, f"bias_ih_l{layer}").copy_(cell.bias_ih)
            getattr(reference, f"bias_hh_l{layer}").copy_(cell.bias_hh)
    inputs = torch.rand(2, 4, 3)
    expected, _ = reference(inputs)
    assert torch.allclose(backbone(inputs), expected, atol=1e-6)


def test_variational_dropout_mask_is_shared_over_time():
    config = tiny_backbone("recurrent", num_layers=2, core_dropout=0.5)
    backbone = RecurrentBackbone(config, input_size=3)
    masks = backbone._dropout_masks(4, torch.zeros(1))
    assert len(masks) == 1
    assert masks[0].shape == (4, 4)
    assert set(masks[0].unique().tolist()) <= {0.0, 2.0}

    state = backbone.initial_state(4, torch.zeros(1))
    outputs, state = gru_forward(torch.rand(4, 3, 3), state, backbone.cells, masks)
    assert outputs.shape == (4, 3, 4)
    assert state["hidden"].shape == (2, 4, 4)

    backbone.eval()
    assert backbone._dropout_masks(4, torch.zeros(1)) is None


def test_init_gaussian():
    torch.manual_seed(0)
    module = nn.Sequential(nn.Linear(50, 40), nn.LayerNorm(40))
    init_gaussian_(module, std=0.02)
    assert (module[0].bias == 0).all()
    assert abs(module[0].weight.std().item() - 0.02) < 0.002
    assert (module[1].weight == 1).all()


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked", "attention-unmasked"])
def test_backbone_gradient(kind):
    with default_dtype(torch.float64):
        torch.manual_seed(0)
        backbone = build_backbone(tiny_backbone(kind), input_size=3)
        inputs = torch.rand(2, 4, 3)
        weights = torch.randn(2, 4, 4)
        params = ParamSet.from_module(backbone)
        error = grad_check(lambda _: (backbone(inputs) * weights).sum(), params)
    assert error <= 1e-5
