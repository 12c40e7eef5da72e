import math

import pytest
import torch

from spamgan.discriminator import (
    DiscriminatorModel,
    StepTraceD,
    d_critic_loss,
    d_loss,
    sentence_score,
)
from spamgan.numcore import ParamSet, default_dtype, grad_check

from conftest import tiny_backbone

KINDS = ["recurrent", "attention-unmasked"]


def test_d_loss_at_chance():
    assert math.isclose(float(d_loss([0.5], [0.5])), 2 * math.log(2), rel_tol=1e-6)


def test_d_loss_is_floored():
    loss = d_loss(torch.tensor([0.0]), torch.tensor([1.0]))
    assert torch.isfinite(loss)
    assert loss > 50


def test_d_loss_keeps_dtype():
    real = torch.tensor([0.9], dtype=torch.float64)
    fake = torch.tensor([0.2], dtype=torch.float64)
    assert d_loss(real, fake).dtype == torch.float64


def test_sentence_score_masks_padding():
    trace = StepTraceD(
        q=torch.tensor([[0.2, 0.4, 0.9], [0.5, 0.1, 0.3]]),
        v=torch.zeros(2, 3),
        mask=torch.tensor([[True, True, False], [True, True, True]]),
    )
    assert torch.allclose(sentence_score(trace), torch.tensor([0.3, 0.3]))
    assert len(trace) == 3


def test_sentence_score_rejects_empty_sentence():
    trace = StepTraceD(q=torch.rand(1, 2), v=torch.zeros(1, 2), mask=torch.zeros(1, 2, dtype=torch.bool))
    with pytest.raises(ValueError, match="no unmasked"):
        sentence_score(trace)


@pytest.mark.parametrize("kind", KINDS)
def test_step_scores(kind, sequences):
    model = DiscriminatorModel(5, tiny_backbone(kind))
    trace = model.step_scores(sequences)
    assert trace.q.shape == trace.v.shape == trace.mask.shape == (3, 3)
    assert ((trace.q > 0) & (trace.q < 1)).all()
    assert trace.mask.tolist() == [[True, True, True], [True, True, False], [True, False, False]]
    assert model(sequences).shape == (3,)


@pytest.mark.parametrize("kind", KINDS)
def test_critic_values_only_see_the_prefix(kind):
    torch.manual_seed(0)
    model = DiscriminatorModel(5, tiny_backbone(kind)).eval()
    first = model.step_scores(torch.tensor([[0, 4, 3, 4]]))
    second = model.step_scores(torch.tensor([[0, 4, 3, 1]]))
    # The sentences differ in their last action only.
    assert torch.allclose(first.v, second.v, atol=1e-6)
    assert not torch.allclose(first.q[:, -1], second.q[:, -1])


@pytest.mark.parametrize("kind", KINDS)
def test_d_critic_loss_only_reaches_critic_head(kind, sequences):
    model = DiscriminatorModel(5, tiny_backbone(kind))
    d_critic_loss(model.step_scores(sequences)).backward()
    assert model.critic_head.weight.grad is not None
    assert model.critic_head.weight.grad.abs().sum() > 0
    for name, param in model.named_parameters():
        if not name.startswith("critic_head."):
            assert param.grad is None or (param.grad == 0).all(), name


def test_d_critic_loss_value():
    trace = StepTraceD(
        q=torch.tensor([[0.8, 0.6]]),
        v=torch.tensor([[0.5, 0.6]]),
        mask=torch.tensor([[True, True]]),
    )
    assert math.isclose(float(d_critic_loss(trace)), 0.09, rel_tol=1e-5)


def test_parameter_split(sequences):
    model = DiscriminatorModel(5, tiny_backbone("recurrent"))
    score = {id(p) for p in model.score_parameters()}
    critic = {id(p) for p in model.critic_parameters()}
    assert not score & critic
    assert score | critic == {id(p) for p in model.parameters()}


@pytest.mark.parametrize("kind", KINDS)
def test_d_loss_gradient(kind, sequences):
    with default_dtype(torch.float64):
        torch.manual_seed(0)
        model = DiscriminatorModel(5, tiny_backbone(kind))
        fakes = torch.tensor([[0, 3, 4, 4], [0, 4, 4, 1], [0, 3, 1, 2]])
        params = ParamSet.from_module(model, exclude_prefix="critic_head.")

        def loss_fn(_):
            return d_loss(model(sequences), model(fakes))

        error = grad_check(loss_fn, params)
    assert error <= 1e-5


@pytest.mark.parametrize("kind", KINDS)
def test_d_critic_loss_gradient(kind, sequences):
    with default_dtype(torch.float64):
        torch.manual_seed(0)
        model = DiscriminatorModel(5, tiny_backbone(kind))
        params = ParamSet.from_module(model.critic_head)
        error = grad_check(lambda _: d_critic_loss(model.step_scores(sequences)), params)
    assert error <= 1e-5
