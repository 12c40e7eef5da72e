import math

import pytest
import torch

from spamgan.classifier import ClassifierModel, StepTraceC
from spamgan.discriminator import DiscriminatorModel, StepTraceD
from spamgan.generator import GeneratorModel, NoiseSpec
from spamgan.numcore import ParamSet, default_dtype, grad_check
from spamgan.rl import (
    BlendTrace,
    alpha_weights,
    blend,
    policy_surrogate_loss,
    sentence_reward,
    step_blends,
)

from conftest import tiny_backbone


def test_blend_examples():
    assert math.isclose(blend(0.8, 0.4), 8 / 15, rel_tol=1e-6)
    assert blend(0.0, 0.0) == 0.0
    assert math.isclose(blend(1.0, 1.0), 1.0)
    assert math.isclose(sentence_reward(0.5, 0.5), 0.5)

    values = blend(torch.tensor([0.8, 0.0, 0.3]), torch.tensor([0.4, 0.0, 0.3]))
    assert torch.allclose(values, torch.tensor([8 / 15, 0.0, 0.3]))


def test_blend_is_symmetric_and_bounded():
    d, c = torch.rand(100), torch.rand(100)
    assert torch.allclose(blend(d, c), blend(c, d))
    assert (blend(d, c) <= torch.maximum(d, c) + 1e-6).all()
    assert (blend(d, c) >= torch.minimum(d, c) - 1e-6).all()


def test_alpha_weights():
    mask = torch.tensor([[True] * 5 + [False] * 2])
    assert alpha_weights(mask).tolist() == [[4, 3, 2, 1, 0, 0, 0]]
    assert alpha_weights(mask, "offset").tolist() == [[5, 4, 3, 2, 1, 0, 0]]
    with pytest.raises(ValueError):
        alpha_weights(mask, "reversed")


def _traces():
    mask = torch.tensor([[True, True, True], [True, True, False]])
    d_trace = StepTraceD(
        q=torch.tensor([[0.8, 0.6, 0.4], [0.5, 0.5, 0.9]]),
        v=torch.tensor([[0.7, 1.4, -0.2], [0.5, 0.5, 0.5]]),
        mask=mask,
    )
    spam = torch.tensor([[0.4, 0.6, 0.8], [0.2, 0.6, 0.1]])
    critic = torch.tensor([[0.4, 0.3, 0.5], [0.6, 0.5, 0.1]])
    c_trace = StepTraceC(
        q=torch.stack([1 - spam, spam], dim=-1),
        v=torch.stack([1 - critic, critic], dim=-1),
        mask=mask,
    )
    return d_trace, c_trace


def test_step_blends():
    d_trace, c_trace = _traces()
    classes = torch.tensor([1, 0])
    trace = step_blends(d_trace, c_trace, classes)

    assert math.isclose(float(trace.q[0, 0]), 8 / 15, rel_tol=1e-5)
    # Row 1 aims at non-spam: Q_C is 1 - spam score.
    assert math.isclose(float(trace.q[1, 0]), blend(0.5, 0.8), rel_tol=1e-5)
    # Critic values are clamped to [0, 1] before blending.
    assert math.isclose(float(trace.v[0, 1]), blend(1.0, 0.3), rel_tol=1e-5)
    assert float(trace.v[0, 2]) == 0.0
    assert (trace.q[1, 2] == 0) and (trace.advantages[1, 2] == 0)
    assert torch.allclose(trace.advantages, trace.q - trace.v)
    assert trace.alpha.tolist() == [[2, 1, 0], [1, 0, 0]]

    expected_reward = blend(0.6, 0.6)
    assert math.isclose(float(trace.reward[0]), expected_reward, rel_tol=1e-5)
    step_rewards = trace.step_rewards
    assert step_rewards[0, :2].tolist() == [0.0, 0.0]
    assert math.isclose(float(step_rewards[0, 2]), expected_reward, rel_tol=1e-5)
    assert step_rewards[1, 2] == 0 and step_rewards[1, 1] == trace.reward[1]


def test_step_blends_rejects_mismatched_traces():
    d_trace, c_trace = _traces()
    c_trace.mask = torch.ones_like(c_trace.mask)
    with pytest.raises(ValueError, match="padding"):
        step_blends(d_trace, c_trace, torch.tensor([1, 0]))

    d_trace, c_trace = _traces()
    short = StepTraceD(q=d_trace.q[:, :2], v=d_trace.v[:, :2], mask=d_trace.mask[:, :2])
    with pytest.raises(ValueError, match="shapes"):
        step_blends(short, c_trace, torch.tensor([1, 0]))


def test_policy_surrogate_loss_gradient_is_weighted_advantage():
    d_trace, c_trace = _traces()
    trace = step_blends(d_trace, c_trace, torch.tensor([1, 0]))
    log_probs = torch.full((2, 3), -1.0, requires_grad=True)
    loss = policy_surrogate_loss(trace, log_probs)
    loss.backward()
    expected = -(trace.alpha * trace.advantages * trace.mask) / 2
    assert torch.allclose(log_probs.grad, expected)

    with pytest.raises(ValueError):
        policy_surrogate_loss(trace, torch.zeros(2, 4))


@pytest.mark.parametrize("advantage", [0.5, -0.5])
def test_policy_step_follows_the_advantage(advantage):
    with default_dtype(torch.float64):
        torch.manual_seed(0)
        generator = GeneratorModel(5, tiny_backbone("recurrent"), NoiseSpec(2))
        sequences = torch.tensor([[0, 4, 3, 1]])
        z = generator.noise.sample(1)
        trace = BlendTrace(
            q=torch.zeros(1, 3),
            v=torch.zeros(1, 3),
            advantages=torch.tensor([[advantage, 0.0, 0.0]]),
            alpha=torch.ones(1, 3),
            reward=torch.zeros(1),
            mask=torch.ones(1, 3, dtype=torch.bool),
        )

        def log_probs():
            return generator.token_log_probs(sequences, sequences, 1, z)[0]

        before = float(log_probs()[0, 0])
        optimizer = torch.optim.SGD(generator.parameters(), lr=1e-3)
        policy_surrogate_loss(trace, log_probs()).backward()
        optimizer.step()
        after = float(log_probs()[0, 0])
    assert (after - before) * advantage > 0


@pytest.mark.parametrize("kind", ["recurrent", "attention-masked"])
def test_surrogate_gradient_through_generator(kind, sequences):
    with default_dtype(torch.float64):
        torch.manual_seed(0)
        generator = GeneratorModel(5, tiny_backbone(kind), NoiseSpec(2))
        scorer_kind = "recurrent" if kind == "recurrent" else "attention-unmasked"
        discriminator = DiscriminatorModel(5, tiny_backbone(scorer_kind))
        classifier = ClassifierModel(5, tiny_backbone(scorer_kind))
        classes = torch.tensor([1, 0, 1])
        z = generator.noise.sample(3)
        with torch.no_grad():
            trace = step_blends(
                discriminator.step_scores(sequences), classifier.step_scores(sequences), classes
            )
        params = ParamSet.from_module(generator)

        def loss_fn(_):
            log_probs, _ = generator.token_log_probs(sequences, sequences, classes, z)
            return policy_surrogate_loss(trace, log_probs)

        error = grad_check(loss_fn, params)
    assert error <= 1e-5
