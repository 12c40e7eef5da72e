import math

import pytest
import torch

from spamgan.numcore import (
    DecoupledAdam,
    NonFiniteError,
    OptimState,
    ParamSet,
    RngStreams,
    adam_step,
    clip_global_norm,
    cross_entropy,
    default_dtype,
    entropy,
    grad_check,
    softmax,
)


def test_softmax_normalises():
    logits = torch.randn(3, 5, 7)
    for axis in (0, 1, -1):
        dist = softmax(logits, axis=axis)
        assert dist.shape == logits.shape
        assert (dist >= 0).all()
        assert torch.allclose(dist.sum(dim=axis), torch.ones(()))


def test_softmax_invalid_axis():
    with pytest.raises(ValueError):
        softmax(torch.zeros(2, 3), axis=2)


def test_softmax_non_finite_names_element():
    logits = torch.zeros(4, 3)
    logits[2, 1] = float("nan")
    with pytest.raises(NonFiniteError, match="element 2"):
        softmax(logits)


def test_cross_entropy_and_entropy():
    dist = torch.tensor([0.5, 0.25, 0.25])
    assert math.isclose(float(cross_entropy(dist, 0)), math.log(2), rel_tol=1e-6)
    assert math.isclose(float(cross_entropy(dist, 2)), math.log(4), rel_tol=1e-6)

    batch = torch.tensor([[0.5, 0.5], [0.9, 0.1]])
    losses = cross_entropy(batch, torch.tensor([1, 0]))
    assert torch.allclose(losses, torch.tensor([math.log(2), -math.log(0.9)]))

    assert math.isclose(float(entropy(torch.full((4,), 0.25))), math.log(4), rel_tol=1e-6)
    assert float(entropy(torch.tensor([1.0, 0.0]))) == 0.0


def test_param_set_sorted_and_unique():
    params = ParamSet([("b", torch.zeros(1)), ("a", torch.ones(2))])
    assert list(params) == ["a", "b"]
    with pytest.raises(ValueError, match="Duplicate"):
        ParamSet([("a", torch.zeros(1)), ("a", torch.zeros(1))])


def test_param_set_from_module_excludes_prefix():
    module = torch.nn.Sequential(torch.nn.Linear(2, 2), torch.nn.Linear(2, 1))
    params = ParamSet.from_module(module, exclude_prefix="1.")
    assert list(params) == ["0.bias", "0.weight"]


def test_clip_global_norm():
    grads = {"a": torch.tensor([3.0]), "b": torch.tensor([4.0]), "c": None}
    clipped = clip_global_norm(grads, 1.0)
    assert torch.allclose(clipped["a"], torch.tensor([0.6]))
    assert torch.allclose(clipped["b"], torch.tensor([0.8]))
    assert clipped["c"] is None

    unchanged = clip_global_norm(grads, 10.0)
    assert torch.equal(unchanged["a"], grads["a"])

    with pytest.raises(ValueError):
        clip_global_norm(grads, 0.0)


def test_adam_step_decoupled_decay():
    params = ParamSet([("w", torch.tensor([1.0], dtype=torch.float64))])
    state = OptimState(lr=0.1, weight_decay=0.5)
    adam_step(params, {"w": torch.tensor([1.0], dtype=torch.float64)}, state)
    # Bias-corrected first step moves by lr, then decays by (1 - lr * wd).
    expected = (1.0 - 0.1 / (1.0 + 1e-8)) * (1.0 - 0.05)
    assert math.isclose(float(params["w"]), expected, rel_tol=1e-12)
    assert state.step == 1


def test_adam_step_without_gradient_leaves_parameter():
    params = ParamSet([("w", torch.tensor([1.0]))])
    adam_step(params, {"w": None}, OptimState(lr=0.1, weight_decay=0.5))
    assert float(params["w"]) == 1.0


def test_decoupled_adam_matches_adam_step():
    torch.manual_seed(0)
    reference = torch.randn(5, dtype=torch.float64)
    grads = [torch.randn(5, dtype=torch.float64) for _ in range(3)]

    param = torch.nn.Parameter(reference.clone())
    optimizer = DecoupledAdam([param], lr=0.01, weight_decay=0.1)
    functional = ParamSet([("p", reference.clone())])
    state = OptimState(lr=0.01, weight_decay=0.1)
    for grad in grads:
        param.grad = grad.clone()
        optimizer.step()
        adam_step(functional, {"p": grad}, state)

    assert torch.allclose(param.detach(), functional["p"], atol=1e-12)


@pytest.mark.parametrize("lr,weight_decay", [(0.0, 0.0), (1e-3, -1.0)])
def test_decoupled_adam_rejects_bad_settings(lr, weight_decay):
    with pytest.raises(ValueError):
        DecoupledAdam([torch.nn.Parameter(torch.zeros(1))], lr=lr, weight_decay=weight_decay)


def test_grad_check_quadratic():
    with default_dtype(torch.float64):
        params = ParamSet([("x", torch.randn(4, requires_grad=True))])
        error = grad_check(lambda p: (p["x"] ** 2).sum() + p["x"].prod(), params)
    assert error < 1e-6


def test_grad_check_detects_wrong_gradient():
    with default_dtype(torch.float64):
        params = ParamSet([("x", torch.tensor([1.0, 2.0], requires_grad=True))])

        def loss_fn(p):
            # Gradient is blocked, so autograd reports zero for a non-zero slope.
            return (p["x"].detach() * 3.0).sum() + 0.0 * p["x"].sum()

        error = grad_check(loss_fn, params)
    assert error > 0.5


def test_default_dtype_restores():
    previous = torch.get_default_dtype()
    with default_dtype(torch.float64):
        assert torch.zeros(1).dtype == torch.float64
    assert torch.get_default_dtype() == previous


def test_rng_streams_are_named_and_stable():
    streams = RngStreams(7)
    assert streams.seed("a", 1) == RngStreams(7).seed("a", 1)
    assert streams.seed("a", 1) != streams.seed("a", 2)
    assert streams.seed("a", 1) != RngStreams(8).seed("a", 1)

    first = torch.rand(3, generator=streams.generator("x"))
    second = torch.rand(3, generator=streams.generator("x"))
    assert torch.equal(first, second)
    assert streams.numpy("y").integers(1000) == RngStreams(7).numpy("y").integers(1000)

    with pytest.raises(ValueError):
        RngStreams(-1)


def test_rng_fork_isolates_global_state():
    torch.manual_seed(123)
    expected = torch.rand(2)

    torch.manual_seed(123)
    streams = RngStreams(0)
    with streams.fork("dropout", 0):
        inside = torch.rand(2)
    after = torch.rand(2)
    with streams.fork("dropout", 0):
        repeated = torch.rand(2)

    assert torch.equal(after, expected)
    assert torch.equal(inside, repeated)
