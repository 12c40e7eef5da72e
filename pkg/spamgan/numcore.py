"""
Numeric substrate shared by every model: normalisation and likelihood terms,
global-norm clipping, the Adam optimizer with decoupled weight decay, a
finite-difference gradient oracle and named random substreams.

All arrays are ``torch.Tensor``. Training runs in 32-bit; gradient checks
build their models inside :func:`default_dtype` with ``torch.float64``.
"""
import hashlib
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, Mapping, Optional, Tuple

import numpy as np
import torch

# Probabilities entering a logarithm are clamped to this floor.
PROB_FLOOR = 1e-12


class NonFiniteError(ValueError):
    """Raised when a value that must be finite is NaN or infinite."""


def _first_bad_element(values: torch.Tensor) -> int:
    bad = ~torch.isfinite(values)
    if values.dim() == 0:
        return 0
    per_element = bad.reshape(values.shape[0], -1).any(dim=1)
    return int(per_element.nonzero()[0, 0])


def softmax(logits: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """
    Normalise ``logits`` into a probability distribution along ``axis``.

    Parameters
    ----------
    logits: torch.Tensor
        Real valued scores. Must be finite.
    axis: int
        Dimension to normalise over.

    Returns
    -------
    torch.Tensor
        Non-negative tensor of the same shape that sums to one along ``axis``.
    """
    if not -logits.dim() <= axis < max(logits.dim(), 1):
        raise ValueError(f"axis {axis} is not valid for shape {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise NonFiniteError(
            f"softmax received non-finite logits in batch element "
            f"{_first_bad_element(logits)}"
        )
    return torch.softmax(logits, dim=axis)


def safe_log(probs: torch.Tensor) -> torch.Tensor:
    """Natural log with probabilities clamped at :data:`PROB_FLOOR`."""
    return torch.log(torch.clamp(probs, min=PROB_FLOOR))


def cross_entropy(predicted_dist: torch.Tensor, target_index) -> torch.Tensor:
    """
    Negative log-probability of ``target_index`` under ``predicted_dist``.

    Works on a single distribution (``target_index`` an int) or a batch of
    distributions of shape (..., V) with a matching long tensor of targets.
    """
    if not torch.is_tensor(target_index):
        target_index = torch.tensor(target_index, device=predicted_dist.device)
    picked = predicted_dist.gather(-1, target_index.unsqueeze(-1)).squeeze(-1)
    return -safe_log(picked)


def entropy(dist: torch.Tensor, axis: int = -1) -> torch.Tensor:
    """Shannon entropy in nats along ``axis``; zero-probability entries add nothing."""
    return -(dist * safe_log(dist)).sum(dim=axis)


class ParamSet(dict):
    """
    Named parameters iterated in lexicographic order of their names.

    Parameters
    ----------
    named: iterable of (name, tensor)
        The parameters. Names must be unique.
    seed: int or None
        The seed the parameters were initialised from, if known.
    """

    def __init__(self, named: Iterable[Tuple[str, torch.Tensor]] = (), seed=None):
        named = list(named)
        names = [name for name, _ in named]
        if len(set(names)) != len(names):
            duplicates = sorted({n for n in names if names.count(n) > 1})
            raise ValueError(f"Duplicate parameter names: {duplicates}")
        super().__init__(sorted(named, key=lambda item: item[0]))
        self.seed = seed

    @classmethod
    def from_module(cls, module: torch.nn.Module, seed=None, exclude_prefix=None):
        named = [
            (name, param)
            for name, param in module.named_parameters()
            if exclude_prefix is None or not name.startswith(exclude_prefix)
        ]
        return cls(named, seed=seed)

    def gradients(self) -> Dict[str, Optional[torch.Tensor]]:
        return {name: param.grad for name, param in self.items()}

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {name: param.detach().clone() for name, param in self.items()}


def clip_global_norm(
    gradients: Mapping[str, Optional[torch.Tensor]], max_norm: float
) -> Dict[str, Optional[torch.Tensor]]:
    """
    Rescale a set of gradients so that their joint L2 norm is at most ``max_norm``.

    All gradients are multiplied by the same factor ``max_norm / g`` when the
    global norm ``g`` exceeds ``max_norm`` and returned unchanged otherwise.
    Missing gradients (``None``) are passed through.
    """
    if max_norm <= 0:
        raise ValueError(f"max_norm must be positive, got {max_norm}")
    present = [g for g in gradients.values() if g is not None]
    if not present:
        return dict(gradients)
    total = torch.stack([g.detach().double().norm() for g in present]).norm()
    if total <= max_norm:
        return dict(gradients)
    scale = max_norm / float(total)
    return {
        name: None if grad is None else grad * scale
        for name, grad in gradients.items()
    }


@dataclass
class OptimState:
    """
    Moment accumulators and hyper-parameters of :func:`adam_step`.

    ``betas`` and ``eps`` are the conventional Adam defaults. ``clip_norm``,
    when set, clips the incoming gradients by global norm before the update.
    """

    lr: float = 1e-3
    weight_decay: float = 0.0
    clip_norm: Optional[float] = None
    betas: Tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: Dict[str, torch.Tensor] = field(default_factory=dict)
    exp_avg_sq: Dict[str, torch.Tensor] = field(default_factory=dict)


@torch.no_grad()
def _adam_update(param, grad, exp_avg, exp_avg_sq, step, lr, betas, eps, weight_decay):
    beta1, beta2 = betas
    exp_avg.mul_(beta1).add_(grad, alpha=1 - beta1)
    exp_avg_sq.mul_(beta2).addcmul_(grad, grad, value=1 - beta2)
    bias_correction1 = 1 - beta1**step
    bias_correction2 = 1 - beta2**step
    denom = (exp_avg_sq / bias_correction2).sqrt().add_(eps)
    param.addcdiv_(exp_avg, denom, value=-lr / bias_correction1)
    # Decoupled decay, applied after the moment update.
    if weight_decay:
        param.mul_(1 - lr * weight_decay)


def adam_step(
    params: ParamSet,
    gradients: Mapping[str, Optional[torch.Tensor]],
    state: OptimState,
) -> ParamSet:
    """
    One bias-corrected Adam update followed by decoupled weight decay
    ``params <- params * (1 - lr * wd)``. Parameters are updated in place and
    returned. Parameters without a gradient are left untouched.
    """
    if state.clip_norm is not None:
        gradients = clip_global_norm(gradients, state.clip_norm)
    state.step += 1
    for name, param in params.items():
        grad = gradients.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ValueError(
                f"Gradient for `{name}` has shape {tuple(grad.shape)}, "
                f"parameter has {tuple(param.shape)}"
            )
        exp_avg = state.exp_avg.setdefault(name, torch.zeros_like(param))
        exp_avg_sq = state.exp_avg_sq.setdefault(name, torch.zeros_like(param))
        _adam_update(
            param,
            grad,
            exp_avg,
            exp_avg_sq,
            state.step,
            state.lr,
            state.betas,
            state.eps,
            state.weight_decay,
        )
    return params


class DecoupledAdam(torch.optim.Optimizer):
    """
    ``torch.optim`` front end to :func:`adam_step`, so the trainer can hold one
    optimizer per parameter group.

    Parameters
    ----------
    params: iterable of torch.nn.Parameter
        Parameters to optimise.
    lr: float
        Learning rate.
    weight_decay: float
        Decoupled weight decay coefficient, applied after the Adam update.
    betas: Tuple[float, float]
        Moment decay rates.
    eps: float
        Denominator guard.
    """

    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        if lr <= 0:
            raise ValueError(f"Invalid learning rate: {lr}")
        if weight_decay < 0:
            raise ValueError(f"Invalid weight decay: {weight_decay}")
        defaults = dict(lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)
        super().__init__(params, defaults)

    @torch.no_grad()
    def step(self, closure: Optional[Callable] = None):
        loss = None
        if closure is not None:
            with torch.enable_grad():
                loss = closure()
        for group in self.param_groups:
            for param in group["params"]:
                if param.grad is None:
                    continue
                state = self.state[param]
                if not state:
                    state["step"] = 0
                    state["exp_avg"] = torch.zeros_like(param)
                    state["exp_avg_sq"] = torch.zeros_like(param)
                state["step"] += 1
                _adam_update(
                    param,
                    param.grad,
                    state["exp_avg"],
                    state["exp_avg_sq"],
                    state["step"],
                    group["lr"],
                    group["betas"],
                    group["eps"],
                    group["weight_decay"],
                )
        return loss


def grad_check(
    loss_fn: Callable[[ParamSet], torch.Tensor],
    params: ParamSet,
    step: float = 1e-4,
    floor: float = 1e-8,
) -> float:
    """
    Compare autograd gradients against central finite differences.

    Parameters
    ----------
    loss_fn: Callable
        Deterministic function of ``params`` returning a scalar tensor.
    params: ParamSet
        Leaf tensors with ``requires_grad``; should be 64-bit.
    step: float
        Finite-difference step.
    floor: float
        Lower bound on the denominator of the relative error.

    Returns
    -------
    float
        ``max |analytic - numeric| / max(floor, |numeric|)`` over all coordinates.
    """
    tensors = list(params.values())
    loss = loss_fn(params)
    if not torch.isfinite(loss).all():
        raise NonFiniteError(f"grad_check loss is not finite: {float(loss)}")
    if loss.requires_grad:
        analytic = torch.autograd.grad(loss, tensors, allow_unused=True)
    else:
        analytic = [None] * len(tensors)
    analytic = [
        torch.zeros_like(t) if g is None else g.detach()
        for t, g in zip(tensors, analytic)
    ]

    worst = 0.0
    with torch.no_grad():
        for tensor, grad in zip(tensors, analytic):
            flat = tensor.view(-1)
            flat_grad = grad.reshape(-1)
            for index in range(flat.numel()):
                original = flat[index].item()
                flat[index] = original + step
                plus = float(loss_fn(params))
                flat[index] = original - step
                minus = float(loss_fn(params))
                flat[index] = original
                if not (np.isfinite(plus) and np.isfinite(minus)):
                    raise NonFiniteError("grad_check loss is not finite under perturbation")
                numeric = (plus - minus) / (2 * step)
                error = abs(flat_grad[index].item() - numeric) / max(floor, abs(numeric))
                worst = max(worst, error)
    return worst


@contextmanager
def default_dtype(dtype: torch.dtype):
    """Temporarily switch ``torch``'s default floating point type."""
    previous = torch.get_default_dtype()
    torch.set_default_dtype(dtype)
    try:
        yield
    finally:
        torch.set_default_dtype(previous)


@contextmanager
def evaluating(*modules: torch.nn.Module):
    """
    Put ``modules`` in evaluation mode for the duration of the block and
    restore their previous modes afterwards.
    """
    previous = [module.training for module in modules]
    for module in modules:
        module.eval()
    try:
        yield
    finally:
        for module, mode in zip(modules, previous):
            module.train(mode)


class RngStreams:
    """
    Named, order-stable random substreams derived from one root seed.

    Each name (any tuple of str/int parts) maps to its own seed through
    ``numpy.random.SeedSequence``, so adding a new consumer never shifts the
    numbers another consumer sees.

    Usage:
        >>> streams = RngStreams(0)
        >>> gen = streams.generator("sample", epoch, batch)
        >>> with streams.fork("dropout", "pretrain-g", epoch):
        ...     loss = model(...)
    """

    def __init__(self, root_seed: int):
        if root_seed < 0:
            raise ValueError(f"root seed must be non-negative, got {root_seed}")
        self.root_seed = int(root_seed)

    def seed(self, *names) -> int:
        key = "/".join(str(name) for name in names).encode()
        digest = np.frombuffer(hashlib.sha256(key).digest()[:16], dtype="<u4")
        sequence = np.random.SeedSequence(
            self.root_seed, spawn_key=tuple(int(word) for word in digest)
        )
        return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))

    def generator(self, *names) -> torch.Generator:
        gen = torch.Generator()
        gen.manual_seed(self.seed(*names))
        return gen

    def numpy(self, *names) -> np.random.Generator:
        return np.random.default_rng(self.seed(*names))

    @contextmanager
    def fork(self, *names):
        """Run a block with the global torch RNG (dropout masks, init) seeded from ``names``."""
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed(*names))
            yield
