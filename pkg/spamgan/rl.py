"""
Reward shaping for the generator: the harmonic blend of discriminator and
classifier scores, per-timestep blended Q and V with advantages and their
weights, and the surrogate loss whose gradient is the policy gradient.
"""
from dataclasses import dataclass

import torch

from . import classifier, discriminator
from .classifier import StepTraceC
from .discriminator import StepTraceD

ALPHA_VARIANTS = ("as-printed", "offset")

# blend() returns 0 when d + c falls below this guard.
BLEND_GUARD = 1e-12


def blend(d_value, c_value):
    """
    Harmonic mean ``2 d c / (d + c)`` of two scores in [0, 1], elementwise.
    Python floats in give a float out.
    """
    as_float = not torch.is_tensor(d_value) and not torch.is_tensor(c_value)
    if not torch.is_tensor(d_value):
        d_value = torch.tensor(float(d_value), dtype=torch.get_default_dtype())
    if not torch.is_tensor(c_value):
        c_value = torch.tensor(float(c_value), dtype=torch.get_default_dtype())
    total = d_value + c_value
    degenerate = total < BLEND_GUARD
    safe_total = torch.where(degenerate, torch.ones_like(total), total)
    blended = torch.where(
        degenerate, torch.zeros_like(total), 2.0 * d_value * c_value / safe_total
    )
    return float(blended) if as_float else blended


def sentence_reward(d_score, c_score):
    """Sentence reward R, delivered at the final timestep; every other step gets 0."""
    return blend(d_score, c_score)


@dataclass
class BlendTrace:
    """
    Blended per-timestep quantities of a batch of generated sentences. All
    tensors are detached.

    Attributes:
        q: (batch, steps) blended scores Q(y_1:t, c).
        v: (batch, steps) blended critic values V(y_1:t-1, c).
        advantages: (batch, steps) ``q - v``, zero at padding.
        alpha: (batch, steps) weights ``T_eff - t`` (``+ 1`` for the offset
            variant), zero at padding.
        reward: (batch,) sentence reward R.
        mask: (batch, steps) bool, True at non-pad positions.
    """

    q: torch.Tensor
    v: torch.Tensor
    advantages: torch.Tensor
    alpha: torch.Tensor
    reward: torch.Tensor
    mask: torch.Tensor

    @property
    def step_rewards(self) -> torch.Tensor:
        """R placed at the last unmasked position of each sentence, zero elsewhere."""
        rewards = torch.zeros_like(self.q)
        last = self.mask.sum(dim=1) - 1
        rewards[torch.arange(rewards.shape[0]), last] = self.reward
        return rewards


def alpha_weights(mask: torch.Tensor, variant: str = "as-printed") -> torch.Tensor:
    """
    Reversed ramp over the unmasked positions: ``T_eff - t`` for t = 1..T_eff,
    so the final emitted token gets weight 0. ``offset`` adds one.
    """
    if variant not in ALPHA_VARIANTS:
        raise ValueError(f"Unknown alpha variant `{variant}`, expected one of {ALPHA_VARIANTS}")
    effective = mask.sum(dim=1, keepdim=True)
    positions = torch.arange(1, mask.shape[1] + 1, device=mask.device)[None, :]
    alpha = effective - positions
    if variant == "offset":
        alpha = alpha + 1
    return (alpha.clamp(min=0) * mask).to(torch.get_default_dtype())


@torch.no_grad()
def step_blends(
    d_trace: StepTraceD,
    c_trace: StepTraceC,
    classes,
    alpha_variant: str = "as-printed",
) -> BlendTrace:
    """
    Combine discriminator and classifier traces of the same sentences.

    Q_t blends Q_D and Q_C(., c); V_t blends V_D and V_C(., c) after clamping
    both critics to [0, 1]. Advantages and weights are zero at padding.
    """
    if len(d_trace) != len(c_trace) or d_trace.q.shape[0] != c_trace.q.shape[0]:
        raise ValueError(
            f"Trace shapes differ: discriminator {tuple(d_trace.q.shape)}, "
            f"classifier {tuple(c_trace.q.shape[:2])}"
        )
    if not torch.equal(d_trace.mask, c_trace.mask):
        raise ValueError("Discriminator and classifier traces have different padding")
    mask = d_trace.mask
    weights = mask.to(d_trace.q.dtype)

    q_c = classifier.select_class(c_trace.q, classes)
    v_c = classifier.select_class(c_trace.v, classes)
    q = blend(d_trace.q, q_c) * weights
    v = blend(d_trace.v.clamp(0.0, 1.0), v_c.clamp(0.0, 1.0)) * weights

    reward = sentence_reward(
        discriminator.sentence_score(d_trace),
        classifier.sentence_score(c_trace, classes),
    )
    return BlendTrace(
        q=q,
        v=v,
        advantages=q - v,
        alpha=alpha_weights(mask, alpha_variant).to(q.dtype),
        reward=reward,
        mask=mask,
    )


def policy_surrogate_loss(trace: BlendTrace, step_log_probs: torch.Tensor) -> torch.Tensor:
    """
    ``-sum_t alpha_t * A_t * log G(y_t | .)`` averaged over the batch.
    Advantages and weights are constants; gradients reach only the
    log-probabilities.
    """
    if step_log_probs.shape != trace.advantages.shape:
        raise ValueError(
            f"Log-probabilities of shape {tuple(step_log_probs.shape)} do not match "
            f"the trace shape {tuple(trace.advantages.shape)}"
        )
    weights = (trace.alpha * trace.advantages * trace.mask).detach()
    return -(weights * step_log_probs).sum(dim=1).mean()
