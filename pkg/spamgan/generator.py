"""
Class-conditional autoregressive generator: next-token distributions, the
MLE loss, top-p filtering, free-running and teacher-forced decoding.
"""
from dataclasses import dataclass
from typing import Optional, Tuple, Union

import torch
import torch.nn as nn

from .backbone import BackboneConfig, build_backbone, init_gaussian_
from .corpus import END_ID, PAD_ID, START_ID
from .numcore import cross_entropy, evaluating, softmax

DECODE_KINDS = ("greedy", "top-p", "top-p-teacher-forced")

# Kept-set boundary tolerance for accumulated float rounding in top-p.
_TOP_P_TOLERANCE = 1e-6


@dataclass(frozen=True)
class NoiseSpec:
    """
    Prior P_z of the noise vector. One standard normal draw of size ``dim``
    per sentence, held fixed over all of its timesteps.
    """

    dim: int = 10

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"Noise dimension must be at least 1, got {self.dim}")

    def sample(self, count: int, generator: Optional[torch.Generator] = None) -> torch.Tensor:
        return torch.randn((count, self.dim), generator=generator)


@dataclass(frozen=True)
class DecodeStrategy:
    """
    How fake sentences are produced.

    Parameters:
        kind: ``greedy``, ``top-p`` (free-running nucleus sampling) or
            ``top-p-teacher-forced`` (nucleus sampling conditioned on a real
            anchor prefix).
        p: nucleus threshold in (0, 1].
        max_length: length T of the produced sequences including ``<start>``.
    """

    kind: str = "top-p"
    p: float = 0.9
    max_length: int = 32

    def __post_init__(self):
        if self.kind not in DECODE_KINDS:
            raise ValueError(f"Unknown decode strategy `{self.kind}`, expected one of {DECODE_KINDS}")
        if not 0.0 < self.p <= 1.0:
            raise ValueError(f"Top-p threshold must lie in (0, 1], got {self.p}")
        if self.max_length < 2:
            raise ValueError(f"max_length must be at least 2, got {self.max_length}")

    @property
    def teacher_forced(self) -> bool:
        return self.kind == "top-p-teacher-forced"


def top_p_filter(dist: torch.Tensor, p: float) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Restrict ``dist`` to its nucleus and renormalise.

    Tokens are ranked by descending probability, ties by ascending id, and
    taken in that order until their cumulative mass reaches ``p``. The kept
    entries are divided by their total mass, all others are set to zero.

    Parameters
    ----------
    dist: torch.Tensor
        Probabilities over the vocabulary in the last dimension.
    p: float
        Threshold in (0, 1]. ``p = 1`` returns ``dist`` unchanged.

    Returns
    -------
    filtered: torch.Tensor
        The renormalised distribution.
    kept: torch.Tensor
        Boolean mask of the kept set.
    """
    if not 0.0 < p <= 1.0:
        raise ValueError(f"Top-p threshold must lie in (0, 1], got {p}")
    if p >= 1.0:
        return dist.clone(), torch.ones_like(dist, dtype=torch.bool)

    sorted_probs, sorted_idx = torch.sort(dist, dim=-1, descending=True, stable=True)
    mass_before = torch.cumsum(sorted_probs, dim=-1) - sorted_probs
    keep_sorted = mass_before < p - _TOP_P_TOLERANCE
    keep_sorted[..., 0] = True
    kept = torch.zeros_like(keep_sorted).scatter(-1, sorted_idx, keep_sorted)

    filtered = torch.where(kept, dist, torch.zeros_like(dist))
    filtered = filtered / filtered.sum(dim=-1, keepdim=True)
    return filtered, kept


def _batched_classes(classes: Union[int, torch.Tensor], batch_size: int) -> torch.Tensor:
    classes = torch.as_tensor(classes, dtype=torch.long)
    if classes.dim() == 0:
        classes = classes.expand(batch_size)
    return classes


class GeneratorModel(nn.Module):
    """
    Autoregressive language model G(y_1:T | z, c). At every timestep the
    token embedding is concatenated with the noise vector z and the one-hot
    class c and fed to a causal backbone; a dense layer maps the states to
    vocabulary logits.

    Parameters
    ----------
    vocab_size: int
        Number of tokens, special tokens included.
    config: BackboneConfig
        Must be a causal kind (``recurrent`` or ``attention-masked``).
    noise: NoiseSpec
        Noise prior.
    num_classes: int
        Number of class labels of the one-hot context.
    """

    def __init__(
        self,
        vocab_size: int,
        config: BackboneConfig,
        noise: NoiseSpec = NoiseSpec(),
        num_classes: int = 2,
    ):
        super().__init__()
        if not config.causal:
            raise ValueError(f"The generator needs a causal backbone, got `{config.kind}`")
        self.vocab_size = vocab_size
        self.config = config
        self.noise = noise
        self.num_classes = num_classes

        self.embedding = nn.Embedding(vocab_size, config.embedding_size)
        self.embedding_dropout = nn.Dropout(config.embedding_dropout)
        self.backbone = build_backbone(
            config, config.embedding_size + noise.dim + num_classes
        )
        self.head_dropout = nn.Dropout(config.head_dropout)
        self.output = nn.Linear(config.hidden_size, vocab_size)
        init_gaussian_(self, config.init_std)

    def context(self, classes: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """Concatenation of z and one-hot(c), shape (batch, noise_dim + num_classes)."""
        one_hot = nn.functional.one_hot(classes, self.num_classes).to(z.dtype)
        return torch.cat([z, one_hot], dim=-1)

    def _inputs(self, tokens: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        embedded = self.embedding_dropout(self.embedding(tokens))
        if tokens.dim() == 1:
            return torch.cat([embedded, context.to(embedded.dtype)], dim=-1)
        expanded = context[:, None, :].expand(-1, tokens.shape[1], -1)
        return torch.cat([embedded, expanded.to(embedded.dtype)], dim=-1)

    def forward(self, tokens: torch.Tensor, classes, z: torch.Tensor) -> torch.Tensor:
        """
        Next-token logits for every prefix of ``tokens``.

        Parameters:
            tokens: torch.Tensor
                Long tensor (batch, t) starting with ``<start>``.
            classes: int or torch.Tensor
                Class label(s) of the sentences.
            z: torch.Tensor
                Noise of shape (batch, noise_dim).

        Returns:
            torch.Tensor
                Logits (batch, t, vocab); position i predicts token i + 1.
        """
        classes = _batched_classes(classes, tokens.shape[0])
        states = self.backbone(self._inputs(tokens, self.context(classes, z)))
        return self.output(self.head_dropout(states))

    def step_dist(self, prefix: torch.Tensor, classes, z: torch.Tensor) -> torch.Tensor:
        """
        Distribution of the next token after ``prefix`` (full vocabulary).
        Accepts a single prefix (t,) with z (noise_dim,) or a batch.
        """
        single = prefix.dim() == 1
        if single:
            prefix, z = prefix[None], z[None]
        dist = softmax(self(prefix, classes, z)[:, -1], axis=-1)
        return dist[0] if single else dist

    def token_log_probs(
        self,
        prefixes: torch.Tensor,
        targets: torch.Tensor,
        classes,
        z: torch.Tensor,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        log G(targets_t | prefixes_1:t-1, z, c) for t = 2..T under the full
        softmax.

        ``prefixes`` and ``targets`` are (batch, T) and coincide except for
        teacher-forced episodes, where the prefix is the real anchor.

        Returns:
            log_probs: torch.Tensor
                (batch, T - 1), zero where the target is ``<pad>``.
            mask: torch.Tensor
                (batch, T - 1) bool, True at non-pad targets.
        """
        logits = self(prefixes[:, :-1], classes, z)
        shifted = targets[:, 1:]
        mask = shifted != PAD_ID
        log_probs = -cross_entropy(softmax(logits, axis=-1), shifted)
        return log_probs * mask, mask

    def mle_loss(self, sequences: torch.Tensor, classes, z: torch.Tensor) -> torch.Tensor:
        """
        Sum over non-pad positions of the next-token cross-entropy, averaged
        over the batch.
        """
        log_probs, _ = self.token_log_probs(sequences, sequences, classes, z)
        return -log_probs.sum(dim=1).mean()

    def _emission_dist(self, logits: torch.Tensor) -> torch.Tensor:
        # <start> and <pad> are never emitted.
        dist = softmax(logits, axis=-1).clone()
        dist[..., START_ID] = 0.0
        dist[..., PAD_ID] = 0.0
        return dist / dist.sum(dim=-1, keepdim=True)

    def _emit(self, logits, strategy: DecodeStrategy, generator) -> torch.Tensor:
        dist = self._emission_dist(logits)
        if strategy.kind == "greedy":
            return torch.argmax(dist, dim=-1)
        filtered, _ = top_p_filter(dist, strategy.p)
        flat = filtered.reshape(-1, filtered.shape[-1])
        drawn = torch.multinomial(flat, 1, generator=generator)
        return drawn.reshape(filtered.shape[:-1])

    def sample_free(
        self,
        classes,
        z: torch.Tensor,
        strategy: DecodeStrategy,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Decode sentences token by token from ``<start>`` until ``<end>`` or
        ``strategy.max_length``.

        Tokens are chosen in evaluation mode with the incremental backbone
        state. Their log-probabilities are then recomputed with gradients in
        one pass, still in evaluation mode.

        Returns:
            sequences: torch.Tensor
                Long tensor (batch, max_length), ``<pad>`` after ``<end>``.
            log_probs: torch.Tensor
                (batch, max_length - 1) log-probabilities of the emitted
                tokens under the unfiltered model, zero at padding.
        """
        if strategy.teacher_forced:
            raise ValueError("sample_free needs a free-running strategy")
        batch_size = z.shape[0]
        classes = _batched_classes(classes, batch_size)
        context = self.context(classes, z)

        sequences = torch.full((batch_size, strategy.max_length), PAD_ID, dtype=torch.long)
        sequences[:, 0] = START_ID
        finished = torch.zeros(batch_size, dtype=torch.bool)

        with evaluating(self):
            self.backbone.reset_states()
            try:
                with torch.no_grad():
                    for t in range(1, strategy.max_length):
                        state = self.backbone.step(self._inputs(sequences[:, t - 1], context))
                        emitted = self._emit(self.output(state), strategy, generator)
                        sequences[:, t] = torch.where(finished, torch.full_like(emitted, PAD_ID), emitted)
                        finished |= emitted == END_ID
                        if finished.all():
                            break
            finally:
                self.backbone.reset_states()
            log_probs, _ = self.token_log_probs(sequences, sequences, classes, z)
        return sequences, log_probs

    def teacher_forced_sample(
        self,
        anchors: torch.Tensor,
        classes,
        z: torch.Tensor,
        p: float,
        generator: Optional[torch.Generator] = None,
    ) -> Tuple[torch.Tensor, torch.Tensor]:
        """
        Emit one token per non-pad anchor position, each drawn from the top-p
        filtered distribution conditioned on the real prefix ``anchors[:, :t]``.
        All positions are computed in a single parallel pass. Sampling and the
        log-probabilities both run in evaluation mode.

        Returns:
            fakes: torch.Tensor
                ``<start>`` followed by the emitted tokens, padded where the
                anchor is padded.
            log_probs: torch.Tensor
                (batch, T - 1) log G(fake_t | anchor_1:t-1) under the unfiltered
                model, zero at padding.
        """
        if anchors.shape[1] < 2:
            raise ValueError("Teacher-forced anchors need at least two positions")
        classes = _batched_classes(classes, anchors.shape[0])
        strategy = DecodeStrategy("top-p", p, anchors.shape[1])

        with evaluating(self):
            with torch.no_grad():
                emitted = self._emit(self(anchors[:, :-1], classes, z), strategy, generator)
            fakes = torch.full_like(anchors, PAD_ID)
            fakes[:, 0] = START_ID
            fakes[:, 1:] = torch.where(anchors[:, 1:] != PAD_ID, emitted, fakes[:, 1:])
            log_probs, _ = self.token_log_probs(anchors, fakes, classes, z)
        return fakes, log_probs

    def decode(self, classes, z: torch.Tensor, strategy: DecodeStrategy, generator=None, anchors=None):
        """Dispatch to :meth:`sample_free` or :meth:`teacher_forced_sample`."""
        if strategy.teacher_forced:
            if anchors is None:
                raise ValueError("Teacher-forced decoding needs real anchor sequences")
            return self.teacher_forced_sample(anchors, classes, z, strategy.p, generator)
        return self.sample_free(classes, z, strategy, generator)
