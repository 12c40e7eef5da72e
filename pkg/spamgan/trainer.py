"""
Training of the three adversaries: pretraining of every parameter group,
then the adversarial loop of generator policy-gradient, generator MLE,
discriminator and classifier epochs, with one metrics record per epoch.
"""
import json
import logging
import math
import time
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import torch

from . import classifier as cls
from . import discriminator as disc
from .corpus import ClassPrior, Dataset, Example, batches, sample_classes, stack_sequences
from .evalkit.metrics import evaluate
from .generator import DecodeStrategy
from .network import SpamGAN, evaluating
from .numcore import DecoupledAdam, RngStreams, clip_global_norm
from .rl import ALPHA_VARIANTS, policy_surrogate_loss, step_blends

logger = logging.getLogger(__name__)

PHASES = ("pretrain-g", "pretrain-d", "pretrain-c", "pretrain-critic", "adv")


class NonFiniteLossError(ValueError):
    """A loss became NaN or infinite; training is aborted."""

    def __init__(self, phase: str, epoch: int, loss_name: str, value: float):
        super().__init__(
            f"Non-finite loss `{loss_name}` ({value}) in phase {phase}, epoch {epoch}"
        )
        self.phase = phase
        self.epoch = epoch
        self.loss_name = loss_name


@dataclass
class TrainSchedule:
    """
    Epoch counts and optimiser settings of a run.

    Pretraining epochs and G-MLE / D / C epochs are full passes over their
    real pool with one fake batch per real batch. A G-Adv epoch and a critic
    pretraining epoch are ``adv_batches`` fake batches of ``batch_size``.
    """

    pretrain_g_epochs: int = 30
    pretrain_d_epochs: int = 10
    pretrain_c_epochs: int = 20
    pretrain_critic_epochs: int = 10
    training_epochs: int = 15
    g_adv_epochs: int = 1
    g_mle_epochs: int = 1
    d_epochs: int = 1
    c_epochs: int = 1
    batch_size: int = 32
    adv_batches: int = 4
    g_lr: float = 1e-3
    d_lr: float = 1e-4
    c_lr: float = 1e-4
    g_weight_decay: float = 1e-7
    d_weight_decay: float = 1e-4
    c_weight_decay: float = 1e-4
    clip_norm: float = 5.0
    decode: DecodeStrategy = field(default_factory=DecodeStrategy)
    entropy_sign: str = "max-entropy"
    alpha_variant: str = "as-printed"
    spam_prior: float = 0.5
    validation_fraction: float = 0.1

    def __post_init__(self):
        for name in (
            "pretrain_g_epochs",
            "pretrain_d_epochs",
            "pretrain_c_epochs",
            "pretrain_critic_epochs",
            "training_epochs",
            "g_adv_epochs",
            "g_mle_epochs",
            "d_epochs",
            "c_epochs",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be at least 1, got {self.batch_size}")
        if self.adv_batches < 1:
            raise ValueError(f"adv_batches must be at least 1, got {self.adv_batches}")
        for name in ("g_lr", "d_lr", "c_lr", "clip_norm"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("g_weight_decay", "d_weight_decay", "c_weight_decay"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative, got {getattr(self, name)}")
        if self.entropy_sign not in cls.ENTROPY_SIGNS:
            raise ValueError(f"Unknown entropy_sign `{self.entropy_sign}`")
        if self.alpha_variant not in ALPHA_VARIANTS:
            raise ValueError(f"Unknown alpha_variant `{self.alpha_variant}`")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError(
                f"validation_fraction must lie in [0, 1), got {self.validation_fraction}"
            )
        ClassPrior(self.spam_prior)

    def optimizer_settings(self) -> Dict[str, Tuple[float, float]]:
        """(learning rate, weight decay) per parameter group."""
        return {
            "generator": (self.g_lr, self.g_weight_decay),
            "discriminator": (self.d_lr, self.d_weight_decay),
            "discriminator_critic": (self.d_lr, self.d_weight_decay),
            "classifier": (self.c_lr, self.c_weight_decay),
            "classifier_critic": (self.c_lr, self.c_weight_decay),
        }

    @property
    def total_pretrain_epochs(self) -> int:
        return (
            self.pretrain_g_epochs
            + self.pretrain_d_epochs
            + self.pretrain_c_epochs
            + self.pretrain_critic_epochs
        )

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MetricsRecord:
    """
    Summary of one epoch. ``losses`` holds the mean of every loss computed
    during the epoch under the names ``g_mle``, ``d``, ``d_critic``,
    ``c_real``, ``c_fake``, ``c_critic`` and ``surrogate``.
    """

    phase: str
    epoch: int
    losses: Dict[str, float] = field(default_factory=dict)
    mean_reward: Optional[float] = None
    mean_advantage: Optional[float] = None
    val_accuracy: Optional[float] = None
    val_f1: Optional[float] = None
    val_perplexity: Optional[float] = None
    wall_clock: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class MetricsWriter:
    """
    Append-only JSON-lines metrics file. The file is truncated on creation.
    With ``path=None`` records are only kept in memory.
    """

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = None if path is None else Path(path)
        self.records: List[MetricsRecord] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")

    def write(self, record: MetricsRecord) -> None:
        self.records.append(record)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as handle:
                handle.write(record.to_json() + "\n")

    def __len__(self):
        return len(self.records)


def _mean(values: List[float]) -> float:
    return sum(values) / len(values)


class SpamGANTrainer:
    """
    Runs the training algorithm on one :class:`SpamGAN`.

    Parameters
    ----------
    model: SpamGAN
        The models to train, updated in place.
    dataset: Dataset
        Labeled and unlabeled real sentences.
    schedule: TrainSchedule
        Epoch counts and optimiser settings.
    seed: int
        Root seed of all random substreams (shuffling, class and noise draws,
        sampling, dropout).
    metrics: MetricsWriter
        Destination of the per-epoch records. A memory-only writer by default.
    cold_start: bool
        Acknowledge adversarial training without pretraining.
    log_wall_clock: bool
        Store elapsed seconds in the records (makes the file run-dependent).
    """

    def __init__(
        self,
        model: SpamGAN,
        dataset: Dataset,
        schedule: TrainSchedule = TrainSchedule(),
        seed: int = 0,
        metrics: Optional[MetricsWriter] = None,
        cold_start: bool = False,
        log_wall_clock: bool = False,
    ):
        self.model = model
        self.dataset = dataset
        self.schedule = schedule
        self.streams = RngStreams(seed)
        self.prior = ClassPrior(schedule.spam_prior)
        self.metrics = metrics if metrics is not None else MetricsWriter()
        self.cold_start = cold_start
        self.log_wall_clock = log_wall_clock
        self.pretrained = False
        self.phase_log: List[Tuple[str, int, int]] = []
        self._started = time.perf_counter()

        self.groups = model.parameter_groups()
        self.optimizers = {
            group: DecoupledAdam(self.groups[group], lr=lr, weight_decay=weight_decay)
            for group, (lr, weight_decay) in schedule.optimizer_settings().items()
        }
        self.labeled, self.validation = self._split_validation(dataset.labeled_view())
        self.real_pool: List[Example] = self.labeled + dataset.unlabeled_view()

    def _split_validation(self, labeled: List[Example]):
        fraction = self.schedule.validation_fraction
        num_validation = int(len(labeled) * fraction)
        if fraction > 0 and labeled and num_validation == 0:
            warnings.warn(
                f"{len(labeled)} labeled sentences are too few for a validation "
                f"fraction of {fraction}; no validation metrics will be recorded"
            )
        if num_validation == 0:
            return list(labeled), []
        order = torch.randperm(len(labeled), generator=self.streams.generator("validation-split"))
        order = order.tolist()
        validation = [labeled[i] for i in order[:num_validation]]
        train = [labeled[i] for i in sorted(order[num_validation:])]
        return train, validation

    # Updates

    def _update(self, group: str, loss: torch.Tensor, phase: str, epoch: int, name: str) -> float:
        value = float(loss.detach())
        if not math.isfinite(value):
            raise NonFiniteLossError(phase, epoch, name, value)
        self.model.zero_grad(set_to_none=True)
        loss.backward()
        params = self.groups[group]
        clipped = clip_global_norm(
            {str(i): p.grad for i, p in enumerate(params)}, self.schedule.clip_norm
        )
        for i, param in enumerate(params):
            param.grad = clipped[str(i)]
        self.optimizers[group].step()
        return value

    def _fake_batch(self, size: int, *names, with_log_probs: bool = False):
        generator = self.streams.generator("fake", *names)
        classes = sample_classes(self.prior, size, generator)
        z = self.model.generator.noise.sample(size, generator)
        anchors = None
        if self.schedule.decode.teacher_forced:
            if not self.real_pool:
                raise ValueError("Teacher-forced decoding needs real sentences as anchors")
            picks = torch.randint(len(self.real_pool), (size,), generator=generator)
            anchors = stack_sequences([self.real_pool[i].sequence for i in picks.tolist()])
        with torch.set_grad_enabled(with_log_probs):
            fakes, log_probs = self.model.generator.decode(
                classes, z, self.schedule.decode, generator, anchors
            )
        return fakes, log_probs, classes

    def _discriminator_critic_update(self, fakes, phase, epoch) -> float:
        discriminator = self.model.discriminator
        with evaluating(discriminator):
            loss = disc.d_critic_loss(discriminator.step_scores(fakes))
        return self._update("discriminator_critic", loss, phase, epoch, "d_critic")

    def _classifier_critic_update(self, fakes, classes, phase, epoch) -> float:
        classifier = self.model.classifier
        with evaluating(classifier):
            loss = cls.c_critic_loss(classifier.step_scores(fakes), classes)
        return self._update("classifier_critic", loss, phase, epoch, "c_critic")

    # Epochs

    def _generator_mle_epoch(self, phase: str, epoch: int, key: tuple) -> Dict[str, float]:
        losses = []
        pool = batches(
            self.real_pool,
            self.schedule.batch_size,
            self.streams.seed("batches", *key),
            prior=self.prior,
        )
        for b, batch in enumerate(pool):
            with self.streams.fork("dropout", *key, b):
                z = self.model.generator.noise.sample(
                    len(batch), self.streams.generator("noise", *key, b)
                )
                loss = self.model.generator.mle_loss(batch.sequences, batch.labels, z)
                losses.append(self._update("generator", loss, phase, epoch, "g_mle"))
            logger.debug("%s epoch=%d batch=%d g_mle=%.6f", phase, epoch, b, losses[-1])
        return {"g_mle": _mean(losses)} if losses else {}

    def _discriminator_epoch(self, phase: str, epoch: int, key: tuple, with_critic: bool):
        d_losses, critic_losses = [], []
        discriminator = self.model.discriminator
        pool = batches(self.real_pool, self.schedule.batch_size, self.streams.seed("batches", *key))
        for b, batch in enumerate(pool):
            with self.streams.fork("dropout", *key, b):
                fakes, _, _ = self._fake_batch(len(batch), *key, b)
                real_scores = disc.sentence_score(discriminator.step_scores(batch.sequences))
                fake_scores = disc.sentence_score(discriminator.step_scores(fakes))
                loss = disc.d_loss(real_scores, fake_scores)
                d_losses.append(self._update("discriminator", loss, phase, epoch, "d"))
                if with_critic:
                    critic_losses.append(self._discriminator_critic_update(fakes, phase, epoch))
            logger.debug("%s epoch=%d batch=%d d=%.6f", phase, epoch, b, d_losses[-1])
        losses = {"d": _mean(d_losses)} if d_losses else {}
        if critic_losses:
            losses["d_critic"] = _mean(critic_losses)
        return losses

    def _classifier_epoch(self, phase: str, epoch: int, key: tuple, adversarial: bool):
        if not self.labeled:
            raise ValueError("Classifier training needs labeled sentences, the labeled pool is empty")
        real_losses, fake_losses, critic_losses = [], [], []
        classifier = self.model.classifier
        pool = batches(self.labeled, self.schedule.batch_size, self.streams.seed("batches", *key))
        for b, batch in enumerate(pool):
            with self.streams.fork("dropout", *key, b):
                real_loss = cls.c_loss_real(classifier.step_scores(batch.sequences), batch.labels)
                loss = real_loss
                if adversarial:
                    fakes, _, classes = self._fake_batch(len(batch), *key, b)
                    fake_loss = cls.c_loss_fake(
                        classifier.step_scores(fakes),
                        classes,
                        beta=classifier.beta,
                        entropy_sign=self.schedule.entropy_sign,
                    )
                    fake_losses.append(float(fake_loss.detach()))
                    loss = real_loss + fake_loss
                real_losses.append(float(real_loss.detach()))
                self._update("classifier", loss, phase, epoch, "c")
                if adversarial:
                    critic_losses.append(
                        self._classifier_critic_update(fakes, classes, phase, epoch)
                    )
            logger.debug("%s epoch=%d batch=%d c_real=%.6f", phase, epoch, b, real_losses[-1])
        losses = {"c_real": _mean(real_losses)}
        if fake_losses:
            losses["c_fake"] = _mean(fake_losses)
            losses["c_critic"] = _mean(critic_losses)
        return losses

    def _critic_epoch(self, phase: str, epoch: int, key: tuple) -> Dict[str, float]:
        d_losses, c_losses = [], []
        for b in range(self.schedule.adv_batches):
            with self.streams.fork("dropout", *key, b):
                fakes, _, classes = self._fake_batch(self.schedule.batch_size, *key, b)
                d_losses.append(self._discriminator_critic_update(fakes, phase, epoch))
                c_losses.append(self._classifier_critic_update(fakes, classes, phase, epoch))
        return {"d_critic": _mean(d_losses), "c_critic": _mean(c_losses)}

    def _generator_adversarial_epoch(self, phase: str, epoch: int, key: tuple):
        losses, rewards, advantages = [], [], []
        discriminator, classifier = self.model.discriminator, self.model.classifier
        for b in range(self.schedule.adv_batches):
            with self.streams.fork("dropout", *key, b):
                fakes, log_probs, classes = self._fake_batch(
                    self.schedule.batch_size, *key, b, with_log_probs=True
                )
                with torch.no_grad(), evaluating(discriminator, classifier):
                    d_trace = discriminator.step_scores(fakes)
                    c_trace = classifier.step_scores(fakes)
                trace = step_blends(d_trace, c_trace, classes, self.schedule.alpha_variant)
                loss = policy_surrogate_loss(trace, log_probs)
                losses.append(self._update("generator", loss, phase, epoch, "surrogate"))
            rewards.append(float(trace.reward.mean()))
            advantages.append(float(trace.advantages.sum() / trace.mask.sum()))
            logger.debug(
                "%s epoch=%d batch=%d surrogate=%.6f reward=%.6f",
                phase, epoch, b, losses[-1], rewards[-1],
            )
        return {"surrogate": _mean(losses)}, _mean(rewards), _mean(advantages)

    # Bookkeeping

    def _validate(self, record: MetricsRecord) -> None:
        if not self.validation:
            return
        sequences = stack_sequences([example.sequence for example in self.validation])
        labels = torch.tensor([int(example.label) for example in self.validation])
        report = evaluate(self.model, sequences, labels, seed=self.streams.seed("validation"))
        record.val_accuracy = report.accuracy
        record.val_f1 = report.f1
        record.val_perplexity = report.perplexity

    def _record(self, phase: str, epoch: int, losses: Dict[str, float], **extra) -> MetricsRecord:
        record = MetricsRecord(phase=phase, epoch=epoch, losses=losses, **extra)
        self._validate(record)
        if self.log_wall_clock:
            record.wall_clock = time.perf_counter() - self._started
        self.metrics.write(record)
        logger.info(
            "phase=%s epoch=%d %s",
            phase,
            epoch,
            " ".join(f"{name}={value:.6f}" for name, value in sorted(losses.items())),
        )
        return record

    def _log_phase(self, phase: str, training_epoch: int, inner_epoch: int) -> None:
        self.phase_log.append((phase, training_epoch, inner_epoch))
        logger.info(
            "phase=%s training_epoch=%d inner_epoch=%d", phase, training_epoch, inner_epoch
        )

    # Public interface

    def pretrain(self) -> List[MetricsRecord]:
        """
        Pretrain in order: the generator by MLE on all real sentences, the
        discriminator against generated sentences, the classifier on labeled
        sentences only, then both critics on generated sentences.
        """
        schedule = self.schedule
        if len(self.dataset) == 0:
            raise ValueError("Cannot pretrain on an empty dataset")
        if schedule.pretrain_c_epochs > 0 and not self.labeled:
            raise ValueError("Classifier pretraining needs labeled sentences")
        start = len(self.metrics)

        for epoch in range(schedule.pretrain_g_epochs):
            losses = self._generator_mle_epoch("pretrain-g", epoch, ("pretrain-g", epoch))
            self._record("pretrain-g", epoch, losses)
        for epoch in range(schedule.pretrain_d_epochs):
            losses = self._discriminator_epoch(
                "pretrain-d", epoch, ("pretrain-d", epoch), with_critic=False
            )
            self._record("pretrain-d", epoch, losses)
        for epoch in range(schedule.pretrain_c_epochs):
            losses = self._classifier_epoch(
                "pretrain-c", epoch, ("pretrain-c", epoch), adversarial=False
            )
            self._record("pretrain-c", epoch, losses)
        for epoch in range(schedule.pretrain_critic_epochs):
            losses = self._critic_epoch("pretrain-critic", epoch, ("pretrain-critic", epoch))
            self._record("pretrain-critic", epoch, losses)

        self.pretrained = True
        return self.metrics.records[start:]

    def adversarial_train(self) -> List[MetricsRecord]:
        """
        Per training epoch: G-Adv epochs of policy-gradient updates, G-MLE
        epochs, D epochs with critic updates and C epochs with critic updates,
        then one ``adv`` metrics record.
        """
        schedule = self.schedule
        if not self.pretrained and not self.cold_start:
            warnings.warn(
                "Adversarial training starts from unpretrained models; "
                "pass cold_start=True if this is intended"
            )
        if schedule.c_epochs > 0 and not self.labeled:
            raise ValueError("Classifier training needs labeled sentences")
        start = len(self.metrics)

        for i in range(schedule.training_epochs):
            losses: Dict[str, List[float]] = {}
            rewards, advantages = [], []

            def collect(values: Dict[str, float]):
                for name, value in values.items():
                    losses.setdefault(name, []).append(value)

            for j in range(schedule.g_adv_epochs):
                self._log_phase("g-adv", i, j)
                values, reward, advantage = self._generator_adversarial_epoch(
                    "adv", i, ("g-adv", i, j)
                )
                collect(values)
                rewards.append(reward)
                advantages.append(advantage)
            for j in range(schedule.g_mle_epochs):
                self._log_phase("g-mle", i, j)
                collect(self._generator_mle_epoch("adv", i, ("g-mle", i, j)))
            for j in range(schedule.d_epochs):
                self._log_phase("d", i, j)
                collect(self._discriminator_epoch("adv", i, ("d", i, j), with_critic=True))
            for j in range(schedule.c_epochs):
                self._log_phase("c", i, j)
                collect(self._classifier_epoch("adv", i, ("c", i, j), adversarial=True))

            self._record(
                "adv",
                i,
                {name: _mean(values) for name, values in losses.items()},
                mean_reward=_mean(rewards) if rewards else None,
                mean_advantage=_mean(advantages) if advantages else None,
            )
        return self.metrics.records[start:]

    def train(self) -> List[MetricsRecord]:
        """Pretraining followed by adversarial training."""
        return self.pretrain() + self.adversarial_train()
