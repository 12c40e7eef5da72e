"""
Run configuration: one flat, JSON-serialisable record holding every knob of
a training run, with the derived backbone, schedule and corpus settings.
"""
import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

from .backbone import BackboneConfig
from .classifier import ENTROPY_SIGNS
from .corpus import ClassPrior
from .evalkit.synth import SynthCorpusSpec
from .generator import DecodeStrategy
from .rl import ALPHA_VARIANTS
from .trainer import TrainSchedule

BACKBONE_FAMILIES = ("recurrent", "attention")
COMPONENTS = ("generator", "discriminator", "classifier")
# Older spelling of the max-entropy sign.
ENTROPY_SIGN_ALIASES = {"paper": "max-entropy"}


class ConfigError(ValueError):
    """Invalid configuration. ``key`` names the offending entry when known."""

    def __init__(self, message: str, key: Optional[str] = None):
        super().__init__(message)
        self.key = key


@dataclass
class RunConfig:
    """
    Every setting of a run. Defaults are desk scale; the full-scale values of
    the original recurrent system are noted per field.

    Attributes:
        seed: root seed of all random substreams.
        vocab_size: vocabulary limit including the four special tokens (full scale 10,000).
        max_length: sequence length T including ``<start>`` (full scale 128).
        backbone: ``recurrent`` (GRU stacks) or ``attention`` (masked decoder
            generator, unmasked encoder discriminator and classifier).
        num_layers: GRU layers (full scale 2) or attention blocks (full scale 12).
        hidden_size: state width (full scale 1024 generator GRU, 768 attention).
        num_heads: attention heads (full scale 12).
        embedding_size: token embedding width (full scale 50).
        feedforward_size: attention feedforward width (full scale 3072).
        max_positions: longest sequence a backbone accepts; at least ``max_length``.
        g_*_dropout: generator dropout rates (embedding, core, head).
        d_*_dropout: discriminator and classifier dropout rates. The recurrent
            full-scale system uses 0.5 variational dropout between GRU layers.
        init_std: standard deviation of the Gaussian initialisation.
        share_init: start classifier and generator from the discriminator's
            initialisation where shapes agree.
        noise_dim: size of the noise vector z.
        decode_strategy: ``greedy``, ``top-p`` or ``top-p-teacher-forced``.
        top_p: nucleus threshold p.
        beta: entropy weight of the classifier loss on generated sentences.
        entropy_sign: ``max-entropy`` (subtract the entropy term) or ``min-entropy``
            (add it). ``paper`` is read as ``max-entropy``.
        alpha_variant: ``as-printed`` (T - t) or ``offset`` (T - t + 1).
        spam_prior: probability of the spam class when labels are sampled.
        pretrain_*_epochs, training_epochs, g_adv_epochs, g_mle_epochs,
        d_epochs, c_epochs, batch_size, adv_batches: the training schedule.
        g_lr, d_lr, c_lr, *_weight_decay: optimiser settings per component;
            the discriminator values also apply to its critic, the classifier
            values to its critic.
        clip_norm: global gradient norm limit.
        validation_fraction: share of the labeled pool held out for per-epoch
            validation.
        cold_start: allow adversarial training without pretraining.
        log_wall_clock: record elapsed seconds in the metrics file.
        labeled_path, unlabeled_path, test_path: JSON-lines data files.
        checkpoint_path, metrics_path: outputs of ``train``.
        synth_*: synthetic corpus settings, see :class:`SynthCorpusSpec`.
    """

    seed: int = 0
    vocab_size: int = 1000
    max_length: int = 32

    backbone: str = "recurrent"
    num_layers: int = 2
    hidden_size: int = 64
    num_heads: int = 2
    embedding_size: int = 32
    feedforward_size: int = 256
    max_positions: int = 64
    g_embedding_dropout: float = 0.2
    g_core_dropout: float = 0.1
    g_head_dropout: float = 0.2
    d_embedding_dropout: float = 0.4
    d_core_dropout: float = 0.1
    d_head_dropout: float = 0.4
    init_std: float = 0.02
    share_init: bool = False

    noise_dim: int = 10
    decode_strategy: str = "top-p"
    top_p: float = 0.9
    beta: float = 1.0
    entropy_sign: str = "max-entropy"
    alpha_variant: str = "as-printed"
    spam_prior: float = 0.5

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

    validation_fraction: float = 0.1
    cold_start: bool = False
    log_wall_clock: bool = False

    labeled_path: Optional[str] = None
    unlabeled_path: Optional[str] = None
    test_path: Optional[str] = None
    checkpoint_path: str = "model.sgck"
    metrics_path: str = "metrics.jsonl"

    synth_vocab_size: int = 50
    synth_min_words: int = 4
    synth_max_words: int = 12
    synth_keywords: int = 5
    synth_keyword_rate: float = 0.3
    synth_zipf_exponent: float = 1.1
    synth_separation: float = 1.0
    synth_labeled: int = 200
    synth_unlabeled: int = 1000
    synth_test: int = 200

    def __post_init__(self):
        self.entropy_sign = ENTROPY_SIGN_ALIASES.get(self.entropy_sign, self.entropy_sign)
        if self.backbone not in BACKBONE_FAMILIES:
            raise ConfigError(
                f"backbone must be one of {BACKBONE_FAMILIES}, got `{self.backbone}`", "backbone"
            )
        if self.entropy_sign not in ENTROPY_SIGNS:
            raise ConfigError(
                f"entropy_sign must be one of {ENTROPY_SIGNS}, got `{self.entropy_sign}`",
                "entropy_sign",
            )
        if self.alpha_variant not in ALPHA_VARIANTS:
            raise ConfigError(
                f"alpha_variant must be one of {ALPHA_VARIANTS}, got `{self.alpha_variant}`",
                "alpha_variant",
            )
        if self.max_positions < self.max_length:
            raise ConfigError(
                f"max_positions ({self.max_positions}) must be at least "
                f"max_length ({self.max_length})",
                "max_positions",
            )
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                f"validation_fraction must lie in [0, 1), got {self.validation_fraction}",
                "validation_fraction",
            )
        # Surface errors of the derived objects at load time.
        try:
            for component in COMPONENTS:
                self.backbone_config(component)
            self.schedule()
            self.synth_spec()
            ClassPrior(self.spam_prior)
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @classmethod
    def attention_preset(cls, **overrides) -> "RunConfig":
        """Attention family with the learning rates and decays used for it at full scale."""
        values = dict(
            backbone="attention",
            g_lr=6.25e-5,
            d_lr=6.25e-5,
            c_lr=6.25e-5,
            g_weight_decay=1e-7,
            d_weight_decay=1e-5,
            c_weight_decay=1e-5,
        )
        values.update(overrides)
        return cls.from_dict(values)

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        fields = {f.name: f for f in dataclasses.fields(cls)}
        coerced = {}
        for key, value in values.items():
            if key not in fields:
                raise ConfigError(f"Unknown configuration key `{key}`", key)
            coerced[key] = _coerce(key, value, fields[key].default)
        return cls(**coerced)

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "RunConfig":
        path = Path(path)
        with path.open(encoding="utf-8") as handle:
            try:
                values = json.load(handle)
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})")
        if not isinstance(values, dict):
            raise ConfigError(f"{path}: configuration must be a JSON object")
        return cls.from_dict(values)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json() + "\n", encoding="utf-8")

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def backbone_config(self, component: str) -> BackboneConfig:
        """
        Backbone of ``component``. The generator gets the causal variant of
        the family; discriminator and classifier share their settings.
        """
        if component not in COMPONENTS:
            raise ValueError(f"Unknown component `{component}`, expected one of {COMPONENTS}")
        if self.backbone == "recurrent":
            kind = "recurrent"
        elif component == "generator":
            kind = "attention-masked"
        else:
            kind = "attention-unmasked"
        prefix = "g" if component == "generator" else "d"
        return BackboneConfig(
            kind=kind,
            num_layers=self.num_layers,
            hidden_size=self.hidden_size,
            num_heads=self.num_heads,
            embedding_size=self.embedding_size,
            feedforward_size=self.feedforward_size,
            max_positions=self.max_positions,
            embedding_dropout=getattr(self, f"{prefix}_embedding_dropout"),
            core_dropout=getattr(self, f"{prefix}_core_dropout"),
            head_dropout=getattr(self, f"{prefix}_head_dropout"),
            init_std=self.init_std,
        )

    def decode(self) -> DecodeStrategy:
        return DecodeStrategy(self.decode_strategy, self.top_p, self.max_length)

    def schedule(self) -> TrainSchedule:
        return TrainSchedule(
            pretrain_g_epochs=self.pretrain_g_epochs,
            pretrain_d_epochs=self.pretrain_d_epochs,
            pretrain_c_epochs=self.pretrain_c_epochs,
            pretrain_critic_epochs=self.pretrain_critic_epochs,
            training_epochs=self.training_epochs,
            g_adv_epochs=self.g_adv_epochs,
            g_mle_epochs=self.g_mle_epochs,
            d_epochs=self.d_epochs,
            c_epochs=self.c_epochs,
            batch_size=self.batch_size,
            adv_batches=self.adv_batches,
            g_lr=self.g_lr,
            d_lr=self.d_lr,
            c_lr=self.c_lr,
            g_weight_decay=self.g_weight_decay,
            d_weight_decay=self.d_weight_decay,
            c_weight_decay=self.c_weight_decay,
            clip_norm=self.clip_norm,
            decode=self.decode(),
            entropy_sign=self.entropy_sign,
            alpha_variant=self.alpha_variant,
            spam_prior=self.spam_prior,
            validation_fraction=self.validation_fraction,
        )

    def synth_spec(self, seed: Optional[int] = None) -> SynthCorpusSpec:
        return SynthCorpusSpec(
            vocab_size=self.synth_vocab_size,
            min_words=self.synth_min_words,
            max_words=self.synth_max_words,
            keywords_per_class=self.synth_keywords,
            keyword_rate=self.synth_keyword_rate,
            zipf_exponent=self.synth_zipf_exponent,
            separation=self.synth_separation,
            num_labeled=self.synth_labeled,
            num_unlabeled=self.synth_unlabeled,
            num_test=self.synth_test,
            seed=self.seed if seed is None else seed,
        )


def _coerce(key: str, value, default):
    if default is None:
        if value is None or isinstance(value, str):
            return value
        raise ConfigError(f"`{key}` must be a string or null, got {value!r}", key)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        raise ConfigError(f"`{key}` must be true or false, got {value!r}", key)
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"`{key}` must be an integer, got {value!r}", key)
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"`{key}` must be a number, got {value!r}", key)
        return float(value)
    if not isinstance(value, type(default)):
        raise ConfigError(f"`{key}` must be a {type(default).__name__}, got {value!r}", key)
    return value
