from typing import Dict, List, Optional

import torch
import torch.nn as nn

from .backbone import BackboneConfig, StatefulBackbone
from .classifier import ClassifierModel
from .discriminator import DiscriminatorModel
from .generator import GeneratorModel, NoiseSpec
from .numcore import ParamSet, RngStreams, evaluating

PARAMETER_GROUPS = (
    "generator",
    "discriminator",
    "discriminator_critic",
    "classifier",
    "classifier_critic",
)


class SpamGAN(torch.nn.Module):
    """
    The three adversaries of semi-supervised spam detection.

    Attributes:
        generator: GeneratorModel, class-conditional sentence generator
        discriminator: DiscriminatorModel, real-vs-fake scorer with its critic
        classifier: ClassifierModel, spam vs non-spam scorer with its critic

    Parameters
    ----------
    vocab_size: int
        Number of tokens.
    generator_config: BackboneConfig
        Causal backbone of the generator.
    scorer_config: BackboneConfig
        Backbone of the discriminator and the classifier.
    noise: NoiseSpec
        Noise prior of the generator.
    beta: float
        Entropy weight of the classifier loss on generated sentences.
    share_init: bool
        If True, the classifier and the generator start from the
        discriminator's initialisation wherever names and shapes agree.
    """

    def __init__(
        self,
        vocab_size: int,
        generator_config: BackboneConfig,
        scorer_config: BackboneConfig,
        noise: NoiseSpec = NoiseSpec(),
        beta: float = 1.0,
        share_init: bool = False,
    ):
        super().__init__()
        self.vocab_size = vocab_size
        self.generator = GeneratorModel(vocab_size, generator_config, noise)
        self.discriminator = DiscriminatorModel(vocab_size, scorer_config)
        self.classifier = ClassifierModel(vocab_size, scorer_config, beta=beta)
        if share_init:
            self.share_initialisation()

    @classmethod
    def from_config(cls, config, vocab_size: int, seed: Optional[int] = None) -> "SpamGAN":
        """
        Build from a :class:`spamgan.config.RunConfig`. With ``seed`` the
        initialisation draws from its own substream of that root seed.
        """
        if seed is not None:
            with RngStreams(seed).fork("init"):
                return cls.from_config(config, vocab_size)
        return cls(
            vocab_size,
            generator_config=config.backbone_config("generator"),
            scorer_config=config.backbone_config("discriminator"),
            noise=NoiseSpec(config.noise_dim),
            beta=config.beta,
            share_init=config.share_init,
        )

    def share_initialisation(self) -> List[str]:
        """
        Copy every discriminator parameter whose name and shape match into the
        classifier and the generator. Returns the copied names.
        """
        source = dict(self.discriminator.named_parameters())
        copied = []
        with torch.no_grad():
            for target in (self.classifier, self.generator):
                for name, param in target.named_parameters():
                    if name in source and source[name].shape == param.shape:
                        param.copy_(source[name])
                        copied.append(name)
        return copied

    def parameter_groups(self) -> Dict[str, List[nn.Parameter]]:
        """The five disjoint parameter groups, each updated by its own losses."""
        return {
            "generator": list(self.generator.parameters()),
            "discriminator": list(self.discriminator.score_parameters()),
            "discriminator_critic": list(self.discriminator.critic_parameters()),
            "classifier": list(self.classifier.score_parameters()),
            "classifier_critic": list(self.classifier.critic_parameters()),
        }

    def param_sets(self) -> Dict[str, ParamSet]:
        """Named, sorted parameters per group, names relative to this module."""
        names = {id(param): name for name, param in self.named_parameters()}
        return {
            group: ParamSet((names[id(param)], param) for param in params)
            for group, params in self.parameter_groups().items()
        }

    def reset_states(self):
        """Forget the decoding state of every backbone."""
        for module in self.modules():
            if isinstance(module, StatefulBackbone):
                module.reset_states()

    def forward(self, sequences: torch.Tensor) -> torch.Tensor:
        """Sentence-level class distributions of the classifier."""
        return self.classifier(sequences)
