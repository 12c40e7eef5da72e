from pbr.version import VersionInfo

__version__ = VersionInfo("spamgan").release_string()

from .network import SpamGAN
from .config import RunConfig, ConfigError
from .trainer import SpamGANTrainer, TrainSchedule, MetricsRecord, MetricsWriter
from .checkpoint import save_checkpoint, load_checkpoint

from .corpus import (
    ClassLabel,
    Dataset,
    Vocab,
    build_vocab,
    encode,
    decode,
)
