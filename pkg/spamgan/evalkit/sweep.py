"""
Labeled-fraction by unlabeled-fraction experiment grid: per cell and seed a
classifier-only base model and a fully adversarial model are trained and
evaluated on a fixed test set.
"""
import csv
import dataclasses
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from ..config import RunConfig
from ..corpus import ClassLabel, Dataset, Vocab, build_vocab, encode_pool
from ..network import SpamGAN
from ..trainer import SpamGANTrainer
from .metrics import EvalReport, evaluate, train_test_split
from .synth import make_synth_corpus

logger = logging.getLogger(__name__)

MODELS = ("base", "full")
COLUMNS = (
    "model",
    "labeled_fraction",
    "unlabeled_fraction",
    "seeds",
    "accuracy_mean",
    "accuracy_std",
    "f1_mean",
    "f1_std",
    "perplexity_mean",
    "perplexity_std",
)

Records = Sequence[Tuple[str, Optional[ClassLabel]]]


class SweepCellError(ValueError):
    """Training or evaluation failed in one cell of the grid."""

    def __init__(self, labeled_fraction: float, unlabeled_fraction: float, seed: int, cause):
        super().__init__(
            f"Sweep cell labeled_fraction={labeled_fraction} "
            f"unlabeled_fraction={unlabeled_fraction} seed={seed} failed: {cause}"
        )
        self.labeled_fraction = labeled_fraction
        self.unlabeled_fraction = unlabeled_fraction
        self.seed = seed


@dataclass
class SweepRow:
    model: str
    labeled_fraction: float
    unlabeled_fraction: float
    seeds: int
    accuracy_mean: float
    accuracy_std: float
    f1_mean: float
    f1_std: float
    perplexity_mean: Optional[float] = None
    perplexity_std: Optional[float] = None

    @classmethod
    def from_reports(
        cls, model: str, labeled_fraction: float, unlabeled_fraction: float, reports: List[EvalReport]
    ) -> "SweepRow":
        accuracy = np.array([report.accuracy for report in reports])
        f1 = np.array([report.f1 for report in reports])
        row = cls(
            model=model,
            labeled_fraction=labeled_fraction,
            unlabeled_fraction=unlabeled_fraction,
            seeds=len(reports),
            accuracy_mean=float(accuracy.mean()),
            accuracy_std=float(accuracy.std()),
            f1_mean=float(f1.mean()),
            f1_std=float(f1.std()),
        )
        if all(report.perplexity is not None for report in reports):
            perplexity = np.array([report.perplexity for report in reports])
            row.perplexity_mean = float(perplexity.mean())
            row.perplexity_std = float(perplexity.std())
        return row


def _check_fractions(name: str, fractions: Sequence[float], allow_zero: bool) -> None:
    if not fractions:
        raise ValueError(f"{name} must not be empty")
    for fraction in fractions:
        low_ok = fraction >= 0.0 if allow_zero else fraction > 0.0
        if not (low_ok and fraction <= 1.0):
            bound = "[0, 1]" if allow_zero else "(0, 1]"
            raise ValueError(f"{name} must lie in {bound}, got {fraction}")


def _pools(config: RunConfig, seed: int, records):
    """Labeled training pool, unlabeled texts, test pool and vocabulary of one seed."""
    if records is None:
        corpus = make_synth_corpus(config.synth_spec(seed))
        vocab, _ = corpus.build(config.max_length, unlabeled_fraction=0.0)
        unlabeled = [text for text, _ in corpus.unlabeled]
        return list(corpus.labeled), unlabeled, list(corpus.test), vocab
    labeled_records, unlabeled_records = records
    train, test = train_test_split(list(labeled_records), test_fraction=0.2, seed=seed)
    unlabeled = [text for text, _ in unlabeled_records]
    vocab = build_vocab([text for text, _ in train] + unlabeled, config.vocab_size)
    return train, unlabeled, test, vocab


def _take(items: list, fraction: float) -> list:
    # Any positive fraction of a non-empty pool keeps at least one item.
    count = int(round(len(items) * fraction))
    if fraction > 0.0:
        count = max(1, count)
    return items[:count]


def base_schedule(config: RunConfig):
    """Classifier-only schedule with as many classifier epochs as the full model gets."""
    schedule = config.schedule()
    return dataclasses.replace(
        schedule,
        pretrain_g_epochs=0,
        pretrain_d_epochs=0,
        pretrain_c_epochs=schedule.pretrain_c_epochs
        + schedule.training_epochs * schedule.c_epochs,
        pretrain_critic_epochs=0,
        training_epochs=0,
    )


def run_cell(
    config: RunConfig,
    vocab: Vocab,
    dataset: Dataset,
    test_sequences,
    test_labels,
    seed: int,
) -> Tuple[EvalReport, EvalReport]:
    """Train and evaluate the base and the full model of one cell and seed."""
    base = SpamGAN.from_config(config, len(vocab), seed=seed)
    SpamGANTrainer(base, dataset, base_schedule(config), seed=seed).pretrain()
    base_report = evaluate(base, test_sequences, test_labels, seed=seed, with_perplexity=False)

    full = SpamGAN.from_config(config, len(vocab), seed=seed)
    SpamGANTrainer(full, dataset, config.schedule(), seed=seed).train()
    full_report = evaluate(full, test_sequences, test_labels, seed=seed)
    return base_report, full_report


def sweep(
    config: RunConfig,
    labeled_fractions: Sequence[float],
    unlabeled_fractions: Sequence[float],
    seeds: Sequence[int],
    records: Optional[Tuple[Records, Records]] = None,
) -> List[SweepRow]:
    """
    Run the grid and aggregate over seeds.

    Parameters
    ----------
    config: RunConfig
        Model and schedule settings shared by every cell.
    labeled_fractions: sequence of float
        Fractions in (0, 1] of the labeled training pool to keep.
    unlabeled_fractions: sequence of float
        Fractions in [0, 1] of the unlabeled pool to keep.
    seeds: sequence of int
        Root seeds; each seed also draws its own synthetic corpus.
    records: pair of record lists, optional
        Real labeled and unlabeled records. The labeled records are split
        80-20 into training and test data per seed. Without records the
        synthetic corpus described by ``config`` is used.

    Returns
    -------
    Two rows (base, full) per (labeled fraction, unlabeled fraction).
    """
    _check_fractions("labeled_fractions", labeled_fractions, allow_zero=False)
    _check_fractions("unlabeled_fractions", unlabeled_fractions, allow_zero=True)
    if not seeds:
        raise ValueError("seeds must not be empty")

    pools = {seed: _pools(config, seed, records) for seed in seeds}
    rows = []
    for labeled_fraction in labeled_fractions:
        for unlabeled_fraction in unlabeled_fractions:
            reports = {model: [] for model in MODELS}
            for seed in seeds:
                train, unlabeled, test, vocab = pools[seed]
                logger.info(
                    "sweep labeled_fraction=%s unlabeled_fraction=%s seed=%d",
                    labeled_fraction, unlabeled_fraction, seed,
                )
                try:
                    dataset = Dataset.from_texts(
                        _take(train, labeled_fraction),
                        _take(unlabeled, unlabeled_fraction),
                        vocab,
                        config.max_length,
                    )
                    test_sequences, test_labels = encode_pool(test, vocab, config.max_length)
                    run_config = config.replace(seed=seed)
                    base_report, full_report = run_cell(
                        run_config, vocab, dataset, test_sequences, test_labels, seed
                    )
                except Exception as e:
                    raise SweepCellError(labeled_fraction, unlabeled_fraction, seed, e) from e
                reports["base"].append(base_report)
                reports["full"].append(full_report)
            for model in MODELS:
                rows.append(
                    SweepRow.from_reports(model, labeled_fraction, unlabeled_fraction, reports[model])
                )
    return rows


def write_table(path: Union[str, Path], rows: Sequence[SweepRow]) -> None:
    """Comma-separated table with a header row; missing perplexities are empty."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=COLUMNS)
        writer.writeheader()
        for row in rows:
            values = dataclasses.asdict(row)
            writer.writerow({key: "" if values[key] is None else values[key] for key in COLUMNS})
