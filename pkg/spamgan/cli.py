"""
Command-line interface.

    spamgan [--config FILE] [--seed N] [--out DIR] [--verbose] COMMAND ...

Command output goes to stdout, log lines and error causes to stderr.
"""
import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import torch

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig
from .corpus import (
    ClassLabel,
    DataFormatError,
    Dataset,
    build_vocab,
    decode,
    encode_pool,
    read_records,
    write_records,
)
from .evalkit.metrics import classify, evaluate
from .evalkit.synth import make_synth_corpus
from .network import SpamGAN
from .numcore import NonFiniteError, RngStreams
from .trainer import MetricsWriter, NonFiniteLossError, SpamGANTrainer

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_FILE = 3
EXIT_NON_FINITE = 4
EXIT_DATA_FORMAT = 5
EXIT_CHECKPOINT = 6
EXIT_OTHER = 1


def _float_list(text: str) -> List[float]:
    return [float(part) for part in text.split(",") if part.strip()]


def _int_list(text: str) -> List[int]:
    return [int(part) for part in text.split(",") if part.strip()]


def _class_label(text: str) -> ClassLabel:
    try:
        return ClassLabel.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spamgan",
        description="Semi-supervised opinion spam detection with a conditional sentence GAN.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    parser.add_argument("--seed", type=int, default=None, help="override the root seed")
    parser.add_argument("--out", type=Path, default=Path("."), help="output directory")
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress at INFO level")
    commands = parser.add_subparsers(dest="command", required=True)

    commands.add_parser(
        "train", help="pretrain and adversarially train, then write checkpoint and metrics"
    )

    generate = commands.add_parser("generate", help="print generated sentences of one class")
    generate.add_argument("--checkpoint", type=Path, required=True)
    generate.add_argument("--class", dest="label", type=_class_label, required=True,
                          help="spam or non-spam")
    generate.add_argument("--count", type=int, default=10)
    generate.add_argument("--p", type=float, default=None, help="top-p threshold")

    classify_cmd = commands.add_parser("classify", help="print label and spam score per record")
    classify_cmd.add_argument("--checkpoint", type=Path, required=True)
    classify_cmd.add_argument("input", type=Path, help="JSON-lines records, labels optional")

    eval_cmd = commands.add_parser("eval", help="print the evaluation report on labeled records")
    eval_cmd.add_argument("--checkpoint", type=Path, required=True)
    eval_cmd.add_argument("test", type=Path, help="JSON-lines records with labels")

    sweep_cmd = commands.add_parser("sweep", help="labeled by unlabeled fraction experiment grid")
    sweep_cmd.add_argument("--labeled-fractions", type=_float_list, default=[0.1, 0.5, 1.0])
    sweep_cmd.add_argument("--unlabeled-fractions", type=_float_list, default=[0.0, 1.0])
    sweep_cmd.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])
    sweep_cmd.add_argument("--table", type=Path, default=Path("sweep.csv"),
                           help="results table, relative to --out")

    commands.add_parser("synth-data", help="write a synthetic labeled/unlabeled/test corpus")
    commands.add_parser("print-config", help="print the effective configuration")
    return parser


def _load_config(args) -> RunConfig:
    config = RunConfig() if args.config is None else RunConfig.from_file(args.config)
    if args.seed is not None:
        config = config.replace(seed=args.seed)
    return config


def _training_data(config: RunConfig):
    """Vocabulary and dataset from the configured files, or the synthetic corpus."""
    if config.labeled_path is None:
        if config.unlabeled_path is not None:
            raise ConfigError("unlabeled_path is set without labeled_path", "unlabeled_path")
        logger.info("No labeled_path configured, training on the synthetic corpus")
        corpus = make_synth_corpus(config.synth_spec())
        return corpus.build(config.max_length)
    labeled = read_records(config.labeled_path, require_label=True)
    unlabeled = []
    if config.unlabeled_path is not None:
        unlabeled = [text for text, _ in read_records(config.unlabeled_path, require_label=False)]
    vocab = build_vocab([text for text, _ in labeled] + unlabeled, config.vocab_size)
    return vocab, Dataset.from_texts(labeled, unlabeled, vocab, config.max_length)


def cmd_train(args) -> int:
    config = _load_config(args)
    vocab, dataset = _training_data(config)
    args.out.mkdir(parents=True, exist_ok=True)
    model = SpamGAN.from_config(config, len(vocab), seed=config.seed)
    trainer = SpamGANTrainer(
        model,
        dataset,
        config.schedule(),
        seed=config.seed,
        metrics=MetricsWriter(args.out / config.metrics_path),
        cold_start=config.cold_start,
        log_wall_clock=config.log_wall_clock,
    )
    trainer.train()
    save_checkpoint(args.out / config.checkpoint_path, model, vocab, config)
    config.save(args.out / "config.json")
    logger.info("Wrote %s", args.out / config.checkpoint_path)
    return EXIT_OK


def cmd_generate(args) -> int:
    if args.count < 0:
        raise ValueError(f"count must be non-negative, got {args.count}")
    checkpoint = load_checkpoint(args.checkpoint)
    if args.count == 0:
        return EXIT_OK
    seed = checkpoint.config.seed if args.seed is None else args.seed
    strategy = checkpoint.config.decode()
    if strategy.teacher_forced:
        strategy = dataclasses.replace(strategy, kind="top-p")
    if args.p is not None:
        strategy = dataclasses.replace(strategy, p=args.p)
    generator = RngStreams(seed).generator("generate")
    model = checkpoint.model.generator
    z = model.noise.sample(args.count, generator)
    classes = torch.full((args.count,), int(args.label), dtype=torch.long)
    with torch.no_grad():
        sequences, _ = model.decode(classes, z, strategy, generator)
    for sequence in sequences:
        print(decode(sequence, checkpoint.vocab))
    return EXIT_OK


def cmd_classify(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    records = read_records(args.input)
    sequences, _ = encode_pool(
        [(text, ClassLabel.NON_SPAM) for text, _ in records],
        checkpoint.vocab,
        checkpoint.config.max_length,
    )
    labels, scores = classify(checkpoint.model.classifier, sequences)
    for label, score in zip(labels.tolist(), scores.tolist()):
        print(f"{ClassLabel(label)} {score:.6f}")
    return EXIT_OK


def cmd_eval(args) -> int:
    checkpoint = load_checkpoint(args.checkpoint)
    records = read_records(args.test, require_label=True)
    if not records:
        raise DataFormatError("no records to evaluate", args.test)
    sequences, labels = encode_pool(records, checkpoint.vocab, checkpoint.config.max_length)
    seed = checkpoint.config.seed if args.seed is None else args.seed
    report = evaluate(checkpoint.model, sequences, labels, seed=seed)
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .evalkit.sweep import sweep, write_table

    config = _load_config(args)
    records = None
    if config.labeled_path is not None:
        labeled = read_records(config.labeled_path, require_label=True)
        unlabeled = []
        if config.unlabeled_path is not None:
            unlabeled = read_records(config.unlabeled_path, require_label=False)
        records = (labeled, unlabeled)
    rows = sweep(config, args.labeled_fractions, args.unlabeled_fractions, args.seeds, records)
    write_table(args.out / args.table, rows)
    logger.info("Wrote %d rows to %s", len(rows), args.out / args.table)
    return EXIT_OK


def cmd_synth_data(args) -> int:
    config = _load_config(args)
    corpus = make_synth_corpus(config.synth_spec())
    write_records(args.out / "labeled.jsonl", corpus.labeled)
    write_records(args.out / "unlabeled.jsonl", [(text, None) for text, _ in corpus.unlabeled])
    write_records(args.out / "test.jsonl", corpus.test)
    return EXIT_OK


def cmd_print_config(args) -> int:
    print(_load_config(args).to_json())
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "generate": cmd_generate,
    "classify": cmd_classify,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "synth-data": cmd_synth_data,
    "print-config": cmd_print_config,
}


def _exit_code(error: BaseException) -> Optional[int]:
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, FileNotFoundError):
        return EXIT_MISSING_FILE
    if isinstance(error, (NonFiniteLossError, NonFiniteError)):
        return EXIT_NON_FINITE
    if isinstance(error, DataFormatError):
        return EXIT_DATA_FORMAT
    if isinstance(error, CheckpointError):
        return EXIT_CHECKPOINT
    return None


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return COMMANDS[args.command](args)
    except Exception as e:
        logger.debug("%s failed", args.command, exc_info=True)
        code = _exit_code(e)
        if code is None and e.__cause__ is not None:
            code = _exit_code(e.__cause__)
        if code is None:
            code = EXIT_OTHER
        if isinstance(e, FileNotFoundError):
            message = f"No such file: {e.filename}"
        else:
            message = str(e)
        print(f"spamgan: error: {message}", file=sys.stderr)
        return code
