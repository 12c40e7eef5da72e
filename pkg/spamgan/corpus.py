"""
Tokenization, vocabulary, fixed-length encoding and the labeled/unlabeled
review pools the models train on.
"""
import json
from collections import Counter
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import torch

SPECIAL_TOKENS = ("<start>", "<end>", "<pad>", "<unk>")
START_ID, END_ID, PAD_ID, UNK_ID = range(len(SPECIAL_TOKENS))


class DataFormatError(ValueError):
    """A dataset record could not be parsed. ``line`` is 1-based."""

    def __init__(self, message: str, path=None, line: Optional[int] = None):
        location = ""
        if path is not None:
            location += f"{path}"
        if line is not None:
            location += f":{line}"
        super().__init__(f"{location}: {message}" if location else message)
        self.path = path
        self.line = line


class ClassLabel(IntEnum):
    NON_SPAM = 0
    SPAM = 1

    @classmethod
    def parse(cls, text: str) -> "ClassLabel":
        normalized = str(text).strip().lower()
        if normalized == "spam":
            return cls.SPAM
        if normalized in ("nonspam", "non-spam"):
            return cls.NON_SPAM
        raise ValueError(f"Unknown class `{text}`, expected spam or non-spam")

    @property
    def record_name(self) -> str:
        """Spelling used in dataset files."""
        return "spam" if self is ClassLabel.SPAM else "nonspam"

    def __str__(self):
        return "spam" if self is ClassLabel.SPAM else "non-spam"


@dataclass(frozen=True)
class ClassPrior:
    """
    Prior over the two classes.

    Parameters:
        spam: probability of drawing the spam class.
    """

    spam: float = 0.5

    def __post_init__(self):
        if not 0.0 <= self.spam <= 1.0:
            raise ValueError(f"Spam prior must lie in [0, 1], got {self.spam}")


def sample_class(prior: ClassPrior, generator: torch.Generator) -> ClassLabel:
    draw = torch.rand(1, generator=generator).item()
    return ClassLabel.SPAM if draw < prior.spam else ClassLabel.NON_SPAM


def sample_classes(prior: ClassPrior, count: int, generator: torch.Generator) -> torch.Tensor:
    """Vectorised :func:`sample_class`, returned as a long tensor of 0/1."""
    return (torch.rand(count, generator=generator) < prior.spam).long()


def tokenize(text: str) -> List[str]:
    return text.lower().split()


class Vocab:
    """
    Bijective token <-> id mapping. The four special tokens occupy ids 0-3
    in the order ``<start>, <end>, <pad>, <unk>``.
    """

    def __init__(self, tokens: Sequence[str], max_size: Optional[int] = None):
        tokens = list(tokens)
        if tuple(tokens[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"Vocab must start with {SPECIAL_TOKENS}")
        if len(set(tokens)) != len(tokens):
            raise ValueError("Vocab tokens must be unique")
        if max_size is not None and len(tokens) > max_size:
            raise ValueError(f"Vocab has {len(tokens)} tokens, limit is {max_size}")
        self.tokens = tokens
        self.max_size = max_size
        self._index = {token: i for i, token in enumerate(tokens)}

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, token):
        return token in self._index

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.tokens == other.tokens

    def id_of(self, token: str) -> int:
        return self._index.get(token, UNK_ID)

    def token_of(self, token_id: int) -> str:
        return self.tokens[token_id]


def build_vocab(texts: Iterable[str], max_size: int) -> Vocab:
    """
    Build a vocabulary of at most ``max_size`` tokens: the specials first, then
    words by descending frequency with ties broken lexicographically.
    """
    if max_size <= len(SPECIAL_TOKENS):
        raise ValueError(f"max_size must exceed {len(SPECIAL_TOKENS)}, got {max_size}")
    counts = Counter(
        token
        for text in texts
        for token in tokenize(text)
        if token not in SPECIAL_TOKENS
    )
    ranked = sorted(counts.items(), key=lambda item: (-item[1], item[0]))
    words = [word for word, _ in ranked[: max_size - len(SPECIAL_TOKENS)]]
    return Vocab(list(SPECIAL_TOKENS) + words, max_size=max_size)


@dataclass(frozen=True, eq=False)
class TokenSequence:
    """
    One encoded review: ``ids`` of fixed length T and the length before padding.
    """

    ids: torch.Tensor
    length: int

    def __len__(self):
        return self.ids.shape[0]

    @property
    def positions(self) -> torch.Tensor:
        """Zero-based position indices of the T slots."""
        return torch.arange(len(self))

    @property
    def padding_mask(self) -> torch.Tensor:
        return self.ids == PAD_ID


def encode(text: str, vocab: Vocab, max_length: int) -> TokenSequence:
    """
    ``<start>`` + word ids + ``<end>``, padded to ``max_length``. Content that
    does not fit is truncated to exactly ``max_length`` tokens and loses its
    ``<end>``.
    """
    if max_length < 3:
        raise ValueError(f"max_length must be at least 3, got {max_length}")
    words = [vocab.id_of(token) for token in tokenize(text)]
    content = [START_ID] + words + [END_ID]
    if len(content) > max_length:
        content = [START_ID] + words[: max_length - 1]
    ids = content + [PAD_ID] * (max_length - len(content))
    return TokenSequence(torch.tensor(ids, dtype=torch.long), len(content))


def decode(sequence: Union[TokenSequence, torch.Tensor], vocab: Vocab) -> str:
    """Text of the tokens between ``<start>`` and the first ``<end>`` or ``<pad>``."""
    ids = sequence.ids if isinstance(sequence, TokenSequence) else sequence
    words = []
    for token_id in ids.tolist():
        if token_id in (END_ID, PAD_ID):
            break
        if token_id == START_ID:
            continue
        words.append(vocab.token_of(token_id))
    return " ".join(words)


@dataclass(frozen=True, eq=False)
class Example:
    sequence: TokenSequence
    label: Optional[ClassLabel] = None


class Dataset:
    """
    The labeled pool D_L of (sequence, label) pairs and the unlabeled pool D_U.
    Their union D stands in for the real data distribution.
    """

    def __init__(
        self,
        labeled: Sequence[Tuple[TokenSequence, ClassLabel]],
        unlabeled: Sequence[TokenSequence] = (),
    ):
        labeled_ids = {id(seq) for seq, _ in labeled}
        if any(id(seq) in labeled_ids for seq in unlabeled):
            raise ValueError("Labeled and unlabeled pools must be disjoint")
        self.labeled = [Example(seq, ClassLabel(label)) for seq, label in labeled]
        self.unlabeled = [Example(seq) for seq in unlabeled]

    @classmethod
    def from_texts(
        cls,
        labeled: Sequence[Tuple[str, ClassLabel]],
        unlabeled: Sequence[str],
        vocab: Vocab,
        max_length: int,
    ) -> "Dataset":
        return cls(
            [(encode(text, vocab, max_length), label) for text, label in labeled],
            [encode(text, vocab, max_length) for text in unlabeled],
        )

    def __len__(self):
        return len(self.labeled) + len(self.unlabeled)

    def labeled_view(self) -> List[Example]:
        return list(self.labeled)

    def unlabeled_view(self) -> List[Example]:
        return list(self.unlabeled)

    def union_view(self) -> List[Example]:
        return self.labeled + self.unlabeled


@dataclass
class Batch:
    """
    Stacked sequences (B, T). ``labels`` holds true labels where ``labeled`` is
    set and prior-sampled ones elsewhere; it is ``None`` when unlabeled items
    were batched without a prior.
    """

    sequences: torch.Tensor
    labels: Optional[torch.Tensor]
    labeled: torch.Tensor

    def __len__(self):
        return self.sequences.shape[0]


def stack_sequences(sequences: Sequence[TokenSequence]) -> torch.Tensor:
    return torch.stack([seq.ids for seq in sequences])


def batches(
    pool: Sequence[Example],
    batch_size: int,
    shuffle_seed: int,
    prior: Optional[ClassPrior] = None,
) -> List[Batch]:
    """
    Shuffle ``pool`` deterministically from ``shuffle_seed`` and cut it into
    batches; the final short batch is kept. Unlabeled items receive labels
    drawn from ``prior`` when one is given.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be at least 1, got {batch_size}")
    if not pool:
        return []
    gen = torch.Generator()
    gen.manual_seed(shuffle_seed)
    order = torch.randperm(len(pool), generator=gen).tolist()

    result = []
    for start in range(0, len(pool), batch_size):
        items = [pool[i] for i in order[start : start + batch_size]]
        labeled = torch.tensor([item.label is not None for item in items])
        if labeled.all() or prior is not None:
            sampled = sample_classes(prior or ClassPrior(), len(items), gen)
            true = torch.tensor([int(item.label or 0) for item in items])
            labels = torch.where(labeled, true, sampled)
        else:
            labels = None
        result.append(
            Batch(
                sequences=stack_sequences([item.sequence for item in items]),
                labels=labels,
                labeled=labeled,
            )
        )
    return result


def read_records(
    path: Union[str, Path], require_label: Optional[bool] = None
) -> List[Tuple[str, Optional[ClassLabel]]]:
    """
    Read a JSON-lines dataset file of ``{"text": ..., "label": ...}`` records.

    Parameters
    ----------
    path: str or Path
        File to read. Blank lines are skipped.
    require_label: bool or None
        True for labeled files (label mandatory), False for unlabeled files
        (label forbidden), None to accept both.
    """
    path = Path(path)
    records = []
    with path.open(encoding="utf-8") as handle:
        for line_number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataFormatError(f"invalid JSON ({e.msg})", path, line_number)
            if not isinstance(record, dict) or not isinstance(record.get("text"), str):
                raise DataFormatError("record needs a string `text` field", path, line_number)
            unknown = set(record) - {"text", "label"}
            if unknown:
                raise DataFormatError(f"unknown fields {sorted(unknown)}", path, line_number)
            label = record.get("label")
            if require_label and label is None:
                raise DataFormatError("labeled record without `label`", path, line_number)
            if require_label is False and label is not None:
                raise DataFormatError("unlabeled file contains a `label`", path, line_number)
            if label is not None:
                try:
                    label = ClassLabel.parse(label)
                except ValueError as e:
                    raise DataFormatError(str(e), path, line_number)
            records.append((record["text"], label))
    return records


def write_records(
    path: Union[str, Path], records: Iterable[Tuple[str, Optional[ClassLabel]]]
) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as handle:
        for text, label in records:
            record = {"text": text}
            if label is not None:
                record["label"] = ClassLabel(label).record_name
            handle.write(json.dumps(record) + "\n")


def encode_pool(
    pool: Sequence[Tuple[str, ClassLabel]], vocab: Vocab, max_length: int
) -> Tuple[torch.Tensor, torch.Tensor]:
    """Stacked sequences (N, T) and labels (N,) of labeled texts."""
    if not pool:
        return torch.zeros((0, max_length), dtype=torch.long), torch.zeros(0, dtype=torch.long)
    sequences = stack_sequences([encode(text, vocab, max_length) for text, _ in pool])
    labels = torch.tensor([int(label) for _, label in pool], dtype=torch.long)
    return sequences, labels
