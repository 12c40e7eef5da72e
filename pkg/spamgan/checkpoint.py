"""
Binary checkpoint of a trained :class:`SpamGAN`.

Layout: the magic ``SGCK``, a little-endian uint32 format version, a
little-endian uint64 manifest length, the manifest as UTF-8 JSON and then the
parameters as contiguous little-endian 32-bit floats at the byte offsets the
manifest lists (relative to the start of the payload).
"""
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

import numpy as np
import torch

from .config import RunConfig
from .corpus import Vocab
from .network import SpamGAN

MAGIC = b"SGCK"
FORMAT_VERSION = 1
ELEMENT_TYPE = "f32"
_HEADER = struct.Struct("<4sIQ")
_ELEMENT_BYTES = 4


class CheckpointError(ValueError):
    """The file is not a usable checkpoint."""


class UnrecognizedCheckpointError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class ShapeMismatchError(CheckpointError):
    def __init__(self, message: str, name: str):
        super().__init__(message)
        self.name = name


class TruncatedCheckpointError(CheckpointError):
    pass


@dataclass
class ParameterEntry:
    name: str
    shape: List[int]
    offset: int
    dtype: str = ELEMENT_TYPE

    @property
    def num_bytes(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64)) * _ELEMENT_BYTES


@dataclass
class CheckpointManifest:
    """Everything needed to rebuild the models and read the payload."""

    seed: int
    vocab: List[str]
    config: dict
    schedule: dict
    parameters: List[ParameterEntry] = field(default_factory=list)
    payload_bytes: int = 0
    version: int = FORMAT_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_dict(cls, values: dict) -> "CheckpointManifest":
        try:
            parameters = [ParameterEntry(**entry) for entry in values["parameters"]]
            return cls(
                seed=values["seed"],
                vocab=values["vocab"],
                config=values["config"],
                schedule=values["schedule"],
                parameters=parameters,
                payload_bytes=values["payload_bytes"],
                version=values["version"],
            )
        except (KeyError, TypeError) as e:
            raise UnrecognizedCheckpointError(f"Malformed checkpoint manifest: {e}")


@dataclass
class Checkpoint:
    model: SpamGAN
    vocab: Vocab
    config: RunConfig
    manifest: CheckpointManifest


def save_checkpoint(
    path: Union[str, Path],
    model: SpamGAN,
    vocab: Vocab,
    config: RunConfig,
    seed: Optional[int] = None,
) -> CheckpointManifest:
    """
    Write every parameter of ``model`` with the vocabulary and the run
    configuration. Parameters of a 64-bit model are down-cast to f32.
    """
    chunks = []
    entries = []
    offset = 0
    downcast = False
    for name, param in model.named_parameters():
        values = param.detach().cpu()
        if values.dtype != torch.float32:
            downcast = True
        data = values.numpy().astype("<f4").tobytes()
        entries.append(ParameterEntry(name=name, shape=list(values.shape), offset=offset))
        chunks.append(data)
        offset += len(data)
    if downcast:
        warnings.warn(f"Checkpoint {path}: parameters down-cast to 32-bit floats")

    manifest = CheckpointManifest(
        seed=config.seed if seed is None else seed,
        vocab=list(vocab.tokens),
        config=config.to_dict(),
        schedule=config.schedule().to_dict(),
        parameters=entries,
        payload_bytes=offset,
    )
    encoded = manifest.to_json().encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as handle:
        handle.write(_HEADER.pack(MAGIC, FORMAT_VERSION, len(encoded)))
        handle.write(encoded)
        for chunk in chunks:
            handle.write(chunk)
    return manifest


def read_checkpoint(path: Union[str, Path]):
    """
    Parse and validate a checkpoint file.

    Returns
    -------
    The manifest and a dictionary of named f32 tensors.
    """
    raw = Path(path).read_bytes()
    if len(raw) < len(MAGIC) or raw[: len(MAGIC)] != MAGIC:
        raise UnrecognizedCheckpointError(f"{path}: unrecognized checkpoint (bad magic bytes)")
    if len(raw) < _HEADER.size:
        raise TruncatedCheckpointError(f"{path}: truncated checkpoint header")
    _, version, manifest_length = _HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint format version {version}, expected {FORMAT_VERSION}"
        )
    start = _HEADER.size + manifest_length
    if len(raw) < start:
        raise TruncatedCheckpointError(f"{path}: truncated checkpoint manifest")
    try:
        values = json.loads(raw[_HEADER.size : start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise UnrecognizedCheckpointError(f"{path}: corrupt checkpoint manifest ({e})")
    if not isinstance(values, dict):
        raise UnrecognizedCheckpointError(f"{path}: corrupt checkpoint manifest")
    manifest = CheckpointManifest.from_dict(values)

    payload = raw[start:]
    if len(payload) < manifest.payload_bytes:
        raise TruncatedCheckpointError(
            f"{path}: payload has {len(payload)} bytes, manifest lists {manifest.payload_bytes}"
        )
    if len(payload) > manifest.payload_bytes:
        raise CheckpointError(f"{path}: {len(payload) - manifest.payload_bytes} trailing bytes")

    previous = 0
    for index, entry in enumerate(manifest.parameters):
        misplaced = entry.offset != 0 if index == 0 else entry.offset < previous
        if misplaced or entry.offset > manifest.payload_bytes or entry.offset % _ELEMENT_BYTES:
            raise CheckpointError(
                f"{path}: parameter `{entry.name}` has an invalid payload offset {entry.offset}"
            )
        previous = entry.offset

    tensors = {}
    ends = [entry.offset for entry in manifest.parameters[1:]] + [manifest.payload_bytes]
    for entry, end in zip(manifest.parameters, ends):
        if entry.dtype != ELEMENT_TYPE:
            raise CheckpointError(f"{path}: parameter `{entry.name}` has type {entry.dtype}")
        if end - entry.offset != entry.num_bytes:
            raise ShapeMismatchError(
                f"{path}: shape {entry.shape} of parameter `{entry.name}` needs "
                f"{entry.num_bytes} bytes, payload holds {end - entry.offset}",
                entry.name,
            )
        values = np.frombuffer(
            payload,
            dtype="<f4",
            count=entry.num_bytes // _ELEMENT_BYTES,
            offset=entry.offset,
        )
        tensors[entry.name] = torch.from_numpy(values.astype(np.float32)).reshape(entry.shape)
    return manifest, tensors


def load_parameters(model: SpamGAN, tensors: Dict[str, torch.Tensor]) -> None:
    """Copy named tensors into ``model``; names and shapes must match exactly."""
    params = dict(model.named_parameters())
    missing = sorted(set(params) - set(tensors))
    unexpected = sorted(set(tensors) - set(params))
    if missing or unexpected:
        raise CheckpointError(
            f"Checkpoint does not match the model: missing {missing}, unexpected {unexpected}"
        )
    with torch.no_grad():
        for name, param in params.items():
            if tuple(param.shape) != tuple(tensors[name].shape):
                raise ShapeMismatchError(
                    f"Parameter `{name}` has shape {tuple(param.shape)} in the model "
                    f"and {tuple(tensors[name].shape)} in the checkpoint",
                    name,
                )
            param.copy_(tensors[name])


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """Rebuild the models, vocabulary and configuration stored at ``path``."""
    manifest, tensors = read_checkpoint(path)
    config = RunConfig.from_dict(manifest.config)
    vocab = Vocab(manifest.vocab)
    model = SpamGAN.from_config(config, len(vocab))
    load_parameters(model, tensors)
    model.eval()
    return Checkpoint(model=model, vocab=vocab, config=config, manifest=manifest)
