"""
Checkpoint
Binary checkpoint files (magic, version, JSON header, raw float32 data)
and top-k checkpoint averaging.
"""

import json
import os
import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, List, Sequence

import numpy as np

from ..common import CheckpointError, ModelConfig, ValidationError
from .model import Parameters, check_params
from .tensor import Tensor

MAGIC = b"UASR"
FORMAT_VERSION = 1
_LENGTH = struct.Struct("<I")
_STORAGE = np.dtype("<f4")


@dataclass
class Checkpoint:
    """Model config, parameters and the validation loss they scored"""
    config: ModelConfig
    params: Parameters
    val_loss: float
    step: int


def save_checkpoint(checkpoint: Checkpoint, path: str):
    """Write a checkpoint; tensor order follows the parameter map"""
    manifest = []
    blobs = []
    offset = 0
    for name, tensor in checkpoint.params.items():
        data = np.ascontiguousarray(tensor.values, dtype=_STORAGE).tobytes()
        manifest.append({'name': name, 'shape': list(tensor.shape), 'offset': offset})
        blobs.append(data)
        offset += len(data)

    header = json.dumps({
        'config': checkpoint.config.to_dict(),
        'val_loss': float(checkpoint.val_loss),
        'step': int(checkpoint.step),
        'tensors': manifest,
    }).encode('utf-8')

    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, 'wb') as f:
        f.write(MAGIC)
        f.write(bytes([FORMAT_VERSION]))
        f.write(_LENGTH.pack(len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path: str) -> Checkpoint:
    """Read a checkpoint written by save_checkpoint"""
    try:
        with open(path, 'rb') as f:
            raw = f.read()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}")

    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    position = len(MAGIC)
    if len(raw) < position + 1 + _LENGTH.size:
        raise CheckpointError(f"{path} is truncated")
    version = raw[position]
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format version {version}")
    position += 1
    (header_length,) = _LENGTH.unpack_from(raw, position)
    position += _LENGTH.size
    try:
        header = json.loads(raw[position:position + header_length].decode('utf-8'))
        config = ModelConfig.from_dict(header['config'])
        manifest = header['tensors']
    except (ValueError, KeyError, TypeError, ValidationError) as e:
        raise CheckpointError(f"corrupt checkpoint header in {path}: {e}")
    data = raw[position + header_length:]

    params: Parameters = OrderedDict()
    for entry in manifest:
        shape = tuple(entry['shape'])
        count = int(np.prod(shape)) if shape else 1
        end = entry['offset'] + count * _STORAGE.itemsize
        if end > len(data):
            raise CheckpointError(f"{path} is truncated at tensor {entry['name']}")
        values = np.frombuffer(data, dtype=_STORAGE, count=count, offset=entry['offset']).reshape(shape)
        params[entry['name']] = Tensor(values.astype(np.float32), requires_grad=True, dtype=np.float32)
    try:
        check_params(params, config)
    except ValidationError as e:
        raise CheckpointError(f"{path}: {e}")
    return Checkpoint(config=config, params=params,
                      val_loss=float(header['val_loss']), step=int(header['step']))


def select_top_k(checkpoints: Sequence[Checkpoint], k: int) -> List[Checkpoint]:
    """k lowest validation losses; ties go to the later step"""
    if not 1 <= k <= len(checkpoints):
        raise ValidationError(f"k must lie in [1, {len(checkpoints)}], got {k}")
    ranked = sorted(checkpoints, key=lambda c: (c.val_loss, -c.step))
    return ranked[:k]


def average_parameters(checkpoints: Sequence[Checkpoint]) -> Parameters:
    """Arithmetic mean of each parameter across checkpoints sharing one config"""
    if not checkpoints:
        raise ValidationError("nothing to average")
    reference = checkpoints[0].config
    for checkpoint in checkpoints[1:]:
        if checkpoint.config != reference:
            raise CheckpointError("cannot average checkpoints with different model configs")

    averaged: Parameters = OrderedDict()
    for name in checkpoints[0].params:
        total = np.zeros(checkpoints[0].params[name].shape, dtype=np.float64)
        for checkpoint in checkpoints:
            total += checkpoint.params[name].values
        averaged[name] = Tensor((total / len(checkpoints)).astype(np.float32),
                                requires_grad=True, dtype=np.float32)
    return averaged


def average_checkpoints(paths: Sequence[str], k: int) -> Parameters:
    """Load checkpoint files and average the k best by validation loss"""
    checkpoints = [load_checkpoint(path) for path in paths]
    if not checkpoints:
        raise ValidationError("no checkpoints given")
    reference = checkpoints[0].config
    for path, checkpoint in zip(paths, checkpoints):
        if checkpoint.config != reference:
            raise CheckpointError(f"config of {path} differs from {paths[0]}")
    return average_parameters(select_top_k(checkpoints, k))


def averaged_checkpoint(paths: Sequence[str], k: int) -> Checkpoint:
    """average_checkpoints packaged as a Checkpoint (best selected loss, latest step)"""
    checkpoints = [load_checkpoint(path) for path in paths]
    if not checkpoints:
        raise ValidationError("no checkpoints given")
    selected = select_top_k(checkpoints, k)
    params = average_parameters(selected)
    return Checkpoint(
        config=selected[0].config,
        params=params,
        val_loss=min(c.val_loss for c in selected),
        step=max(c.step for c in selected),
    )


def parameter_summary(params: Parameters) -> Dict[str, int]:
    """Element count per parameter"""
    return {name: int(tensor.values.size) for name, tensor in params.items()}
