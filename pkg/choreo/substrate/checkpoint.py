"""
Checkpoint codec: flat name → (shape, values) maps on disk.

Binary layout (little-endian, version byte first so a reader can refuse a
newer major before parsing anything else):

  header   <B4sI   format version, magic b'CHKP', entry count
  per entry:
    name_len   <H          UTF-8 byte length of the name
    name       {n}s        tensor name, e.g. 'param/gru.weight_ih'
    ndim       <B          number of dimensions (0 for scalars)
    dims       <{ndim}I    dimension sizes
    values     <{size}d    float64 values, row-major

JSON layout (diagnostics / hand inspection)::

  {"version": 1, "tensors": {"name": {"shape": [..], "values": [..]}}}

Usage::

    from choreo.substrate.checkpoint import save_checkpoint, load_checkpoint
    save_checkpoint('run/world_model.ckpt', params.state_tensors())
    tensors = load_checkpoint('run/world_model.ckpt')
"""

import json
import logging
import os
import struct
from typing import Dict, Mapping

import numpy as np
import torch

from choreo.errors import CheckpointError
from choreo.substrate.core import DTYPE

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1

_HEADER   = struct.Struct('<B4sI')
_NAME_LEN = struct.Struct('<H')
_NDIM     = struct.Struct('<B')
_MAGIC    = b'CHKP'


class CheckpointSchema:
    """Packs and unpacks binary checkpoint payloads."""

    MAGIC   = _MAGIC
    VERSION = FORMAT_VERSION

    @staticmethod
    def pack(tensors: Mapping[str, torch.Tensor]) -> bytes:
        """Serialise ``tensors`` in name order; values are cast to float64."""
        parts = [_HEADER.pack(FORMAT_VERSION, _MAGIC, len(tensors))]
        for name in sorted(tensors):
            arr = np.ascontiguousarray(
                torch.as_tensor(tensors[name]).detach().cpu().numpy(), dtype='<f8'
            )
            name_bytes = name.encode('utf-8')
            parts.append(_NAME_LEN.pack(len(name_bytes)))
            parts.append(name_bytes)
            parts.append(_NDIM.pack(arr.ndim))
            parts.append(struct.pack(f'<{arr.ndim}I', *arr.shape))
            parts.append(arr.tobytes())
        return b''.join(parts)

    @staticmethod
    def unpack(data: bytes) -> Dict[str, torch.Tensor]:
        """
        Deserialise a binary payload.

        Raises:
            CheckpointError: bad magic, mismatched major version or truncation.
        """
        if len(data) < _HEADER.size:
            raise CheckpointError('header', "truncated")
        version, magic, count = _HEADER.unpack_from(data, 0)
        if version != FORMAT_VERSION:
            raise CheckpointError('version', f"{version} is not supported (expected {FORMAT_VERSION})")
        if magic != _MAGIC:
            raise CheckpointError('magic', f"{magic!r} != {_MAGIC!r}")

        offset = _HEADER.size
        out = {}
        try:
            for _ in range(count):
                (name_len,) = _NAME_LEN.unpack_from(data, offset)
                offset += _NAME_LEN.size
                name = data[offset:offset + name_len].decode('utf-8')
                offset += name_len
                (ndim,) = _NDIM.unpack_from(data, offset)
                offset += _NDIM.size
                dims = struct.unpack_from(f'<{ndim}I', data, offset)
                offset += 4 * ndim
                size = int(np.prod(dims)) if ndim else 1
                values = np.frombuffer(data, dtype='<f8', count=size, offset=offset)
                offset += 8 * size
                out[name] = torch.from_numpy(values.astype(np.float64).reshape(dims)).to(DTYPE)
        except (struct.error, ValueError) as exc:
            raise CheckpointError('payload', f"truncated or corrupt ({exc})") from exc
        return out


def tensors_to_json(tensors: Mapping[str, torch.Tensor]) -> dict:
    return {
        'version': FORMAT_VERSION,
        'tensors': {
            name: {
                'shape':  list(torch.as_tensor(t).shape),
                'values': torch.as_tensor(t).detach().reshape(-1).tolist(),
            }
            for name, t in sorted(tensors.items())
        },
    }


def tensors_from_json(doc: dict) -> Dict[str, torch.Tensor]:
    version = doc.get('version')
    if version != FORMAT_VERSION:
        raise CheckpointError('version', f"{version} is not supported (expected {FORMAT_VERSION})")
    out = {}
    for name, entry in doc.get('tensors', {}).items():
        shape = entry['shape']
        out[name] = torch.tensor(entry['values'], dtype=DTYPE).reshape(shape)
    return out


def save_checkpoint(path: str, tensors: Mapping[str, torch.Tensor], fmt: str = 'binary') -> None:
    """Write ``tensors`` to ``path`` atomically (temp file + rename)."""
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = path + '.tmp'
    if fmt == 'binary':
        with open(tmp_path, 'wb') as f:
            f.write(CheckpointSchema.pack(tensors))
    elif fmt == 'json':
        with open(tmp_path, 'w', encoding='utf-8') as f:
            json.dump(tensors_to_json(tensors), f)
    else:
        raise ValueError(f"unknown checkpoint format '{fmt}'")
    os.replace(tmp_path, path)
    logger.debug(f"checkpoint written: {path} ({len(tensors)} tensors, {fmt})")


def load_checkpoint(path: str) -> Dict[str, torch.Tensor]:
    """Read a binary or JSON checkpoint; the format is detected from the first byte."""
    try:
        with open(path, 'rb') as f:
            data = f.read()
    except FileNotFoundError as exc:
        raise CheckpointError(os.path.basename(path), "file not found") from exc
    if data[:1] == b'{':
        return tensors_from_json(json.loads(data.decode('utf-8')))
    return CheckpointSchema.unpack(data)
