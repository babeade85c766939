"""Binary corpus cache and model checkpoint files.

Both share one container layout::

    magic (8 bytes) | u32 version | u64 header length | JSON header | float64 payload

All integers and floats are little-endian. The JSON header is written with
sorted keys so identical content yields identical bytes.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from lab.datapipe import Corpus, SeriesRecord
from lab.tsformer import ModelConfig, TimeSeriesTransformer
from utils.error_handler import CheckpointError, CorpusError, LabError
from utils.logger import get_logger

logger = get_logger('storage')

CORPUS_MAGIC = b'LTMCORP\0'
CHECKPOINT_MAGIC = b'LTMCKPT\0'
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct('<IQ')


def _dump_header(header: dict[str, Any]) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(',', ':')).encode('utf-8')


def _write_container(
    path: Path, magic: bytes, header: dict[str, Any], payload: np.ndarray
) -> None:
    header_bytes = _dump_header(header)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + '.tmp')
    with open(tmp, 'wb') as fh:
        fh.write(magic)
        fh.write(_PREAMBLE.pack(FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(payload, dtype='<f8').tobytes())
    os.replace(tmp, path)


def _read_container(
    path: Path, magic: bytes, error_cls: type[LabError]
) -> tuple[dict[str, Any], np.ndarray]:
    if not path.is_file():
        raise error_cls(f'{str(path)!r} does not exist')
    raw = path.read_bytes()
    prefix = len(magic) + _PREAMBLE.size
    if len(raw) < prefix or raw[: len(magic)] != magic:
        raise error_cls(f'{str(path)!r} is not a {magic[:-1].decode()} file')
    version, header_len = _PREAMBLE.unpack_from(raw, len(magic))
    if version != FORMAT_VERSION:
        raise error_cls(f'{str(path)!r} has unsupported format version {version}')
    if len(raw) < prefix + header_len:
        raise error_cls(f'{str(path)!r} is truncated inside its header')
    try:
        header = json.loads(raw[prefix : prefix + header_len].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise error_cls(f'{str(path)!r} has a corrupt header: {e}') from e
    body = raw[prefix + header_len :]
    if len(body) % 8:
        raise error_cls(f'{str(path)!r} payload is not a whole number of float64 values')
    return header, np.frombuffer(body, dtype='<f8').astype(np.float64)


@dataclass(frozen=True)
class CorpusCache:
    train: Corpus
    test: Corpus
    header: dict[str, Any]

    @property
    def seq_len(self) -> int:
        return int(self.header['seq_len'])


def write_corpus_cache(
    path: str | Path,
    train: Corpus,
    test: Corpus,
    seq_len: int,
    manifest_hash: str,
) -> Path:
    """Persist a split, normalized corpus."""
    path = Path(path)
    series: list[dict[str, Any]] = []
    chunks: list[np.ndarray] = []
    offset = 0
    for split_name, corpus in (('train', train), ('test', test)):
        for record in corpus:
            series.append(
                {
                    'source': record.source,
                    'id': record.id,
                    'split': split_name,
                    'length': record.length,
                    'offset': offset,
                }
            )
            chunks.append(record.values)
            offset += record.length
    header = {
        'kind': 'corpus',
        'seq_len': seq_len,
        'manifest_hash': manifest_hash,
        'series': series,
    }
    payload = np.concatenate(chunks) if chunks else np.zeros(0)
    _write_container(path, CORPUS_MAGIC, header, payload)
    logger.info(f'Wrote corpus cache {path} ({len(series)} series, {offset} points)')
    return path


def read_corpus_cache(path: str | Path) -> CorpusCache:
    header, payload = _read_container(Path(path), CORPUS_MAGIC, CorpusError)
    splits: dict[str, list[SeriesRecord]] = {'train': [], 'test': []}
    for entry in header['series']:
        start, length = entry['offset'], entry['length']
        if start + length > payload.size:
            raise CorpusError(f'{str(path)!r} is truncated inside series {entry["id"]!r}')
        splits[entry['split']].append(
            SeriesRecord(entry['source'], entry['id'], payload[start : start + length])
        )
    return CorpusCache(
        train=Corpus(tuple(splits['train'])),
        test=Corpus(tuple(splits['test'])),
        header=header,
    )


def save_checkpoint(
    path: str | Path, model: TimeSeriesTransformer, meta: dict[str, Any] | None = None
) -> Path:
    """Write ModelConfig, tensor names/shapes and raw parameter data."""
    path = Path(path)
    state = model.state_dict()
    header = {
        'kind': 'checkpoint',
        'config': model.config.to_dict(),
        'tensors': [{'name': name, 'shape': list(value.shape)} for name, value in state.items()],
        'meta': meta or {},
    }
    payload = np.concatenate([v.reshape(-1) for v in state.values()])
    _write_container(path, CHECKPOINT_MAGIC, header, payload)
    logger.debug(f'Saved checkpoint {path}')
    return path


def load_checkpoint(path: str | Path) -> tuple[TimeSeriesTransformer, dict[str, Any]]:
    header, payload = _read_container(Path(path), CHECKPOINT_MAGIC, CheckpointError)
    config = ModelConfig.from_dict(header['config'])
    state: dict[str, np.ndarray] = {}
    offset = 0
    for entry in header['tensors']:
        shape = tuple(entry['shape'])
        size = int(np.prod(shape))
        if offset + size > payload.size:
            raise CheckpointError(f'{str(path)!r} is truncated inside tensor {entry["name"]!r}')
        state[entry['name']] = payload[offset : offset + size].reshape(shape)
        offset += size
    if offset != payload.size:
        raise CheckpointError(f'{str(path)!r} has {payload.size - offset} trailing values')
    return TimeSeriesTransformer.from_state(config, state), header.get('meta', {})
