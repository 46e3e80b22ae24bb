"""Binary containers and flat text formats.

BSNA (audio)::

    b"BSNA" | u32 version=1 | u32 sample_rate | u32 channels |
    u64 samples_per_channel | float32 planar payload

BSNT (tensor)::

    b"BSNT" | u32 version=1 | u32 rank | u32 dims[rank] | float32 row-major payload

All integers and floats are little-endian.
"""
from __future__ import annotations

import os
import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigurationError, DataError

AUDIO_MAGIC = b"BSNA"
TENSOR_MAGIC = b"BSNT"
VERSION = 1

_F32 = np.dtype("<f4")


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _write_bytes(path, payload: bytes) -> None:
    try:
        Path(path).write_bytes(payload)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def encode_audio(channels: np.ndarray, sample_rate: int) -> bytes:
    channels = np.atleast_2d(np.asarray(channels))
    n_ch, n = channels.shape
    header = AUDIO_MAGIC + struct.pack("<IIIQ", VERSION, int(sample_rate), n_ch, n)
    return header + np.ascontiguousarray(channels, dtype=_F32).tobytes()


def decode_audio(buf: bytes, source="<bytes>") -> tuple[np.ndarray, int]:
    if len(buf) < 24 or buf[:4] != AUDIO_MAGIC:
        raise DataError(f"{source}: not a BSNA file")
    version, rate, n_ch, n = struct.unpack_from("<IIIQ", buf, 4)
    if version != VERSION:
        raise DataError(f"{source}: unsupported BSNA version {version}")
    expected = 24 + 4 * n_ch * n
    if len(buf) != expected:
        raise DataError(f"{source}: payload is {len(buf) - 24} bytes, expected {expected - 24}")
    data = np.frombuffer(buf, dtype=_F32, offset=24).reshape(n_ch, n)
    return data.astype(np.float32), rate


def write_audio(path, channels: np.ndarray, sample_rate: int) -> None:
    _write_bytes(path, encode_audio(channels, sample_rate))


def read_audio(path) -> tuple[np.ndarray, int]:
    """Returns ``(channels x samples float32 array, sample_rate)``."""
    return decode_audio(_read_bytes(path), source=path)


def encode_tensor(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    header = TENSOR_MAGIC + struct.pack(f"<II{array.ndim}I", VERSION, array.ndim, *array.shape)
    return header + np.ascontiguousarray(array, dtype=_F32).tobytes()


def decode_tensor(buf: bytes, source="<bytes>") -> np.ndarray:
    if len(buf) < 12 or buf[:4] != TENSOR_MAGIC:
        raise DataError(f"{source}: not a BSNT file")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise DataError(f"{source}: unsupported BSNT version {version}")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    offset = 12 + 4 * rank
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) - offset != 4 * count:
        raise DataError(f"{source}: payload is {len(buf) - offset} bytes, expected {4 * count}")
    return np.frombuffer(buf, dtype=_F32, offset=offset).reshape(dims).copy()


def write_tensor(path, array: np.ndarray) -> None:
    _write_bytes(path, encode_tensor(array))


def read_tensor(path) -> np.ndarray:
    return decode_tensor(_read_bytes(path), source=path)


# -- key = value text ---------------------------------------------------------

def parse_kv(text: str, source="<text>") -> dict[str, str]:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigurationError(f"{source}:{lineno}: empty key")
        out[key] = value.strip()
    return out


def read_kv(path) -> dict[str, str]:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror or exc}") from exc
    return parse_kv(text, source=str(path))


def format_kv(items: Mapping[str, object]) -> str:
    return "".join(f"{k} = {_fmt(v)}\n" for k, v in items.items())


def write_kv(path, items: Mapping[str, object]) -> None:
    _write_bytes(path, format_kv(items).encode())


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ",".join(_fmt(x) for x in v)
    return str(v)


# -- manifest -----------------------------------------------------------------

def write_manifest(path, rows) -> None:
    _write_bytes(path, "".join(f"{sid}\t{split}\n" for sid, split in rows).encode())


def read_manifest(path) -> list[tuple[str, str]]:
    rows = []
    for lineno, line in enumerate(_read_bytes(path).decode().splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise DataError(f"{path}:{lineno}: malformed manifest row {line!r}")
        rows.append((parts[0], parts[1]))
    return rows


# -- checkpoints: a directory of BSNT files plus a name index -----------------

def write_checkpoint(directory, tensors: Mapping[str, np.ndarray], meta: Mapping[str, object]) -> None:
    directory = Path(directory)
    try:
        directory.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{directory}: {exc.strerror or exc}") from exc
    index_lines = []
    for i, (name, arr) in enumerate(tensors.items()):
        fname = f"t{i:04d}.bsnt"
        write_tensor(directory / fname, arr)
        index_lines.append(f"{name}\t{fname}\n")
    _write_bytes(directory / "index.txt", "".join(index_lines).encode())
    write_kv(directory / "meta.txt", meta)


def read_checkpoint(directory) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    directory = Path(directory)
    if not (directory / "index.txt").is_file():
        raise DataError(f"{directory}: not a checkpoint (missing index.txt)")
    tensors = {}
    for line in _read_bytes(directory / "index.txt").decode().splitlines():
        if not line:
            continue
        name, fname = line.split("\t")
        tensors[name] = read_tensor(directory / fname)
    meta = parse_kv(_read_bytes(directory / "meta.txt").decode(), source=str(directory / "meta.txt"))
    return tensors, meta


def ensure_dir(path) -> Path:
    path = Path(path)
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    return path
