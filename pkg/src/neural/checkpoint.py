import logging
import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from src.errors import DataError, FileFormatError
from src.storage import atomic_write_bytes

logger = logging.getLogger(__name__)

TNSR_MAGIC = b"TNSR"


def tensors_to_bytes(arrays: Dict[str, np.ndarray]) -> bytes:
    """TNSR layout: magic, u32 count, then per array u16 name length, name, u8 rank, u32 dims, f64 LE values"""
    chunks = [TNSR_MAGIC, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        value = np.asarray(arrays[name], dtype="<f8")
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF or value.ndim > 0xFF:
            raise DataError(f"Array {name} cannot be stored in TNSR format")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", value.ndim))
        chunks.append(struct.pack(f"<{value.ndim}I", *value.shape))
        chunks.append(value.tobytes(order="C"))
    return b"".join(chunks)


def tensors_from_bytes(data: bytes) -> Dict[str, np.ndarray]:
    if data[:4] != TNSR_MAGIC:
        raise FileFormatError(f"Bad tensor magic: {data[:4]!r}")
    try:
        offset = 4
        (count,) = struct.unpack_from("<I", data, offset)
        offset += 4
        arrays = {}
        for _ in range(count):
            (name_length,) = struct.unpack_from("<H", data, offset)
            offset += 2
            name = data[offset:offset + name_length].decode("utf-8")
            offset += name_length
            (rank,) = struct.unpack_from("<B", data, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", data, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if offset + 8 * size > len(data):
                raise FileFormatError(f"Truncated values for array {name}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=offset).reshape(shape).astype(np.float64)
            offset += 8 * size
    except (struct.error, UnicodeDecodeError) as e:
        raise FileFormatError(f"Malformed TNSR data: {e}", cause=e)
    if offset != len(data):
        raise FileFormatError(f"{len(data) - offset} trailing bytes after TNSR arrays")
    return arrays


def save_tensors(arrays: Dict[str, np.ndarray], path: Union[str, Path]) -> Path:
    path = atomic_write_bytes(path, tensors_to_bytes(arrays))
    logger.debug(f"Saved {len(arrays)} arrays to {path}")
    return path


def load_tensors(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"Cannot read checkpoint {path}: {e}", cause=e)
    return tensors_from_bytes(data)
