"""Binary batch-prediction protocol.

Request body: magic ``PCP1``, then four little-endian uint32 fields
(count, height, width, channels), then count*height*width*channels
little-endian IEEE-754 float32 pixel values in [0, 1], height-major.
Response body: count little-endian int32 label ids. Errors travel as
non-200 HTTP statuses with a UTF-8 message body.
"""
from __future__ import annotations

import struct

import numpy as np

from .errors import MalformedImage

MAGIC = b"PCP1"
HEADER = struct.Struct("<4I")
HEADER_LEN = len(MAGIC) + HEADER.size


def encode_request(batch: np.ndarray) -> bytes:
    """Serialize a (count, height, width, channels) float array."""
    if batch.ndim != 4:
        raise ValueError(f"batch must be 4-D, got shape {batch.shape}")
    count, n0, n1, c = batch.shape
    payload = np.ascontiguousarray(batch, dtype="<f4").tobytes()
    return MAGIC + HEADER.pack(count, n0, n1, c) + payload


def decode_request(data: bytes) -> np.ndarray:
    """Parse a request body back into a (count, height, width, channels) array."""
    if len(data) < HEADER_LEN or data[:4] != MAGIC:
        raise MalformedImage("bad magic or truncated header")
    count, n0, n1, c = HEADER.unpack_from(data, 4)
    expected = HEADER_LEN + count * n0 * n1 * c * 4
    if len(data) != expected:
        raise MalformedImage(f"payload size {len(data)} != expected {expected}")
    if count == 0:
        return np.zeros((0, n0, n1, c), dtype=np.float32)
    flat = np.frombuffer(data, dtype="<f4", offset=HEADER_LEN)
    return flat.reshape(count, n0, n1, c).astype(np.float32)


def encode_response(labels: list[int]) -> bytes:
    return struct.pack(f"<{len(labels)}i", *labels)


def decode_response(data: bytes, count: int) -> list[int]:
    if len(data) != 4 * count:
        raise MalformedImage(f"response size {len(data)} != {4 * count}")
    return list(struct.unpack(f"<{count}i", data))
