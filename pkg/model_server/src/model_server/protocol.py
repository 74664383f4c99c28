"""Wire format for the batch-prediction endpoint.

Independent implementation of the protocol the patchshield engine
speaks; conformance of the two sides is pinned by the shared golden
fixtures, not by shared code.

Request: magic ``PCP1``, four uint32 LE (count, height, width,
channels), then count*height*width*channels float32 LE pixels in [0,1].
Response: count int32 LE labels.
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PCP1"
_HEADER = struct.Struct("<4I")
HEADER_LEN = len(MAGIC) + _HEADER.size


class ProtocolError(ValueError):
    """Malformed request body."""


def parse_request(data: bytes) -> np.ndarray:
    if len(data) < HEADER_LEN:
        raise ProtocolError(f"body too short: {len(data)} bytes")
    if data[:4] != MAGIC:
        raise ProtocolError("bad magic")
    count, n0, n1, c = _HEADER.unpack_from(data, 4)
    if min(n0, n1, c) < 1 and count > 0:
        raise ProtocolError(f"bad dimensions {n0}x{n1}x{c}")
    expected = HEADER_LEN + count * n0 * n1 * c * 4
    if len(data) != expected:
        raise ProtocolError(f"size mismatch: got {len(data)}, expected {expected}")
    if count == 0:
        return np.zeros((0, n0, n1, c), dtype=np.float32)
    flat = np.frombuffer(data, dtype="<f4", offset=HEADER_LEN)
    return flat.reshape(count, n0, n1, c)


def build_response(labels: list[int]) -> bytes:
    return struct.pack(f"<{len(labels)}i", *labels)
