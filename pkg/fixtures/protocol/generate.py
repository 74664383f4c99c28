#!/usr/bin/env python3
"""Regenerate the golden wire-protocol fixtures.

Written with plain struct/numpy on purpose: these bytes are the neutral
reference both the engine's client and the model server are tested
against, so neither package's serializer is trusted to produce them.

Request: 2 images, 4x5x3; image 0 leans on channel 2, image 1 on
channel 0: pixel value ((k*1000 + i*100 + j*10 + ch) % 200) / 255 with
ch = c for image 0 and ch = 2 - c for image 1.
Response: stub-model labels (argmax of per-channel mean, ties to the
lowest channel index) for those images: [2, 0].
"""
import struct
from pathlib import Path

import numpy as np

HERE = Path(__file__).parent


def build_batch() -> np.ndarray:
    count, n0, n1, c = 2, 4, 5, 3
    idx = np.indices((count, n0, n1, c))
    ch = np.where(idx[0] == 0, idx[3], 2 - idx[3])
    values = (idx[0] * 1000 + idx[1] * 100 + idx[2] * 10 + ch) % 200
    return (values / 255.0).astype(np.float32)


def main() -> None:
    batch = build_batch()
    count, n0, n1, c = batch.shape
    request = b"PCP1" + struct.pack("<4I", count, n0, n1, c) + batch.astype("<f4").tobytes()
    labels = [int(np.argmax(img.mean(axis=(0, 1)))) for img in batch]
    response = struct.pack(f"<{count}i", *labels)
    (HERE / "request.bin").write_bytes(request)
    (HERE / "response.bin").write_bytes(response)
    print(f"wrote request.bin ({len(request)} bytes), response.bin ({len(response)} bytes), labels={labels}")


if __name__ == "__main__":
    main()
