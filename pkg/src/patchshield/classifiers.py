"""Classifier oracle contract and backends.

The defense only needs a batch label oracle. Three backends are
provided: a lookup-table classifier for deterministic tests, a remote
client speaking the binary batch protocol, and a call-counting wrapper
for complexity assertions.
"""
from __future__ import annotations

import json
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np
import requests

from . import wire
from .errors import BackendUnavailable, GeometryMismatch
from .masks import ImageGeometry, MaskSpec

Label = int


@dataclass
class Image:
    """Dense pixel grid in [0, 1], laid out (height, width, channels)."""

    geometry: ImageGeometry
    pixels: np.ndarray

    def __post_init__(self) -> None:
        expected = (self.geometry.height, self.geometry.width, self.geometry.channels)
        self.pixels = np.asarray(self.pixels, dtype=np.float32)
        if self.pixels.shape != expected:
            raise GeometryMismatch(f"pixel shape {self.pixels.shape} != geometry {expected}")
        if self.pixels.size and (self.pixels.min() < 0.0 or self.pixels.max() > 1.0):
            raise ValueError("pixel values must lie in [0, 1]")


def apply_mask(x: Image, m: MaskSpec, fill: float = 0.0) -> Image:
    """Replace pixels inside the mask rectangles with the fill value.

    Idempotent, and commutative across masks: applying several masks in
    any order blanks the union of their rectangles.
    """
    region = m.zero_region(x.geometry)
    if not region.any():
        return Image(x.geometry, x.pixels)
    out = x.pixels.copy()
    out[region] = fill
    return Image(x.geometry, out)


class ClassifierHandle(ABC):
    """Batch label oracle. Implementations must be safe for concurrent calls."""

    @abstractmethod
    def predict_batch(self, images: list[Image]) -> list[Label]:
        """One label per image, order-preserving, deterministic."""


def predict_batch(c: ClassifierHandle, images: list[Image]) -> list[Label]:
    """Front door for batch prediction; validates a shared geometry."""
    if not images:
        return []
    geom = images[0].geometry
    for img in images[1:]:
        if img.geometry != geom:
            raise GeometryMismatch("batch mixes image geometries")
    return c.predict_batch(images)


class TableClassifier(ClassifierHandle):
    """Deterministic lookup classifier keyed on the visible pixels.

    A pixel is treated as visible when any of its channels differs from
    the mask fill value after 8-bit quantization; the key serializes the
    visible coordinates with their quantized values. Masked-out content
    therefore never influences the key, so two images that differ only
    inside a fully blanked region map to the same label.
    """

    def __init__(
        self,
        label_space_size: int,
        default_label: Label = 0,
        entries: dict[str, Label] | None = None,
        fill: float = 0.0,
    ):
        if label_space_size < 1:
            raise ValueError("label_space_size must be >= 1")
        if not 0 <= default_label < label_space_size:
            raise ValueError("default_label outside the label space")
        self.label_space_size = label_space_size
        self.default_label = default_label
        self.entries = dict(entries or {})
        for key, label in self.entries.items():
            if not 0 <= label < label_space_size:
                raise ValueError(f"entry label {label} outside the label space ({key[:40]}...)")
        self.fill = fill

    @staticmethod
    def key_for(image: Image, fill: float = 0.0) -> str:
        g = image.geometry
        quant = np.rint(image.pixels * 255).astype(np.int16)
        fill_q = int(round(fill * 255))
        visible = np.any(quant != fill_q, axis=2)
        parts = [f"g:{g.height}x{g.width}x{g.channels}"]
        for i, j in zip(*np.nonzero(visible)):
            vals = ",".join(str(int(v)) for v in quant[i, j])
            parts.append(f"{i},{j}:{vals}")
        return "|".join(parts)

    def predict_batch(self, images: list[Image]) -> list[Label]:
        return [
            self.entries.get(self.key_for(img, self.fill), self.default_label)
            for img in images
        ]

    def to_dict(self) -> dict:
        return {
            "label_space_size": self.label_space_size,
            "default_label": self.default_label,
            "fill": self.fill,
            "entries": self.entries,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "TableClassifier":
        return cls(
            label_space_size=int(doc["label_space_size"]),
            default_label=int(doc.get("default_label", 0)),
            entries={str(k): int(v) for k, v in doc.get("entries", {}).items()},
            fill=float(doc.get("fill", 0.0)),
        )

    @classmethod
    def load(cls, path: str) -> "TableClassifier":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


class CallCounter(ClassifierHandle):
    """Wrapper counting single-image evaluations across batch calls."""

    def __init__(self, wrapped: ClassifierHandle):
        self.wrapped = wrapped
        self._count = 0
        self._lock = threading.Lock()

    @property
    def count(self) -> int:
        return self._count

    def predict_batch(self, images: list[Image]) -> list[Label]:
        with self._lock:
            self._count += len(images)
        return self.wrapped.predict_batch(images)


class RemoteClassifier(ClassifierHandle):
    """Client for the binary batch protocol over HTTP POST."""

    def __init__(self, url: str, timeout: float = 30.0):
        if not url.rstrip("/").endswith("/predict"):
            url = url.rstrip("/") + "/predict"
        self.url = url
        self.timeout = timeout

    def predict_batch(self, images: list[Image]) -> list[Label]:
        if not images:
            return []
        batch = np.stack([img.pixels for img in images])
        body = wire.encode_request(batch)
        try:
            resp = requests.post(
                self.url,
                data=body,
                headers={"Content-Type": "application/octet-stream"},
                timeout=self.timeout,
            )
        except requests.RequestException as exc:
            raise BackendUnavailable(f"cannot reach {self.url}: {exc}") from exc
        if resp.status_code != 200:
            raise BackendUnavailable(
                f"{self.url} answered {resp.status_code}: {resp.content[:200].decode('utf-8', 'replace')}"
            )
        return wire.decode_response(resp.content, len(images))
