from __future__ import annotations

import random
from itertools import combinations_with_replacement

import numpy as np
import pytest

from patchshield.classifiers import Image, TableClassifier, apply_mask
from patchshield.masks import ImageGeometry, MaskSet


def distinct_image(geom: ImageGeometry) -> Image:
    """Image with a distinct nonzero value per pixel (no value collides
    with the default fill of 0.0 after 8-bit quantization)."""
    count = geom.pixel_count
    assert count <= 120, "keep test images tiny"
    flat = (np.arange(count, dtype=np.float32) + 1.0) * 2.0 / 255.0
    pixels = np.repeat(flat.reshape(geom.height, geom.width, 1), geom.channels, axis=2)
    return Image(geom, pixels)


def masked_key(x: Image, ms: MaskSet, combo, fill: float = 0.0) -> str:
    img = x
    for idx in combo:
        img = apply_mask(img, ms.masks[idx], fill)
    return TableClassifier.key_for(img, fill)


def table_for_combos(
    x: Image,
    ms: MaskSet,
    labeler,
    label_space_size: int,
    default_label: int = 0,
    depth: int = 2,
    fill: float = 0.0,
) -> TableClassifier:
    """Table classifier answering ``labeler(combo)`` on every masked view
    of ``x`` with up to ``depth`` masks applied.

    Combos sharing a rendered view share a key; the labeler must agree
    on them (checked).
    """
    entries: dict[str, int] = {}
    for size in range(1, depth + 1):
        for combo in combinations_with_replacement(range(len(ms)), size):
            key = masked_key(x, ms, combo, fill)
            label = labeler(combo)
            if key in entries:
                assert entries[key] == label, f"labeler inconsistent at {combo}"
            entries[key] = label
    return TableClassifier(label_space_size, default_label, entries, fill)


def region_random_labeler(ms: MaskSet, rng: random.Random, n_labels: int):
    """Random labels that are constant on combos with identical unions."""
    regions = ms.zero_regions()
    cache: dict[bytes, int] = {}

    def labeler(combo):
        union = regions[combo[0]]
        for idx in combo[1:]:
            union = union | regions[idx]
        key = union.tobytes()
        if key not in cache:
            cache[key] = rng.randrange(n_labels)
        return cache[key]

    return labeler


@pytest.fixture
def rng():
    return random.Random(1234)
