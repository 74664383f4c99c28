"""Covering mask-set construction and verification.

A mask is a union of axis-aligned rectangles that zero out part of an
image. A mask set is *covering* for a threat model when, for every
admissible patch placement, at least one mask blanks the whole patch.
This module builds such sets on a call budget (stride/size solving),
verifies the covering property exhaustively, constructs rectangle shape
covers for area budgets, and combines masks for multi-patch threats.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from math import comb
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import ConstructionFailure, GeometryMismatch, ResourceLimit

# Hard default for combination enumeration; callers can raise it explicitly.
DEFAULT_COMBINATION_CAP = 100_000


@dataclass(frozen=True)
class ImageGeometry:
    """Pixel grid dimensions: height first, then width, then channels."""

    height: int
    width: int
    channels: int = 1

    def __post_init__(self) -> None:
        if self.height < 1 or self.width < 1 or self.channels < 1:
            raise ValueError(
                f"geometry dimensions must be >= 1, got {self.height}x{self.width}x{self.channels}"
            )

    @property
    def pixel_count(self) -> int:
        return self.height * self.width


@dataclass(frozen=True)
class PatchThreatModel:
    """Admissible patch shapes, either explicit or via an area budget.

    ``shapes`` lists (height, width) rectangles the attacker may use.
    When ``area_budget`` is given instead, every rectangle whose area is
    <= the budget (inclusive) and that fits the image is admissible.
    ``patch_count`` is the number of simultaneous patches.
    """

    shapes: tuple[tuple[int, int], ...] = ()
    patch_count: int = 1
    area_budget: Optional[int] = None

    def __post_init__(self) -> None:
        if self.patch_count < 1:
            raise ValueError("patch_count must be >= 1")
        if self.area_budget is None and not self.shapes:
            raise ValueError("threat model needs explicit shapes or an area_budget")
        if self.area_budget is not None and self.area_budget < 1:
            raise ValueError("area_budget must be >= 1")
        for p0, p1 in self.shapes:
            if p0 < 1 or p1 < 1:
                raise ValueError(f"patch shape must be positive, got {p0}x{p1}")

    def admissible_shapes(self, geom: ImageGeometry) -> list[tuple[int, int]]:
        """Maximal admissible shapes for this threat model on ``geom``.

        For explicit shapes this is the shape list (checked against the
        image). For an area budget it is the Pareto frontier of
        (height, width) pairs with area <= budget: covering those covers
        every smaller rectangle placed anywhere inside them.
        """
        if self.area_budget is None:
            for p0, p1 in self.shapes:
                if p0 > geom.height or p1 > geom.width:
                    raise GeometryMismatch(
                        f"patch {p0}x{p1} does not fit image {geom.height}x{geom.width}"
                    )
            return list(self.shapes)
        return maximal_shapes_for_budget(self.area_budget, geom)


def _normalized_rects(rects: Iterable[Sequence[int]]) -> tuple[tuple[int, int, int, int], ...]:
    out = sorted({(int(t), int(l), int(h), int(w)) for t, l, h, w in rects})
    return tuple(out)


@dataclass(frozen=True)
class MaskSpec:
    """One mask: the union of rectangles (top, left, height, width).

    Rendering produces ones everywhere except inside the rectangles,
    which become the mask fill value.
    """

    rects: tuple[tuple[int, int, int, int], ...]

    def __init__(self, rects: Iterable[Sequence[int]]):
        object.__setattr__(self, "rects", _normalized_rects(rects))

    def zero_region(self, geom: ImageGeometry) -> np.ndarray:
        """Boolean (height, width) grid, True where this mask blanks pixels."""
        region = np.zeros((geom.height, geom.width), dtype=bool)
        for top, left, h, w in self.rects:
            if top < 0 or left < 0 or h < 0 or w < 0:
                raise ValueError(f"negative rect {(top, left, h, w)}")
            if top + h > geom.height or left + w > geom.width:
                raise GeometryMismatch(
                    f"rect {(top, left, h, w)} exceeds image {geom.height}x{geom.width}"
                )
            region[top : top + h, left : left + w] = True
        return region

    def union(self, other: "MaskSpec") -> "MaskSpec":
        return MaskSpec(self.rects + other.rects)


@dataclass(frozen=True)
class MaskSet:
    """Ordered, duplicate-free list of masks over one image geometry.

    ``params`` records provenance: stride/size/budget for grid sets, the
    area budget for shape-cover sets, or the combination arity for
    multi-patch sets. It is carried through serialization untouched.
    """

    geometry: ImageGeometry
    masks: tuple[MaskSpec, ...]
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        seen = set()
        for m in self.masks:
            if m.rects in seen:
                raise ValueError(f"duplicate mask {m.rects}")
            seen.add(m.rects)
            m.zero_region(self.geometry)  # bounds check

    def __len__(self) -> int:
        return len(self.masks)

    def zero_regions(self) -> list[np.ndarray]:
        return [m.zero_region(self.geometry) for m in self.masks]


def compute_mask_params(n: int, p_est: int, k: int) -> tuple[int, int]:
    """Solve mask stride and size from the mask-count budget.

    Given an axis of ``n`` pixels, an estimated patch extent ``p_est``,
    and a budget of ``k`` mask positions, returns (stride, size) such
    that the strided placements blank every patch of extent <= p_est
    while using at most k positions. If the solved size exceeds the
    axis, the size is clamped to ``n`` (a single full-span placement).
    """
    if k < 1:
        raise ValueError("mask budget k must be >= 1")
    if p_est < 1 or p_est > n:
        raise ValueError(f"estimated patch extent {p_est} outside [1, {n}]")
    s = math.ceil((n - p_est + 1) / k)
    m = p_est + s - 1
    if m > n:
        m = n
    return s, m


def generate_1d_index_set(n: int, m: int, s: int) -> list[int]:
    """Placement offsets for a size-``m`` mask strided by ``s`` over ``n`` pixels.

    The progression 0, s, 2s, ... is extended with the final offset
    n - m so the tail of the axis is always reachable; a collision at
    the tail is deduplicated.
    """
    if s < 1:
        raise ValueError("stride must be >= 1")
    if m < 1 or m > n:
        raise ValueError(f"mask extent {m} outside [1, {n}]")
    last = n - m
    indices = list(range(0, last + 1, s))
    if indices[-1] != last:
        indices.append(last)
    return indices


def mask_set_size(n: int, m: int, s: int) -> int:
    """Number of distinct placements produced by ``generate_1d_index_set``."""
    return len(generate_1d_index_set(n, m, s))


def max_certified_patch_size(m: int, s: int) -> int:
    """Largest patch extent the (m, s) strided placements are guaranteed to blank."""
    if s < 1:
        raise ValueError("stride must be >= 1")
    if s > m:
        raise ValueError(f"stride {s} > mask extent {m} leaves uncovered gaps")
    return m - s + 1


def generate_mask_set_1d(n: int, m: int, s: int) -> MaskSet:
    """Mask set over a 1 x n image, one full-height rect per placement."""
    geom = ImageGeometry(height=1, width=n)
    masks = tuple(MaskSpec([(0, i, 1, m)]) for i in generate_1d_index_set(n, m, s))
    return MaskSet(geom, masks, params={"kind": "grid", "m": [1, m], "s": [1, s], "k": [1, len(masks)]})


def generate_mask_set_2d(
    geom: ImageGeometry,
    p_est: tuple[int, int],
    budget: tuple[int, int],
) -> MaskSet:
    """Grid mask set: per-axis stride/size solving, placements at the index product.

    Mask order is row-major over the placement index sets.
    """
    p0, p1 = p_est
    k0, k1 = budget
    s0, m0 = compute_mask_params(geom.height, p0, k0)
    s1, m1 = compute_mask_params(geom.width, p1, k1)
    rows = generate_1d_index_set(geom.height, m0, s0)
    cols = generate_1d_index_set(geom.width, m1, s1)
    masks = tuple(MaskSpec([(i, j, m0, m1)]) for i in rows for j in cols)
    params = {
        "kind": "grid",
        "m": [m0, m1],
        "s": [s0, s1],
        "k": [k0, k1],
        "p_est": [p0, p1],
    }
    return MaskSet(geom, masks, params=params)


def _window_all_true(region: np.ndarray, p0: int, p1: int) -> np.ndarray:
    """For each (p0, p1) window position, whether the region is all True there.

    Uses an integral image; O(height * width) per call.
    """
    h, w = region.shape
    if p0 > h or p1 > w:
        return np.zeros((0, 0), dtype=bool)
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    np.cumsum(np.cumsum(region, axis=0), axis=1, out=ii[1:, 1:])
    sums = ii[p0:, p1:] - ii[:-p0 or None, p1:] - ii[p0:, : -p1 or None] + ii[: h - p0 + 1, : w - p1 + 1]
    return sums == p0 * p1


def covered_placements(ms: MaskSet, p0: int, p1: int) -> np.ndarray:
    """Boolean grid over all (top, left) placements of a p0 x p1 patch:
    True where some mask blanks the whole patch."""
    geom = ms.geometry
    n_pos0 = geom.height - p0 + 1
    n_pos1 = geom.width - p1 + 1
    if n_pos0 < 1 or n_pos1 < 1:
        raise GeometryMismatch(f"patch {p0}x{p1} does not fit image {geom.height}x{geom.width}")
    covered = np.zeros((n_pos0, n_pos1), dtype=bool)
    for region in ms.zero_regions():
        covered |= _window_all_true(region, p0, p1)
        if covered.all():
            break
    return covered


def verify_r_covering(ms: MaskSet, tm: PatchThreatModel) -> bool:
    """Exhaustively check that every admissible single-patch placement is blanked.

    Pure predicate over all shapes and all top-left positions. Multi-patch
    threat models are handled by construction elsewhere; here only the
    single-patch covering of each shape is checked.
    """
    if len(ms.masks) == 0:
        return False
    for p0, p1 in tm.admissible_shapes(ms.geometry):
        if not covered_placements(ms, p0, p1).all():
            return False
    return True


def maximal_shapes_for_budget(area_budget: int, geom: ImageGeometry) -> list[tuple[int, int]]:
    """Pareto-maximal rectangles with area <= budget that fit the image."""
    if area_budget < 1:
        raise ValueError("area_budget must be >= 1")
    hmax = min(geom.height, area_budget)
    frontier: list[tuple[int, int]] = []
    for a in range(1, hmax + 1):
        b = min(geom.width, area_budget // a)
        if b < 1:
            break
        if frontier and frontier[-1][1] == b:
            frontier[-1] = (a, b)  # taller at equal width dominates
        else:
            frontier.append((a, b))
    return frontier


def verify_shape_cover(
    shapes: Sequence[tuple[int, int]],
    area_budget: int,
    geom: ImageGeometry,
) -> bool:
    """Exhaustive domination check for a shape-cover candidate.

    True iff every rectangle a x b with a*b <= area_budget (inclusive)
    that fits the image satisfies a <= h and b <= w for some (h, w) in
    ``shapes``. Runs over every admissible height with its maximal
    width; smaller widths are dominated transitively.
    """
    by_height = sorted(shapes, key=lambda s: s[0])
    heights = [h for h, _ in by_height]
    best_w_from = [0] * (len(by_height) + 1)
    for idx in range(len(by_height) - 1, -1, -1):
        best_w_from[idx] = max(best_w_from[idx + 1], by_height[idx][1])
    import bisect

    for a in range(1, min(geom.height, area_budget) + 1):
        b_needed = min(geom.width, area_budget // a)
        if b_needed < 1:
            break
        idx = bisect.bisect_left(heights, a)
        if best_w_from[idx] < b_needed:
            return False
    return True


def generate_shape_cover_set(area_budget: int, geom: ImageGeometry) -> list[tuple[int, int]]:
    """Small set of rectangles dominating every rectangle within the area budget.

    Height thresholds grow roughly geometrically: each threshold is
    paired with the widest width any taller-than-previous rectangle can
    have, and the next threshold is pushed to about twice the budget
    divided by that width, keeping each cover shape's area near twice
    the budget. The result is always run through the exhaustive
    domination verifier; a failure raises instead of returning.
    """
    if area_budget < 1 or area_budget > geom.pixel_count:
        raise ValueError(f"area_budget {area_budget} outside [1, {geom.pixel_count}]")
    hmax = min(geom.height, area_budget)
    shapes: list[tuple[int, int]] = []
    t_prev = 0
    while t_prev < hmax:
        w = min(geom.width, area_budget // (t_prev + 1))
        t = min(hmax, max(t_prev + 1, (2 * area_budget) // max(w, 1)))
        shapes.append((t, w))
        t_prev = t
    # Drop shapes dominated by another member.
    pruned = [
        s
        for s in shapes
        if not any(o != s and o[0] >= s[0] and o[1] >= s[1] for o in shapes)
    ]
    if not verify_shape_cover(pruned, area_budget, geom):
        raise ConstructionFailure(
            f"shape cover for budget {area_budget} on {geom.height}x{geom.width} "
            "failed its domination check"
        )
    return pruned


def generate_shape_cover_mask_set(
    area_budget: int,
    geom: ImageGeometry,
    budget: tuple[int, int],
) -> MaskSet:
    """Union of grid mask sets, one per cover shape, deduplicated in order."""
    shapes = generate_shape_cover_set(area_budget, geom)
    masks: list[MaskSpec] = []
    seen = set()
    per_shape = []
    for p0, p1 in shapes:
        sub = generate_mask_set_2d(geom, (p0, p1), budget)
        per_shape.append({"shape": [p0, p1], **{k: sub.params[k] for k in ("m", "s")}})
        for m in sub.masks:
            if m.rects not in seen:
                seen.add(m.rects)
                masks.append(m)
    params = {
        "kind": "shape_cover",
        "area_budget": area_budget,
        "k": list(budget),
        "per_shape": per_shape,
    }
    return MaskSet(geom, tuple(masks), params=params)


def generate_multi_patch_mask_set(
    base: MaskSet,
    patches: int,
    cap: int = DEFAULT_COMBINATION_CAP,
) -> MaskSet:
    """All size-``patches`` multisets of base masks, rendered as rect unions.

    If the base set blanks any single patch, some combination blanks all
    ``patches`` simultaneous patches (pick one covering mask per patch).
    Combinations whose rendered regions coincide are deduplicated,
    keeping the first in combination order.
    """
    if patches < 1:
        raise ValueError("patches must be >= 1")
    n = len(base.masks)
    count = comb(n + patches - 1, patches)
    if count > cap:
        raise ResourceLimit(f"{count} mask combinations exceed cap {cap}")
    regions = base.zero_regions()
    masks: list[MaskSpec] = []
    seen: set[bytes] = set()
    for combo in combinations_with_replacement(range(n), patches):
        union = np.zeros((base.geometry.height, base.geometry.width), dtype=bool)
        rects: list[tuple[int, int, int, int]] = []
        for idx in combo:
            union |= regions[idx]
            rects.extend(base.masks[idx].rects)
        key = union.tobytes()
        if key in seen:
            continue
        seen.add(key)
        masks.append(MaskSpec(rects))
    params = {"kind": "multi_patch", "patches": patches, "base": base.params}
    return MaskSet(base.geometry, tuple(masks), params=params)


# ---------------------------------------------------------------------------
# Serialization: geometry, generation params, and per-mask rectangle lists.

def mask_set_to_dict(ms: MaskSet) -> dict:
    return {
        "geometry": {
            "height": ms.geometry.height,
            "width": ms.geometry.width,
            "channels": ms.geometry.channels,
        },
        "params": ms.params,
        "masks": [{"rects": [list(r) for r in m.rects]} for m in ms.masks],
    }


def mask_set_from_dict(doc: dict) -> MaskSet:
    g = doc["geometry"]
    geom = ImageGeometry(height=int(g["height"]), width=int(g["width"]), channels=int(g.get("channels", 1)))
    masks = tuple(MaskSpec(m["rects"]) for m in doc["masks"])
    return MaskSet(geom, masks, params=dict(doc.get("params", {})))


def save_mask_set(ms: MaskSet, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(mask_set_to_dict(ms), fh, indent=2)
        fh.write("\n")


def load_mask_set(path: str) -> MaskSet:
    with open(path, "r", encoding="utf-8") as fh:
        return mask_set_from_dict(json.load(fh))
