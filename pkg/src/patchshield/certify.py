"""Per-image robustness certification and dataset metrics.

An image is certified when the mask set blanks every admissible patch
placement and the classifier stays correct under every two-mask
combination; such an image keeps its correct prediction under any
attack inside the threat model, which the adversary simulation checks
empirically on small instances.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from itertools import combinations_with_replacement
from math import comb
from typing import Optional, Sequence

from .classifiers import ClassifierHandle, Image, Label
from .defense import DefenseOutcome, challenger_masking, double_masking, make_image_evaluator
from .errors import GeometryMismatch, MalformedImage, ResourceLimit
from .masks import (
    DEFAULT_COMBINATION_CAP,
    MaskSet,
    PatchThreatModel,
    generate_multi_patch_mask_set,
    verify_r_covering,
)


class CertReason(str, Enum):
    OK = "OK"
    NOT_COVERING = "NOT_COVERING"
    TWO_MASK_FAILURE = "TWO_MASK_FAILURE"


@dataclass(frozen=True)
class Certificate:
    certified: bool
    reason: CertReason
    failing_pair: Optional[tuple[int, int, Label]] = None
    calls: int = 0
    # Multi-patch failures report the whole failing mask combination.
    failing_combo: Optional[tuple[int, ...]] = None


@dataclass(frozen=True)
class ItemRecord:
    index: int
    true_label: Label
    predicted: Optional[Label]
    exit_case: Optional[str]
    clean_correct: bool
    certified: bool
    reason: Optional[str]
    error: Optional[str] = None


@dataclass(frozen=True)
class DatasetMetrics:
    total: int
    clean_correct: int
    certified: int
    clean_accuracy: float
    certified_accuracy: float
    items: tuple[ItemRecord, ...] = field(default=())


def _evaluate_combos(
    eval_fn, combos: list[tuple[int, ...]], y: Label, batch_size: int, early_exit: bool
) -> tuple[Optional[int], Optional[Label], int]:
    """Run combos in order; return (first wrong index, its label, evaluations done)."""
    first_bad = None
    wrong = None
    done = 0
    for start in range(0, len(combos), batch_size):
        chunk = combos[start : start + batch_size]
        labels = eval_fn(chunk)
        done += len(chunk)
        for offset, lab in enumerate(labels):
            if lab != y:
                first_bad = start + offset
                wrong = lab
                break
        if first_bad is not None and early_exit:
            return first_bad, wrong, done
        if first_bad is not None:
            break
    if first_bad is not None and not early_exit:
        # Full-matrix mode still reports the lexicographically first failure,
        # so finish the remaining combos for diagnostics.
        for start in range(done, len(combos), batch_size):
            chunk = combos[start : start + batch_size]
            eval_fn(chunk)
            done += len(chunk)
    return first_bad, wrong, done


def certify(
    x: Image,
    y: Label,
    c: ClassifierHandle,
    ms: MaskSet,
    tm: PatchThreatModel,
    fill: float = 0.0,
    batch_size: int = 256,
    early_exit: bool = True,
) -> Certificate:
    """Single-patch certification: covering check, then all two-mask predictions.

    Pairs are unordered with repetition (mask application commutes and
    the repeated pair subsumes the one-mask case), evaluated in
    lexicographic index order; the first failing pair is reported.
    """
    if len(ms) == 0:
        raise ValueError("mask set is empty")
    if tm.patch_count != 1:
        raise ValueError("use certify_multi_patch for patch_count >= 2")
    if not verify_r_covering(ms, tm):
        return Certificate(False, CertReason.NOT_COVERING)
    eval_fn = make_image_evaluator(x, c, ms, fill)
    pairs = list(combinations_with_replacement(range(len(ms)), 2))
    bad, wrong, done = _evaluate_combos(eval_fn, pairs, y, batch_size, early_exit)
    if bad is not None:
        i, j = pairs[bad]
        return Certificate(False, CertReason.TWO_MASK_FAILURE, failing_pair=(i, j, wrong), calls=done)
    return Certificate(True, CertReason.OK, calls=done)


def certify_multi_patch(
    x: Image,
    y: Label,
    c: ClassifierHandle,
    base: MaskSet,
    tm: PatchThreatModel,
    fill: float = 0.0,
    batch_size: int = 256,
    early_exit: bool = True,
    cap: int = DEFAULT_COMBINATION_CAP,
) -> Certificate:
    """Certification against ``tm.patch_count`` simultaneous patches.

    The defense runs with all patch_count-mask unions of the base set;
    correctness of every (2 * patch_count)-mask combination of the base
    set implies the same guarantee as the single-patch theorem applied
    to the union mask set.
    """
    if len(base) == 0:
        raise ValueError("mask set is empty")
    k = tm.patch_count
    if k < 2:
        raise ValueError("certify_multi_patch requires patch_count >= 2")
    single = PatchThreatModel(shapes=tm.shapes, patch_count=1, area_budget=tm.area_budget)
    if not verify_r_covering(base, single):
        return Certificate(False, CertReason.NOT_COVERING)
    n = len(base)
    count = comb(n + 2 * k - 1, 2 * k)
    if count > cap:
        raise ResourceLimit(f"{count} mask combinations exceed cap {cap}")
    eval_fn = make_image_evaluator(x, c, base, fill)
    combos = list(combinations_with_replacement(range(n), 2 * k))
    bad, _, done = _evaluate_combos(eval_fn, combos, y, batch_size, early_exit)
    if bad is not None:
        return Certificate(
            False,
            CertReason.TWO_MASK_FAILURE,
            calls=done,
            failing_combo=combos[bad],
        )
    return Certificate(True, CertReason.OK, calls=done)


def evaluate_dataset(
    items: Sequence[tuple[Image, Label]],
    c: ClassifierHandle,
    ms: MaskSet,
    tm: PatchThreatModel,
    fill: float = 0.0,
    algorithm: str = "double",
    parallelism: int = 1,
) -> DatasetMetrics:
    """Clean and certified accuracy over labeled items.

    Clean correctness uses the defense on the unmodified image; the
    certified count uses per-image certification. Per-item domain
    failures are recorded in the item records instead of aborting the
    run; backend failures propagate.
    """
    if not items:
        raise ValueError("dataset is empty")
    if len(ms) == 0:
        raise ValueError("mask set is empty")
    if algorithm not in ("double", "challenger"):
        raise ValueError(f"unknown algorithm {algorithm!r}")
    # For multi-patch threats ``ms`` is the single-patch base set; the
    # defense itself runs on the union combinations.
    defense_ms = ms if tm.patch_count == 1 else generate_multi_patch_mask_set(ms, tm.patch_count)

    def run_item(idx_item: tuple[int, tuple[Image, Label]]) -> ItemRecord:
        idx, (img, y) = idx_item
        try:
            if algorithm == "double":
                outcome: DefenseOutcome = double_masking(img, c, defense_ms, fill)
            else:
                outcome = challenger_masking(img, c, defense_ms, fill)
            if tm.patch_count == 1:
                cert = certify(img, y, c, ms, tm, fill)
            else:
                cert = certify_multi_patch(img, y, c, ms, tm, fill)
            return ItemRecord(
                index=idx,
                true_label=y,
                predicted=outcome.label,
                exit_case=outcome.exit_case.value,
                clean_correct=outcome.label == y,
                certified=cert.certified,
                reason=cert.reason.value,
            )
        except (GeometryMismatch, MalformedImage, ValueError) as exc:
            return ItemRecord(
                index=idx,
                true_label=y,
                predicted=None,
                exit_case=None,
                clean_correct=False,
                certified=False,
                reason=None,
                error=str(exc),
            )

    indexed = list(enumerate(items))
    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(run_item, indexed))
    else:
        records = [run_item(it) for it in indexed]

    total = len(records)
    clean = sum(r.clean_correct for r in records)
    certified = sum(r.certified for r in records)
    return DatasetMetrics(
        total=total,
        clean_correct=clean,
        certified=certified,
        clean_accuracy=clean / total,
        certified_accuracy=certified / total,
        items=tuple(records),
    )
