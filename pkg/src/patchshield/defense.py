"""Robust prediction by two rounds of pixel masking.

Both algorithms first evaluate the classifier on every one-masked
image. ``double_masking`` settles a first-round disagreement by giving
each disagreeing mask a full second round and trusting it only if that
round is unanimous; ``challenger_masking`` instead plays pairwise
elimination games between conflicting masks, which bounds the total
classifier calls by 2*|masks| - 1.
"""
from __future__ import annotations

import random
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Callable, Optional, Sequence

import numpy as np

from .classifiers import CallCounter, ClassifierHandle, Image, Label, predict_batch
from .masks import MaskSet


class ExitCase(str, Enum):
    AGREED = "AGREED"
    DISAGREER = "DISAGREER"
    MAJORITY = "MAJORITY"


@dataclass(frozen=True)
class MaskPredResult:
    """First-round summary: modal label, dissenting masks, and all pairs."""

    majority: Label
    disagreers: tuple[tuple[int, Label], ...]
    all_pairs: tuple[tuple[int, Label], ...]


@dataclass(frozen=True)
class DefenseOutcome:
    """Final label plus the decisive evidence.

    ``witness`` holds the mask indices behind the decision: empty for a
    unanimous round (every mask agreed), the winning disagreeer's index
    for a Case-II exit or a challenger win, and the majority voters for
    a Case-III fallback.
    """

    label: Label
    exit_case: ExitCase
    classifier_calls: int
    witness: tuple[int, ...]
    # Challenger-game rounds as (candidate, challenger, two_mask_label,
    # candidate_won); None for double masking. Used by game audits.
    game_trace: Optional[tuple[tuple[int, int, Label, bool], ...]] = None


# An evaluator maps mask-index combinations to labels. The production
# evaluator renders masked images and calls the classifier; the
# adversary simulation substitutes direct table lookups, so both paths
# exercise the same decision logic below.
ComboEval = Callable[[Sequence[tuple[int, ...]]], list[Label]]


def majority_label(labels: Sequence[Label]) -> Label:
    """Modal label; ties break to the smallest label id."""
    counts = Counter(labels)
    best = max(counts.values())
    return min(lab for lab, c in counts.items() if c == best)


def _first_round(eval_fn: ComboEval, n: int) -> tuple[Label, list[tuple[int, Label]], list[Label]]:
    labels = eval_fn([(i,) for i in range(n)])
    maj = majority_label(labels)
    disagreers = [(i, lab) for i, lab in enumerate(labels) if lab != maj]
    return maj, disagreers, labels


def double_masking_core(
    eval_fn: ComboEval, n: int
) -> tuple[Label, ExitCase, tuple[int, ...]]:
    """Decision logic of the double-masking defense over mask indices.

    Case I: unanimous first round. Case II: the first disagreeing mask
    (ascending index) whose second round is unanimous wins with its own
    first-round label. Case III: fall back to the first-round majority.

    The ascending iteration order is a fixed implementation choice: on
    inputs whose robustness is not certified, a different order could
    return a different label, while on certified inputs every order
    returns the true label.
    """
    maj, disagreers, labels = _first_round(eval_fn, n)
    if not disagreers:
        return maj, ExitCase.AGREED, ()
    for dis_idx, dis_label in disagreers:
        second = eval_fn([(dis_idx, j) for j in range(n)])
        if len(set(second)) == 1:
            return dis_label, ExitCase.DISAGREER, (dis_idx,)
    witness = tuple(i for i, lab in enumerate(labels) if lab == maj)
    return maj, ExitCase.MAJORITY, witness


def challenger_masking_core(
    eval_fn: ComboEval, n: int, rng: Optional[random.Random] = None
) -> tuple[Label, ExitCase, tuple[int, ...], tuple[tuple[int, int, Label, bool], ...]]:
    """Decision logic of the challenger elimination game.

    Selection is by lowest mask index unless an ``rng`` is supplied
    (seeded-shuffle mode); the certification argument holds for any
    selection order. Each game removes one contender, so there are at
    most n - 1 games.
    """
    labels = eval_fn([(i,) for i in range(n)])
    alive = list(range(n))
    pick = (lambda xs: xs[0]) if rng is None else rng.choice
    cand = pick(alive)
    trace: list[tuple[int, int, Label, bool]] = []
    while len({labels[i] for i in alive}) > 1:
        challengers = [i for i in alive if labels[i] != labels[cand]]
        ch = pick(challengers)
        (two_mask,) = eval_fn([(min(ch, cand), max(ch, cand))])
        if two_mask == labels[ch]:
            trace.append((cand, ch, two_mask, False))
            alive.remove(cand)
            cand = ch
        else:
            trace.append((cand, ch, two_mask, True))
            alive.remove(ch)
    maj = majority_label(labels)
    if not trace:
        case = ExitCase.AGREED
    elif labels[cand] == maj:
        case = ExitCase.MAJORITY
    else:
        case = ExitCase.DISAGREER
    return labels[cand], case, (cand,), tuple(trace)


def make_image_evaluator(
    x: Image, c: ClassifierHandle, ms: MaskSet, fill: float = 0.0
) -> ComboEval:
    """Evaluator that renders mask-union images and batches them to ``c``."""
    regions = ms.zero_regions()

    def eval_fn(combos: Sequence[tuple[int, ...]]) -> list[Label]:
        images = []
        for combo in combos:
            union = regions[combo[0]].copy()
            for idx in combo[1:]:
                union |= regions[idx]
            masked = np.where(union[:, :, None], np.float32(fill), x.pixels)
            images.append(Image(x.geometry, masked))
        return predict_batch(c, images)

    return eval_fn


def mask_pred(
    x: Image, c: ClassifierHandle, ms: MaskSet, fill: float = 0.0
) -> MaskPredResult:
    """Evaluate every one-masked image as one batch and summarize."""
    if len(ms) == 0:
        raise ValueError("mask set is empty")
    eval_fn = make_image_evaluator(x, c, ms, fill)
    maj, disagreers, labels = _first_round(eval_fn, len(ms))
    return MaskPredResult(
        majority=maj,
        disagreers=tuple(disagreers),
        all_pairs=tuple(enumerate(labels)),
    )


def double_masking(
    x: Image, c: ClassifierHandle, ms: MaskSet, fill: float = 0.0
) -> DefenseOutcome:
    if len(ms) == 0:
        raise ValueError("mask set is empty")
    counter = CallCounter(c)
    eval_fn = make_image_evaluator(x, counter, ms, fill)
    label, case, witness = double_masking_core(eval_fn, len(ms))
    return DefenseOutcome(label, case, counter.count, witness)


def challenger_masking(
    x: Image,
    c: ClassifierHandle,
    ms: MaskSet,
    fill: float = 0.0,
    seed: Optional[int] = None,
) -> DefenseOutcome:
    if len(ms) == 0:
        raise ValueError("mask set is empty")
    counter = CallCounter(c)
    eval_fn = make_image_evaluator(x, counter, ms, fill)
    rng = random.Random(seed) if seed is not None else None
    label, case, witness, trace = challenger_masking_core(eval_fn, len(ms), rng)
    return DefenseOutcome(label, case, counter.count, witness, game_trace=trace)
