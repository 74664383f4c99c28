"""Exhaustive adaptive-adversary games on tiny instances.

The strongest attacker within the threat model is modeled abstractly:
whenever the masks applied by the defense fail to blank the whole
patch, the attacker may force any label on that masked view (a "free
slot"); whenever the patch is fully blanked, the masked view equals the
clean masked image, so the label comes from the instance's base table.
Enumerating every patch placement and every assignment of labels to
free slots dominates every realizable patch content, so a sweep with
zero defense failures verifies the certification guarantee exactly.

Slot identity is the rendered union region: two mask combinations that
blank the same pixels are one slot, which keeps the induced classifier
a well-defined function of the masked image.
"""
from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from functools import cached_property
from itertools import combinations_with_replacement, product
from typing import Optional, Sequence

import numpy as np

from .classifiers import ClassifierHandle, Image, Label
from .defense import (
    challenger_masking_core,
    double_masking_core,
    majority_label,
)
from .errors import ResourceLimit
from .masks import (
    ImageGeometry,
    MaskSet,
    PatchThreatModel,
    mask_set_from_dict,
    mask_set_to_dict,
)

ALGORITHMS = ("double", "challenger")


def _canon(combo: Sequence[int]) -> tuple[int, ...]:
    return tuple(sorted(combo))


@dataclass(frozen=True)
class Placement:
    """One attack position: patch_count rectangles (top, left, h, w)."""

    rects: tuple[tuple[int, int, int, int], ...]
    region: np.ndarray = field(compare=False, repr=False)

    def describe(self) -> list[list[int]]:
        return [list(r) for r in self.rects]


@dataclass(frozen=True)
class AdversaryStrategy:
    """A placement plus a label for every free slot.

    Free slots are keyed by their representative mask combination,
    rendered as a comma-joined index string.
    """

    placement: tuple[tuple[int, int, int, int], ...]
    assignments: dict[str, Label]

    def to_dict(self) -> dict:
        return {
            "placement": [list(r) for r in self.placement],
            "assignment": dict(self.assignments),
        }


@dataclass(frozen=True)
class AttackReport:
    strategies_tried: int
    successes: tuple[dict, ...]
    exhaustive: bool
    # Claim/lemma audit findings; populated only when auditing is on.
    audit_failures: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "strategies_tried": self.strategies_tried,
            "successes": len(self.successes),
            "success_details": list(self.successes),
            "exhaustive": self.exhaustive,
            "audit_failures": list(self.audit_failures),
        }


@dataclass
class GameInstance:
    """A tiny world the adversary game is played in.

    ``base`` maps size-1 and size-2 multisets of defense-mask indices to
    the clean classifier's labels. Combinations whose rendered unions
    coincide must agree; this is validated when the region table is
    first built. For multi-patch threats ``mask_set`` is the union set
    the defense runs with (so a size-2 multiset reaches 2*patch_count
    base masks) and ``base_mask_set`` keeps the single-patch base for
    certification.
    """

    geometry: ImageGeometry
    mask_set: MaskSet
    threat: PatchThreatModel
    true_label: Label
    label_space_size: int
    base: dict[tuple[int, ...], Label]
    name: str = ""
    base_mask_set: Optional[MaskSet] = None

    def __post_init__(self) -> None:
        if not 0 <= self.true_label < self.label_space_size:
            raise ValueError("true_label outside label space")

    @cached_property
    def _regions(self) -> list[np.ndarray]:
        return self.mask_set.zero_regions()

    @cached_property
    def combo_keys(self) -> dict[tuple[int, ...], bytes]:
        """Region key for every mask multiset of size <= 2."""
        keys: dict[tuple[int, ...], bytes] = {}
        n = len(self.mask_set)
        for size in (1, 2):
            for combo in combinations_with_replacement(range(n), size):
                union = self._regions[combo[0]]
                for idx in combo[1:]:
                    union = union | self._regions[idx]
                keys[combo] = union.tobytes()
        return keys

    @cached_property
    def region_labels(self) -> dict[bytes, Label]:
        """Base labels re-keyed by rendered union, consistency-checked."""
        out: dict[bytes, Label] = {}
        for combo, label in self.base.items():
            key = self.combo_keys.get(_canon(combo))
            if key is None:
                raise ValueError(f"base combo {combo} is not a size<=2 mask multiset")
            if key in out and out[key] != label:
                raise ValueError(
                    f"inconsistent base labels for identical masked views at {combo}"
                )
            out[key] = label
        for combo, key in self.combo_keys.items():
            if key not in out:
                raise ValueError(f"base prediction missing for mask combo {combo}")
        return out

    @cached_property
    def _region_arrays(self) -> dict[bytes, np.ndarray]:
        arrays: dict[bytes, np.ndarray] = {}
        for combo, key in self.combo_keys.items():
            if key not in arrays:
                union = self._regions[combo[0]]
                for idx in combo[1:]:
                    union = union | self._regions[idx]
                arrays[key] = union
        return arrays

    def placements(self) -> list[Placement]:
        """Every admissible placement (multisets of rects for multi patches)."""
        singles: list[tuple[int, int, int, int]] = []
        for p0, p1 in self.threat.admissible_shapes(self.geometry):
            for top in range(self.geometry.height - p0 + 1):
                for left in range(self.geometry.width - p1 + 1):
                    singles.append((top, left, p0, p1))
        out = []
        for rects in combinations_with_replacement(singles, self.threat.patch_count):
            region = np.zeros((self.geometry.height, self.geometry.width), dtype=bool)
            for top, left, h, w in rects:
                region[top : top + h, left : left + w] = True
            out.append(Placement(rects=tuple(rects), region=region))
        return out

    def covered(self, key: bytes, placement: Placement) -> bool:
        union = self._region_arrays[key]
        return bool(np.all(union[placement.region]))

    def free_slot_keys(self, placement: Placement) -> tuple[list[bytes], dict[bytes, tuple[int, ...]]]:
        """Distinct non-covering union keys in (size, combo) order."""
        keys: list[bytes] = []
        reps: dict[bytes, tuple[int, ...]] = {}
        for combo in sorted(self.combo_keys, key=lambda cb: (len(cb), cb)):
            key = self.combo_keys[combo]
            if key in reps:
                continue
            if not self.covered(key, placement):
                reps[key] = combo
                keys.append(key)
        return keys, reps


def enumerate_free_slots(
    ms: MaskSet, patch_rects: Sequence[tuple[int, int, int, int]], depth: int
) -> list[tuple[int, ...]]:
    """Mask multisets of size <= depth whose union fails to blank the patch.

    Combinations rendering the same union are reported once, by their
    first representative in (size, lexicographic) order. Rendered-union
    containment is the ground truth; no geometric shortcut is taken.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    geom = ms.geometry
    patch = np.zeros((geom.height, geom.width), dtype=bool)
    for top, left, h, w in patch_rects:
        patch[top : top + h, left : left + w] = True
    regions = ms.zero_regions()
    out: list[tuple[int, ...]] = []
    seen: set[bytes] = set()
    for size in range(1, depth + 1):
        for combo in combinations_with_replacement(range(len(ms)), size):
            union = regions[combo[0]]
            for idx in combo[1:]:
                union = union | regions[idx]
            key = union.tobytes()
            if key in seen:
                continue
            seen.add(key)
            if not np.all(union[patch]):
                out.append(combo)
    return out


def _audit_strategy(
    g: GameInstance,
    placement: Placement,
    labelmap: dict[bytes, Label],
    outcome_label: Label,
    outcome_case: str,
    trace: Optional[tuple],
    context: str,
) -> list[str]:
    """Check the certification proof's claims on one enumerated strategy.

    Only meaningful on certified instances, where they must all hold:
    (1) some first-round mask predicts the true label; (2) every
    disagreeing mask sees at least one correct two-mask prediction;
    (3) a patch-blanking mask sees only correct two-mask predictions;
    the defense never exits incorrectly through any case; and in the
    challenger game a patch-blanking candidate never loses.
    """
    y = g.true_label
    n = len(g.mask_set)
    failures: list[str] = []
    first = [labelmap[g.combo_keys[(i,)]] for i in range(n)]
    if not any(lab == y for lab in first):
        failures.append(f"{context}: no correct first-round prediction")
    maj = majority_label(first)
    covering = [g.covered(g.combo_keys[(i,)], placement) for i in range(n)]
    for i, lab in enumerate(first):
        pair_labels = [labelmap[g.combo_keys[_canon((i, j))]] for j in range(n)]
        if lab != maj and not any(p == y for p in pair_labels):
            failures.append(f"{context}: disagreeer mask {i} has no correct two-mask prediction")
        if covering[i] and any(p != y for p in pair_labels):
            failures.append(f"{context}: blanking mask {i} has an incorrect two-mask prediction")
    if outcome_label != y:
        failures.append(f"{context}: incorrect exit via {outcome_case}")
    if trace:
        for cand, ch, two_mask, cand_won in trace:
            if covering[cand] and not cand_won:
                failures.append(f"{context}: blanking candidate {cand} lost a game to {ch}")
    return failures


def _run_cores(
    g: GameInstance,
    labelmap: dict[bytes, Label],
    algorithms: Sequence[str],
) -> dict[str, tuple[Label, str, Optional[tuple]]]:
    n = len(g.mask_set)
    keys = g.combo_keys

    def eval_fn(combos: Sequence[tuple[int, ...]]) -> list[Label]:
        return [labelmap[keys[_canon(cb)]] for cb in combos]

    results = {}
    for algo in algorithms:
        if algo == "double":
            label, case, _ = double_masking_core(eval_fn, n)
            results[algo] = (label, case.value, None)
        else:
            label, case, _, trace = challenger_masking_core(eval_fn, n)
            results[algo] = (label, case.value, trace)
    return results


def _strategy_space_size(g: GameInstance, placements: list[Placement]) -> int:
    total = 0
    for pl in placements:
        keys, _ = g.free_slot_keys(pl)
        total += g.label_space_size ** len(keys)
    return total


def exhaustive_attack(
    g: GameInstance,
    algo: str = "double",
    audit: bool = False,
    cap: int = 2_000_000,
    pixel_level: bool = False,
) -> AttackReport:
    """Sweep every placement and every free-slot label assignment.

    Records each strategy where the chosen algorithm returns a label
    other than the true one. ``pixel_level`` replays each strategy
    through the full image pipeline (mask rendering plus a classifier
    handle that decodes the blanked region) instead of the fast
    index-level cores; results are identical, just slower.
    """
    algorithms = list(ALGORITHMS) if algo == "both" else [algo]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}")
    placements = g.placements()
    space = _strategy_space_size(g, placements)
    if space > cap:
        raise ResourceLimit(
            f"{space} strategies exceed cap {cap}; use randomized_attack"
        )
    labels = range(g.label_space_size)
    successes: list[dict] = []
    audit_failures: list[str] = []
    tried = 0
    for pl in placements:
        free_keys, reps = g.free_slot_keys(pl)
        labelmap = {
            key: g.region_labels[key]
            for key in g.combo_keys.values()
            if key not in reps
        }
        for assignment in product(labels, repeat=len(free_keys)):
            for key, lab in zip(free_keys, assignment):
                labelmap[key] = lab
            tried += 1
            if pixel_level:
                results = _run_pixel_level(g, pl, labelmap, algorithms)
            else:
                results = _run_cores(g, labelmap, algorithms)
            for a, (out_label, out_case, trace) in results.items():
                if out_label != g.true_label:
                    successes.append(
                        _success_record(g, pl, free_keys, reps, assignment, out_label, a)
                    )
                if audit:
                    ctx = f"{g.name or 'instance'} placement={pl.describe()} algo={a}"
                    audit_failures.extend(
                        _audit_strategy(g, pl, labelmap, out_label, out_case, trace, ctx)
                    )
    return AttackReport(
        strategies_tried=tried,
        successes=tuple(successes),
        exhaustive=True,
        audit_failures=tuple(audit_failures),
    )


def _success_record(
    g: GameInstance,
    pl: Placement,
    free_keys: list[bytes],
    reps: dict[bytes, tuple[int, ...]],
    assignment: Sequence[int],
    wrong: Label,
    algo: str,
) -> dict:
    strategy = AdversaryStrategy(
        placement=pl.rects,
        assignments={
            ",".join(map(str, reps[key])): lab for key, lab in zip(free_keys, assignment)
        },
    )
    return {
        "algorithm": algo,
        **strategy.to_dict(),
        "returned": wrong,
        "true_label": g.true_label,
    }


def randomized_attack(
    g: GameInstance,
    algo: str = "double",
    trials: int = 1000,
    seed: int = 0,
) -> AttackReport:
    """Uniformly sampled strategies; reproducible for a fixed seed."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    algorithms = list(ALGORITHMS) if algo == "both" else [algo]
    for a in algorithms:
        if a not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {a!r}")
    rng = random.Random(seed)
    placements = g.placements()
    per_placement = [g.free_slot_keys(pl) for pl in placements]
    successes: list[dict] = []
    for _ in range(trials):
        idx = rng.randrange(len(placements))
        pl = placements[idx]
        free_keys, reps = per_placement[idx]
        assignment = [rng.randrange(g.label_space_size) for _ in free_keys]
        labelmap = {
            key: g.region_labels[key]
            for key in g.combo_keys.values()
            if key not in reps
        }
        labelmap.update(zip(free_keys, assignment))
        for a, (out_label, _, _) in _run_cores(g, labelmap, algorithms).items():
            if out_label != g.true_label:
                successes.append(
                    _success_record(g, pl, free_keys, reps, assignment, out_label, a)
                )
    return AttackReport(
        strategies_tried=trials,
        successes=tuple(successes),
        exhaustive=False,
    )


# ---------------------------------------------------------------------------
# Pixel-level replay: the same game driven through the real image path.

def coordinate_image(geom: ImageGeometry) -> Image:
    """Image with a distinct nonzero value per pixel, so the blanked
    region can be decoded exactly from a masked copy."""
    count = geom.pixel_count
    flat = (np.arange(count, dtype=np.float32) + 1.0) / (count + 1.0)
    pixels = np.repeat(flat.reshape(geom.height, geom.width, 1), geom.channels, axis=2)
    return Image(geom, pixels)


class RegionOracle(ClassifierHandle):
    """Classifier that decodes which pixels were blanked and answers from
    the instance's tables: base labels when the patch is fully blanked
    (or when simulating the clean world), attacker labels otherwise."""

    def __init__(
        self,
        instance: GameInstance,
        placement: Optional[Placement] = None,
        assignment: Optional[dict[bytes, Label]] = None,
    ):
        self.instance = instance
        self.placement = placement
        self.assignment = assignment or {}

    def predict_batch(self, images: list[Image]) -> list[Label]:
        out = []
        for img in images:
            blanked = np.all(img.pixels == 0.0, axis=2)
            key = blanked.tobytes()
            if self.placement is not None and not bool(
                np.all(blanked[self.placement.region])
            ):
                out.append(self.assignment[key])
            else:
                out.append(self.instance.region_labels[key])
        return out


def _run_pixel_level(
    g: GameInstance,
    pl: Placement,
    labelmap: dict[bytes, Label],
    algorithms: Sequence[str],
) -> dict[str, tuple[Label, str, Optional[tuple]]]:
    from .defense import challenger_masking, double_masking

    x = coordinate_image(g.geometry)
    oracle = RegionOracle(g, pl, dict(labelmap))
    results = {}
    for algo in algorithms:
        if algo == "double":
            outcome = double_masking(x, oracle, g.mask_set)
            results[algo] = (outcome.label, outcome.exit_case.value, None)
        else:
            outcome = challenger_masking(x, oracle, g.mask_set)
            results[algo] = (outcome.label, outcome.exit_case.value, outcome.game_trace)
    return results


def certify_instance(g: GameInstance, **kwargs):
    """Run the production certification on the instance's clean world."""
    from .certify import certify, certify_multi_patch

    x = coordinate_image(g.geometry)
    oracle = RegionOracle(g)
    if g.threat.patch_count == 1:
        return certify(x, g.true_label, oracle, g.mask_set, g.threat, **kwargs)
    if g.base_mask_set is None:
        raise ValueError("multi-patch instance needs base_mask_set")
    return certify_multi_patch(
        x, g.true_label, oracle, g.base_mask_set, g.threat, **kwargs
    )


# ---------------------------------------------------------------------------
# Serialization.

def game_instance_to_dict(g: GameInstance) -> dict:
    doc = {
        "name": g.name,
        "geometry": {
            "height": g.geometry.height,
            "width": g.geometry.width,
            "channels": g.geometry.channels,
        },
        "mask_set": mask_set_to_dict(g.mask_set),
        "threat": {
            "shapes": [list(s) for s in g.threat.shapes],
            "patch_count": g.threat.patch_count,
            "area_budget": g.threat.area_budget,
        },
        "true_label": g.true_label,
        "label_space_size": g.label_space_size,
        "base": {",".join(map(str, combo)): lab for combo, lab in g.base.items()},
    }
    if g.base_mask_set is not None:
        doc["base_mask_set"] = mask_set_to_dict(g.base_mask_set)
    return doc


def game_instance_from_dict(doc: dict) -> GameInstance:
    geom = ImageGeometry(
        height=int(doc["geometry"]["height"]),
        width=int(doc["geometry"]["width"]),
        channels=int(doc["geometry"].get("channels", 1)),
    )
    threat_doc = doc["threat"]
    threat = PatchThreatModel(
        shapes=tuple(tuple(s) for s in threat_doc.get("shapes", [])),
        patch_count=int(threat_doc.get("patch_count", 1)),
        area_budget=threat_doc.get("area_budget"),
    )
    base = {
        tuple(int(p) for p in key.split(",")): int(lab)
        for key, lab in doc["base"].items()
    }
    base_ms = doc.get("base_mask_set")
    return GameInstance(
        geometry=geom,
        mask_set=mask_set_from_dict(doc["mask_set"]),
        threat=threat,
        true_label=int(doc["true_label"]),
        label_space_size=int(doc["label_space_size"]),
        base=base,
        name=str(doc.get("name", "")),
        base_mask_set=mask_set_from_dict(base_ms) if base_ms else None,
    )


def save_game_instance(g: GameInstance, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(game_instance_to_dict(g), fh, indent=2)
        fh.write("\n")


def load_game_instance(path: str) -> GameInstance:
    with open(path, "r", encoding="utf-8") as fh:
        return game_instance_from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Instance families for the verification sweep.

def build_base(
    ms: MaskSet,
    labeler,
    depth: int = 2,
) -> dict[tuple[int, ...], Label]:
    """Base table over all mask multisets of size <= depth."""
    out: dict[tuple[int, ...], Label] = {}
    for size in range(1, depth + 1):
        for combo in combinations_with_replacement(range(len(ms)), size):
            out[combo] = labeler(combo)
    return out


def perfect_base(ms: MaskSet, y: Label) -> dict[tuple[int, ...], Label]:
    return build_base(ms, lambda _: y)


def _region_key_of(regions: list[np.ndarray], combo: tuple[int, ...]) -> bytes:
    union = regions[combo[0]]
    for idx in combo[1:]:
        union = union | regions[idx]
    return union.tobytes()


def _consistent_random_base(
    ms: MaskSet, rng: random.Random, n_labels: int
) -> dict[tuple[int, ...], Label]:
    """Random labels, constant on combos sharing a rendered union."""
    regions = ms.zero_regions()
    by_region: dict[bytes, Label] = {}

    def labeler(combo):
        key = _region_key_of(regions, combo)
        if key not in by_region:
            by_region[key] = rng.randrange(n_labels)
        return by_region[key]

    return build_base(ms, labeler)


def corrupted_base(
    ms: MaskSet, rng: random.Random, n_labels: int, y: Label
) -> dict[tuple[int, ...], Label]:
    """Correct everywhere except on one randomly chosen masked view."""
    regions = ms.zero_regions()
    keys = sorted(
        {
            _region_key_of(regions, combo)
            for size in (1, 2)
            for combo in combinations_with_replacement(range(len(ms)), size)
        }
    )
    target = keys[rng.randrange(len(keys))]
    wrong = (y + 1 + rng.randrange(n_labels - 1)) % n_labels
    return build_base(
        ms, lambda combo: wrong if _region_key_of(regions, combo) == target else y
    )


def generate_verification_family(seed: int = 20250810) -> list[GameInstance]:
    """Deterministic desk-scale instance family for the theorem sweep.

    Mixes 1-D axes (n = 4..8) and small 2-D grids (up to 6x6) with
    label spaces of 2 and 3. Half the tables are fully correct (these
    should certify), half are random (mostly not certifiable).
    """
    from .masks import compute_mask_params, generate_mask_set_1d, generate_mask_set_2d

    rng = random.Random(seed)
    instances: list[GameInstance] = []

    def add_triple(ms: MaskSet, geom: ImageGeometry, shapes, n_labels: int, tag: str) -> None:
        tm = PatchThreatModel(shapes=shapes)
        y = rng.randrange(n_labels)
        instances.append(
            GameInstance(geom, ms, tm, y, n_labels, perfect_base(ms, y), name=f"{tag}-perfect")
        )
        y2 = rng.randrange(n_labels)
        instances.append(
            GameInstance(
                geom, ms, tm, y2, n_labels,
                _consistent_random_base(ms, rng, n_labels),
                name=f"{tag}-random",
            )
        )
        y3 = rng.randrange(n_labels)
        instances.append(
            GameInstance(
                geom, ms, tm, y3, n_labels,
                corrupted_base(ms, rng, n_labels, y3),
                name=f"{tag}-corrupt",
            )
        )

    for n in range(4, 9):
        for p in (1, 2, 3):
            if p > n:
                continue
            for k in (2, 3):
                s, m = compute_mask_params(n, p, k)
                ms = generate_mask_set_1d(n, m, s)
                for n_labels in (2, 3):
                    add_triple(
                        ms, ms.geometry, ((1, p),), n_labels,
                        f"1d-n{n}-p{p}-k{k}-Y{n_labels}",
                    )

    two_d = [
        ((4, 4), (1, 1), (2, 2), 3),
        ((4, 4), (2, 2), (2, 2), 3),
        ((5, 5), (2, 2), (2, 2), 2),
        ((5, 5), (1, 2), (2, 2), 2),
        ((6, 6), (2, 2), (2, 2), 2),
        ((6, 6), (3, 3), (2, 2), 2),
        ((4, 6), (2, 2), (2, 2), 2),
        ((6, 4), (1, 1), (2, 2), 2),
    ]
    for (n0, n1), (p0, p1), (k0, k1), n_labels in two_d:
        geom = ImageGeometry(height=n0, width=n1)
        ms = generate_mask_set_2d(geom, (p0, p1), (k0, k1))
        add_triple(
            ms, geom, ((p0, p1),), n_labels,
            f"2d-{n0}x{n1}-p{p0}x{p1}-k{k0}x{k1}-Y{n_labels}",
        )
    return instances
