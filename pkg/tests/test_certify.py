from __future__ import annotations

import random

import pytest

from patchshield.certify import (
    CertReason,
    certify,
    certify_multi_patch,
    evaluate_dataset,
)
from patchshield.classifiers import CallCounter, TableClassifier
from patchshield.errors import ResourceLimit
from patchshield.masks import (
    ImageGeometry,
    MaskSet,
    PatchThreatModel,
    generate_mask_set_1d,
    generate_mask_set_2d,
)

from conftest import distinct_image, region_random_labeler, table_for_combos


def covering_setup():
    ms = generate_mask_set_1d(6, 3, 2)
    tm = PatchThreatModel(shapes=((1, 2),))
    x = distinct_image(ms.geometry)
    return x, ms, tm


class TestCertify:
    def test_constant_classifier_certifies(self):
        x, ms, tm = covering_setup()
        table = TableClassifier(3, default_label=1)
        counter = CallCounter(table)
        cert = certify(x, 1, counter, ms, tm)
        assert cert.certified and cert.reason == CertReason.OK
        n = len(ms)
        assert cert.calls == n * (n + 1) // 2

    def test_failing_pair_reported(self):
        x, ms, tm = covering_setup()
        bad_pair = (1, 2)

        def labeler(combo):
            combo = tuple(sorted(combo)) if len(combo) == 2 else combo
            return 2 if combo == bad_pair else 1

        table = table_for_combos(x, ms, labeler, label_space_size=3)
        cert = certify(x, 1, table, ms, tm)
        assert not cert.certified
        assert cert.reason == CertReason.TWO_MASK_FAILURE
        assert cert.failing_pair == (1, 2, 2)

    def test_first_failure_is_lexicographic(self):
        x, ms, tm = covering_setup()

        def labeler(combo):
            return 0 if len(combo) == 2 and combo[0] != combo[1] else 1

        table = table_for_combos(x, ms, labeler, label_space_size=3)
        cert = certify(x, 1, table, ms, tm, early_exit=False)
        assert cert.failing_pair == (0, 1, 0)
        # full-matrix mode evaluates every pair
        assert cert.calls == len(ms) * (len(ms) + 1) // 2

    def test_non_covering_set_short_circuits(self):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 3),))  # 3-pixel patch has a gap
        x = distinct_image(ms.geometry)
        cert = certify(x, 1, TableClassifier(3, default_label=1), ms, tm)
        assert not cert.certified
        assert cert.reason == CertReason.NOT_COVERING
        assert cert.calls == 0

    def test_pair_budget_never_exceeded(self, rng):
        x, ms, tm = covering_setup()
        bound = len(ms) * (len(ms) + 1) // 2
        for _ in range(20):
            table = table_for_combos(
                x, ms, region_random_labeler(ms, rng, 2), label_space_size=2
            )
            cert = certify(x, 1, table, ms, tm)
            assert cert.calls <= bound

    def test_empty_mask_set_rejected(self):
        x = distinct_image(ImageGeometry(1, 6))
        tm = PatchThreatModel(shapes=((1, 2),))
        with pytest.raises(ValueError):
            certify(x, 1, TableClassifier(2), MaskSet(ImageGeometry(1, 6), ()), tm)

    def test_overestimation_monotone_at_certificate_level(self):
        # Shrinking the declared patch never turns OK into NOT_COVERING.
        geom = ImageGeometry(6, 6)
        ms = generate_mask_set_2d(geom, (3, 3), (2, 2))
        x = distinct_image(geom)
        table = TableClassifier(3, default_label=1)
        assert certify(x, 1, table, ms, PatchThreatModel(shapes=((3, 3),))).certified
        for a in range(1, 4):
            for b in range(1, 4):
                cert = certify(x, 1, table, ms, PatchThreatModel(shapes=((a, b),)))
                assert cert.reason != CertReason.NOT_COVERING

    def test_multi_patch_threat_rejected(self):
        x, ms, _ = covering_setup()
        tm = PatchThreatModel(shapes=((1, 2),), patch_count=2)
        with pytest.raises(ValueError):
            certify(x, 1, TableClassifier(2), ms, tm)


class TestCertifyMultiPatch:
    def test_combination_count(self):
        x, ms, _ = covering_setup()
        tm = PatchThreatModel(shapes=((1, 2),), patch_count=2)
        table = TableClassifier(3, default_label=1)
        cert = certify_multi_patch(x, 1, table, ms, tm, early_exit=False)
        assert cert.certified
        assert cert.calls == 15  # C(3 + 4 - 1, 4)

    def test_failure_carries_combo(self):
        x, ms, _ = covering_setup()
        tm = PatchThreatModel(shapes=((1, 2),), patch_count=2)
        regions = ms.zero_regions()
        bad_region = regions[1].tobytes()  # the [2,5) interval on its own

        def labeler(combo):
            union = regions[combo[0]].copy()
            for idx in combo[1:]:
                union |= regions[idx]
            return 0 if union.tobytes() == bad_region else 1

        table = table_for_combos(x, ms, labeler, label_space_size=3, depth=4)
        cert = certify_multi_patch(x, 1, table, ms, tm)
        assert not cert.certified
        assert cert.reason == CertReason.TWO_MASK_FAILURE
        assert cert.failing_combo == (1, 1, 1, 1)

    def test_cap(self):
        x, ms, _ = covering_setup()
        tm = PatchThreatModel(shapes=((1, 2),), patch_count=2)
        with pytest.raises(ResourceLimit):
            certify_multi_patch(x, 1, TableClassifier(2), ms, tm, cap=3)

    def test_non_covering_base(self):
        ms = generate_mask_set_1d(6, 3, 2)
        x = distinct_image(ms.geometry)
        tm = PatchThreatModel(shapes=((1, 3),), patch_count=2)
        cert = certify_multi_patch(x, 1, TableClassifier(2, default_label=1), ms, tm)
        assert cert.reason == CertReason.NOT_COVERING


class TestEvaluateDataset:
    def _items(self, rng, count, geom):
        # Vary one pixel's value per item so the table keys differ.
        from patchshield.classifiers import Image

        base = distinct_image(geom)
        items = []
        for i in range(count):
            px = base.pixels.copy()
            px[0, 0, 0] = (i + 1) / 255.0
            items.append(Image(geom, px))
        return items

    def test_constant_classifier_all_correct(self):
        ms = generate_mask_set_2d(ImageGeometry(4, 4), (2, 2), (2, 2))
        tm = PatchThreatModel(shapes=((2, 2),))
        x = distinct_image(ms.geometry)
        table = TableClassifier(3, default_label=2)
        metrics = evaluate_dataset([(x, 2)] * 5, table, ms, tm)
        assert metrics.total == 5
        assert metrics.clean_accuracy == 1.0
        assert metrics.certified_accuracy == 1.0

    def test_certified_never_exceeds_clean(self, rng):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 2),))
        images = self._items(rng, 40, ms.geometry)
        entries = {}
        labels = []
        for img in images:
            y = rng.randrange(2)
            labels.append(y)
            labeler = region_random_labeler(ms, rng, 2)
            if rng.random() < 0.4:
                labeler = lambda combo, y=y: y  # noqa: E731
            for depth_combo, label in table_for_combos(
                img, ms, labeler, 2
            ).entries.items():
                entries[depth_combo] = label
        table = TableClassifier(2, 0, entries)
        metrics = evaluate_dataset(list(zip(images, labels)), table, ms, tm)
        assert metrics.certified <= metrics.clean_correct <= metrics.total
        assert metrics.certified_accuracy <= metrics.clean_accuracy

    def test_empty_dataset_rejected(self):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 2),))
        with pytest.raises(ValueError):
            evaluate_dataset([], TableClassifier(2), ms, tm)

    def test_empty_mask_set_rejected(self):
        tm = PatchThreatModel(shapes=((1, 2),))
        x = distinct_image(ImageGeometry(1, 6))
        with pytest.raises(ValueError):
            evaluate_dataset([(x, 0)], TableClassifier(2), MaskSet(ImageGeometry(1, 6), ()), tm)

    def test_item_records_and_parallel_match(self, rng):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 2),))
        images = self._items(rng, 10, ms.geometry)
        items = [(img, 1) for img in images]
        table = TableClassifier(3, default_label=1)
        serial = evaluate_dataset(items, table, ms, tm, parallelism=1)
        parallel = evaluate_dataset(items, table, ms, tm, parallelism=4)
        assert serial.items == parallel.items
        assert [r.index for r in serial.items] == list(range(10))

    def test_challenger_algorithm_path(self):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 2),))
        x = distinct_image(ms.geometry)
        table = TableClassifier(3, default_label=2)
        metrics = evaluate_dataset([(x, 2)] * 3, table, ms, tm, algorithm="challenger")
        assert metrics.clean_accuracy == 1.0
        assert metrics.items[0].exit_case == "AGREED"
        with pytest.raises(ValueError):
            evaluate_dataset([(x, 2)], table, ms, tm, algorithm="triple")

    def test_geometry_error_recorded_not_fatal(self):
        ms = generate_mask_set_1d(6, 3, 2)
        tm = PatchThreatModel(shapes=((1, 2),))
        good = distinct_image(ms.geometry)
        bad = distinct_image(ImageGeometry(2, 3))
        table = TableClassifier(3, default_label=1)
        metrics = evaluate_dataset([(good, 1), (bad, 1)], table, ms, tm)
        assert metrics.total == 2
        assert metrics.clean_correct == 1
        assert metrics.items[1].error is not None
