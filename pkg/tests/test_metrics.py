from fractions import Fraction

import numpy as np
import pytest

from conftest import make_map, random_map
from oracles import brute_confusion, brute_iou
from segcurate.metrics import ConfusionMatrix, accumulate, iou_report, render_table


def four_pixel_case():
    gt = make_map([[0, 0, 13, 255]])
    pred = make_map([[0, 10, 13, 13]])
    return pred, gt


class TestAccumulate:
    def test_perfect_prediction_is_diagonal(self):
        m = make_map([[0, 1], [2, 255]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        assert cm.counts[0, 0] == cm.counts[1, 1] == cm.counts[2, 2] == 1
        assert cm.counts.sum() == 3
        assert cm.void_pred.sum() == 0

    def test_four_pixel_hand_count(self):
        pred, gt = four_pixel_case()
        cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
        assert cm.counts[0, 0] == 1
        assert cm.counts[0, 10] == 1
        assert cm.counts[13, 13] == 1
        assert cm.counts.sum() == 3  # void gt pixel skipped

    def test_void_prediction_goes_to_overflow(self):
        gt = make_map([[5, 5]])
        pred = make_map([[5, 255]])
        cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
        assert cm.counts[5, 5] == 1
        assert cm.void_pred[5] == 1
        assert cm.total == 2

    def test_additivity_and_order_independence(self):
        rng = np.random.default_rng(31)
        pairs = [
            (random_map(rng, 5, 5, num_classes=6), random_map(rng, 5, 5, num_classes=6))
            for _ in range(6)
        ]
        forward = ConfusionMatrix.zeros(19)
        for pred, gt in pairs:
            accumulate(forward, pred, gt)
        backward = ConfusionMatrix.zeros(19)
        for pred, gt in reversed(pairs):
            accumulate(backward, pred, gt)
        assert forward == backward
        merged = sum(
            (accumulate(ConfusionMatrix.zeros(19), p, g) for p, g in pairs),
            ConfusionMatrix.zeros(19),
        )
        assert merged == forward

    def test_matches_per_pixel_oracle(self):
        rng = np.random.default_rng(32)
        for _ in range(20):
            pred = random_map(rng, 8, 8, num_classes=6)
            gt = random_map(rng, 8, 8, num_classes=6)
            cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
            counts, void_pred = brute_confusion(pred.grid, gt.grid, 19)
            assert cm.counts.tolist() == counts
            assert cm.void_pred.tolist() == void_pred

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension mismatch"):
            accumulate(ConfusionMatrix.zeros(19), make_map([[0]]), make_map([[0, 0]]))

    def test_invariant_total_matches_nonvoid_gt(self):
        rng = np.random.default_rng(33)
        cm = ConfusionMatrix.zeros(19)
        expected = 0
        for _ in range(5):
            pred = random_map(rng, 7, 7, num_classes=4)
            gt = random_map(rng, 7, 7, num_classes=4)
            accumulate(cm, pred, gt)
            expected += int((gt.grid != 255).sum())
        assert cm.total == expected


class TestIouReport:
    def test_perfect_prediction(self):
        m = make_map([[0, 1], [2, 255]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        report = iou_report(cm, {0, 1, 2})
        assert report.per_class[0] == report.per_class[1] == report.per_class[2] == 1
        assert report.miou == 1

    def test_four_pixel_fixture_exact(self):
        # Void ground truth is excluded outright, so the void-gt pixel
        # predicted car adds no false positive anywhere.
        pred, gt = four_pixel_case()
        cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
        report = iou_report(cm, {0, 10, 13})
        per_class, miou = brute_iou([(pred.grid, gt.grid)], [0, 10, 13])
        assert report.per_class[0] == per_class[0] == Fraction(1, 2)
        assert report.per_class[10] == per_class[10] == Fraction(0)
        assert report.per_class[13] == per_class[13] == Fraction(1)
        assert report.miou == miou == Fraction(1, 2)

    def test_void_prediction_counts_as_false_negative(self):
        gt = make_map([[5, 5]])
        pred = make_map([[5, 255]])
        cm = accumulate(ConfusionMatrix.zeros(19), pred, gt)
        report = iou_report(cm, {5})
        assert report.per_class[5] == Fraction(1, 2)

    def test_absent_class_excluded_from_mean(self):
        m = make_map([[0, 1]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        evaluated = frozenset(range(19)) - {3, 4}  # drop wall and fence
        report = iou_report(cm, evaluated)
        assert report.per_class[3] is None
        assert report.per_class[4] is None
        # 2 perfect classes averaged over 17 evaluated ones
        assert report.miou == Fraction(2, 17)

    def test_evaluated_but_unseen_contributes_zero(self):
        m = make_map([[0]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        report = iou_report(cm, {0, 7})
        assert report.per_class[7] == 0
        assert report.miou == Fraction(1, 2)

    def test_empty_evaluated_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            iou_report(ConfusionMatrix.zeros(19), set())

    def test_oracle_equivalence_random(self):
        rng = np.random.default_rng(34)
        for _ in range(10):
            pairs = [
                (random_map(rng, 8, 8, num_classes=5), random_map(rng, 8, 8, num_classes=5))
                for _ in range(3)
            ]
            cm = ConfusionMatrix.zeros(19)
            for pred, gt in pairs:
                accumulate(cm, pred, gt)
            evaluated = {0, 1, 2, 3, 4}
            report = iou_report(cm, evaluated)
            per_class, miou = brute_iou([(p.grid, g.grid) for p, g in pairs], sorted(evaluated))
            for c in evaluated:
                assert report.per_class[c] == per_class[c]
            assert report.miou == miou

    def test_permutation_of_ids_permutes_ious(self):
        rng = np.random.default_rng(35)
        pred = random_map(rng, 8, 8, num_classes=5)
        gt = random_map(rng, 8, 8, num_classes=5)
        base = iou_report(accumulate(ConfusionMatrix.zeros(19), pred, gt), set(range(5)))
        shift = np.arange(256, dtype=np.uint8)
        shift[:5] = (np.arange(5) + 1) % 5
        pred2 = make_map(shift[pred.grid])
        gt2 = make_map(shift[gt.grid])
        moved = iou_report(accumulate(ConfusionMatrix.zeros(19), pred2, gt2), set(range(5)))
        for c in range(5):
            assert moved.per_class[(c + 1) % 5] == base.per_class[c]
        assert moved.miou == base.miou


class TestRenderTable:
    def test_absent_rendered_as_dash(self, taxonomy):
        m = make_map([[0, 1]])
        cm = accumulate(ConfusionMatrix.zeros(19), m, m)
        evaluated = frozenset(range(19)) - {3, 4}
        text = render_table(iou_report(cm, evaluated), taxonomy)
        header, values = text.splitlines()
        assert header.split()[:4] == ["mIoU", "Rd", "Sdwk", "Bldg"]
        cells = values.split()
        assert cells[4] == "-"  # wall column
        assert cells[5] == "-"  # fence column
        assert cells[1] == "100.0"
