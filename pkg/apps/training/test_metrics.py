import numpy as np
from django.test import SimpleTestCase

from .exceptions import MetricError
from .metrics import (
    MetricsReport,
    binarize,
    confusion_counts,
    dice_coef,
    evaluate_batch,
    f_beta,
    image_metrics,
    iou,
    precision,
    recall,
)


def pixel_oracle(pred, truth):
    """Confusion counts by visiting every pixel"""
    tp = fp = fn = tn = 0
    for p, t in zip(pred.ravel().tolist(), truth.ravel().tolist()):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


class ConfusionMetricsTestCase(SimpleTestCase):
    """Test Dice, IoU, precision, recall and F-beta on binary masks"""

    def setUp(self):
        self.truth = np.array([1, 1, 0, 0])
        self.pred = np.array([1, 0, 1, 0])

    def test_hand_case(self):
        """Test y = [1, 1, 0, 0], p = [1, 0, 1, 0]"""
        self.assertEqual(confusion_counts(self.pred, self.truth), (1, 1, 1, 1))
        self.assertEqual(dice_coef(self.pred, self.truth), 0.5)
        self.assertAlmostEqual(iou(self.pred, self.truth), 1 / 3)
        self.assertEqual(precision(self.pred, self.truth), 0.5)
        self.assertEqual(recall(self.pred, self.truth), 0.5)
        self.assertAlmostEqual(f_beta(self.pred, self.truth, beta=2.0), 0.5)

    def test_identical_masks(self):
        """Test that identical masks score 1 everywhere, for any beta"""
        for metric in (dice_coef, iou, precision, recall):
            self.assertEqual(metric(self.truth, self.truth), 1.0)
        for beta in (0.5, 1.0, 2.0, 4.0):
            self.assertEqual(f_beta(self.truth, self.truth, beta=beta), 1.0)

    def test_empty_conventions(self):
        """Test the empty-denominator conventions"""
        empty = np.zeros(4, dtype=int)
        self.assertEqual(dice_coef(empty, empty), 1.0)
        self.assertEqual(iou(empty, empty), 1.0)
        self.assertEqual(precision(empty, empty), 1.0)
        self.assertEqual(recall(empty, empty), 1.0)
        self.assertEqual(precision(empty, self.truth), 0.0)
        self.assertEqual(recall(self.truth, empty), 0.0)
        self.assertEqual(f_beta(empty, self.truth), 0.0)

    def test_equal_precision_and_recall(self):
        """Test that P = R makes F-beta equal P for any beta"""
        truth = np.array([1, 1, 1, 0, 0, 0])
        pred = np.array([1, 1, 0, 1, 0, 0])
        for beta in (0.5, 1.0, 3.0):
            self.assertAlmostEqual(f_beta(pred, truth, beta=beta), 2 / 3)

    def test_weight_map(self):
        """Test that uniform weights reproduce F-beta and skewed weights change it"""
        uniform = np.full(4, 3.0)
        self.assertAlmostEqual(f_beta(self.pred, self.truth, 2.0, uniform), f_beta(self.pred, self.truth, 2.0))
        skewed = np.array([1.0, 1.0, 5.0, 1.0])
        # weighted precision 1/6, recall 1/2
        expected = 5 * (1 / 6) * 0.5 / (4 * (1 / 6) + 0.5)
        self.assertAlmostEqual(f_beta(self.pred, self.truth, 2.0, skewed), expected)
        with self.assertRaises(MetricError):
            f_beta(self.pred, self.truth, 2.0, np.ones(3))

    def test_invalid_inputs(self):
        """Test non-binary masks, shape mismatches and beta <= 0"""
        with self.assertRaises(MetricError):
            dice_coef(np.array([0.5, 1.0]), np.array([1, 0]))
        with self.assertRaises(MetricError):
            iou(np.array([1, 0, 1]), np.array([1, 0]))
        with self.assertRaises(MetricError):
            f_beta(self.pred, self.truth, beta=0.0)

    def test_binarize_threshold(self):
        """Test that a probability equal to the threshold counts as foreground"""
        np.testing.assert_array_equal(binarize(np.array([0.2, 0.5, 0.7])), [0, 1, 1])
        np.testing.assert_array_equal(binarize(np.array([0.2, 0.5, 0.7]), 1.0), [0, 0, 0])
        np.testing.assert_array_equal(binarize(np.array([0.2, 0.5, 0.7]), 0.0), [1, 1, 1])


class MetricOracleTestCase(SimpleTestCase):
    """Test metric values against a brute-force pixel count on random masks"""

    def test_random_pairs(self):
        """Test 1000 random 16x16 pairs for counts, bounds and the Dice-IoU identity"""
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            density = rng.uniform(0.0, 1.0)
            pred = (rng.uniform(size=(16, 16)) < density).astype(np.uint8)
            truth = (rng.uniform(size=(16, 16)) < rng.uniform(0.0, 1.0)).astype(np.uint8)
            tp, fp, fn, tn = pixel_oracle(pred, truth)
            self.assertEqual(confusion_counts(pred, truth), (tp, fp, fn, tn))

            metrics = image_metrics(pred, truth)
            if tp + fp + fn:
                self.assertEqual(metrics['dice'], 2 * tp / (2 * tp + fp + fn))
                self.assertEqual(metrics['iou'], tp / (tp + fp + fn))
            if tp + fp:
                self.assertEqual(metrics['precision'], tp / (tp + fp))
            if tp + fn:
                self.assertEqual(metrics['recall'], tp / (tp + fn))
            for key in ('dice', 'iou', 'precision', 'recall', 'f2'):
                self.assertTrue(0.0 <= metrics[key] <= 1.0, key)
            jaccard = metrics['iou']
            self.assertAlmostEqual(metrics['dice'], 2 * jaccard / (1 + jaccard), delta=1e-9)


class EvaluateBatchTestCase(SimpleTestCase):
    """Test per-image evaluation and report aggregation"""

    def test_perfect_batch(self):
        """Test that perfect predictions give means of exactly 1"""
        masks = np.random.default_rng(0).integers(0, 2, (3, 1, 8, 8)).astype(np.float32)
        report = evaluate_batch(masks, masks)
        summary = report.to_dict()
        for key in ('miou', 'mdice', 'recall', 'precision', 'f2'):
            self.assertEqual(summary[key], 1.0)

    def test_mean_is_per_image(self):
        """Test that Dice 1.0 and 0.5 average to mDice 0.75"""
        truth = np.array([[[[1, 1, 0, 0]]], [[[1, 1, 0, 0]]]], dtype=np.float32)
        outputs = np.array([[[[0.9, 0.8, 0.1, 0.2]]], [[[0.9, 0.1, 0.7, 0.1]]]])
        report = evaluate_batch(outputs, truth, names=['a', 'b'])
        self.assertAlmostEqual(report.mdice, 0.75)
        self.assertEqual([item['name'] for item in report.to_dict()['per_image']], ['a', 'b'])

    def test_report_schema(self):
        """Test the exact top-level keys of the serialized report"""
        truth = np.ones((2, 1, 4, 4))
        report = evaluate_batch(np.full((2, 1, 4, 4), 0.7), truth)
        self.assertEqual(set(report.to_dict()), {'miou', 'mdice', 'recall', 'precision', 'f2', 'per_image'})

    def test_weighted_f_beta_serialized(self):
        """Test that the weighted F2 reaches each per-image entry and its mean"""
        truth = np.array([[[[1, 1, 0, 0]]]], dtype=np.float32)
        outputs = np.array([[[[0.9, 0.1, 0.7, 0.1]]]])
        weights = np.array([[[[1.0, 1.0, 3.0, 1.0]]]])
        report = evaluate_batch(outputs, truth, weight_maps=weights)
        entry = report.to_dict()['per_image'][0]
        # weighted precision 1/4, recall 1/2
        expected = 5 * 0.25 * 0.5 / (4 * 0.25 + 0.5)
        self.assertAlmostEqual(entry['f2'], 0.5)
        self.assertAlmostEqual(entry['f_beta_weighted'], expected)
        self.assertAlmostEqual(report.mean_f_beta_weighted, expected)

    def test_means_match_flat_recomputation(self):
        """Test report means against an independent per-image pass"""
        rng = np.random.default_rng(9)
        outputs = rng.uniform(size=(6, 1, 8, 8))
        truth = rng.integers(0, 2, (6, 1, 8, 8))
        report = evaluate_batch(outputs, truth)
        dices = [dice_coef((outputs[i] >= 0.5).astype(int), truth[i]) for i in range(6)]
        ious = [iou((outputs[i] >= 0.5).astype(int), truth[i]) for i in range(6)]
        self.assertAlmostEqual(report.mdice, sum(dices) / 6, delta=1e-9)
        self.assertAlmostEqual(report.miou, sum(ious) / 6, delta=1e-9)

    def test_extend_accumulates(self):
        """Test that reports from several batches merge into one mean"""
        truth = np.array([[[[1, 1, 0, 0]]]], dtype=np.float32)
        merged = MetricsReport()
        merged.extend(evaluate_batch(np.array([[[[1.0, 1.0, 0.0, 0.0]]]]), truth))
        merged.extend(evaluate_batch(np.array([[[[1.0, 0.0, 1.0, 0.0]]]]), truth))
        self.assertEqual(len(merged), 2)
        self.assertAlmostEqual(merged.mdice, 0.75)

    def test_invalid_batches(self):
        """Test empty batches, shape mismatches and empty reports"""
        with self.assertRaises(MetricError):
            evaluate_batch(np.zeros((0, 1, 4, 4)), np.zeros((0, 1, 4, 4)))
        with self.assertRaises(MetricError):
            evaluate_batch(np.zeros((1, 1, 4, 4)), np.zeros((1, 1, 4, 3)))
        with self.assertRaises(MetricError):
            MetricsReport().mdice
