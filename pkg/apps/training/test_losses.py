import math

import numpy as np

from apps.networks.test_fixtures import Float64TestCase
from apps.tensors.exceptions import ShapeError
from apps.tensors.gradcheck import check_gradients
from apps.tensors.tensor import Tensor

from .exceptions import TrainingError
from .losses import (
    LOSS_PRESETS,
    LossConfig,
    bce_loss,
    dice_loss,
    jaccard_loss,
    loss_components,
    total_loss,
)


class BCELossTestCase(Float64TestCase):
    """Test binary cross-entropy"""

    def test_half_probability_is_ln2(self):
        """Test that p = 0.5 everywhere gives ln 2 for any target"""
        target = Tensor(self.rng.integers(0, 2, (2, 1, 4, 4)))
        loss = bce_loss(Tensor(np.full((2, 1, 4, 4), 0.5)), target)
        self.assertAlmostEqual(loss.item(), math.log(2.0), places=12)

    def test_perfect_prediction_hits_clamp_floor(self):
        """Test that pred == target costs only about 1e-7"""
        target = Tensor(self.rng.integers(0, 2, (1, 1, 8, 8)))
        loss = bce_loss(target, target).item()
        self.assertGreater(loss, 0.0)
        self.assertLess(loss, 1e-6)

    def test_shape_mismatch(self):
        """Test that differing shapes raise ShapeError"""
        with self.assertRaises(ShapeError):
            bce_loss(Tensor(np.full((1, 1, 4, 4), 0.5)), Tensor(np.zeros((1, 1, 4, 3))))

    def test_gradient(self):
        """Test the BCE gradient against finite differences"""
        pred = Tensor(self.rng.uniform(0.05, 0.95, (2, 1, 3, 3)), requires_grad=True)
        target = Tensor(self.rng.integers(0, 2, (2, 1, 3, 3)))
        result = check_gradients('bce', lambda: bce_loss(pred, target), [pred])
        self.assertTrue(result.passed, f"max error {result.max_error:.3e}")


class JaccardLossTestCase(Float64TestCase):
    """Test the smoothed Jaccard loss"""

    def test_hand_case(self):
        """Test y = [1, 0], p = [0.5, 0.5], alpha = 1 gives 0.4"""
        loss = jaccard_loss(Tensor([0.5, 0.5]), Tensor([1.0, 0.0]), alpha=1.0)
        self.assertAlmostEqual(loss.item(), 0.4, delta=1e-9)

    def test_perfect_and_empty_overlap_are_zero(self):
        """Test that a perfect binary prediction and empty-empty masks both give exactly 0"""
        y = Tensor(self.rng.integers(0, 2, (2, 1, 8, 8)))
        self.assertEqual(jaccard_loss(y, y).item(), 0.0)
        empty = Tensor(np.zeros((1, 1, 4, 4)))
        self.assertEqual(jaccard_loss(empty, empty).item(), 0.0)

    def test_alpha_scales_the_loss(self):
        """Test that alpha multiplies the complement of the smoothed ratio"""
        pred, target = Tensor([0.5, 0.5]), Tensor([1.0, 0.0])
        expected = 2.0 * (1.0 - 2.5 / 3.5)
        self.assertAlmostEqual(jaccard_loss(pred, target, alpha=2.0).item(), expected, delta=1e-12)

    def test_gradient(self):
        """Test the Jaccard gradient against finite differences"""
        pred = Tensor(self.rng.uniform(0.05, 0.95, (2, 1, 3, 3)), requires_grad=True)
        target = Tensor(self.rng.integers(0, 2, (2, 1, 3, 3)))
        result = check_gradients('jaccard', lambda: jaccard_loss(pred, target), [pred])
        self.assertTrue(result.passed, f"max error {result.max_error:.3e}")


class DiceLossTestCase(Float64TestCase):
    """Test the soft Dice loss"""

    def test_hand_case(self):
        """Test y = [1, 1, 0, 0], p = [1, 0, 0, 0], eps = 1 gives 0.25"""
        loss = dice_loss(Tensor([1.0, 0.0, 0.0, 0.0]), Tensor([1.0, 1.0, 0.0, 0.0]), epsilon=1.0)
        self.assertAlmostEqual(loss.item(), 0.25, delta=1e-9)

    def test_perfect_prediction_is_exactly_zero(self):
        """Test that epsilon cancels for a perfect binary prediction"""
        y = Tensor(self.rng.integers(0, 2, (2, 1, 8, 8)))
        self.assertEqual(dice_loss(y, y).item(), 0.0)

    def test_disjoint_masks_approach_one(self):
        """Test that disjoint masks with a tiny epsilon cost nearly 1"""
        loss = dice_loss(Tensor([0.0, 0.0, 1.0, 1.0]), Tensor([1.0, 1.0, 0.0, 0.0]), epsilon=1e-6)
        self.assertAlmostEqual(loss.item(), 1.0, places=6)

    def test_gradient(self):
        """Test the Dice gradient against finite differences"""
        pred = Tensor(self.rng.uniform(0.05, 0.95, (2, 1, 3, 3)), requires_grad=True)
        target = Tensor(self.rng.integers(0, 2, (2, 1, 3, 3)))
        result = check_gradients('dice', lambda: dice_loss(pred, target), [pred])
        self.assertTrue(result.passed, f"max error {result.max_error:.3e}")


class TotalLossTestCase(Float64TestCase):
    """Test the weighted compound loss"""

    def test_equals_component_sum(self):
        """Test that the default total equals BCE + Dice + Jaccard within 1e-7"""
        for _ in range(20):
            pred = Tensor(self.rng.uniform(0.01, 0.99, (2, 1, 6, 6)))
            target = Tensor(self.rng.integers(0, 2, (2, 1, 6, 6)))
            parts = loss_components(pred, target)
            expected = sum(part.item() for part in parts.values())
            self.assertAlmostEqual(total_loss(pred, target).item(), expected, delta=1e-7)

    def test_perfect_prediction_is_bce_floor(self):
        """Test that a perfect prediction costs only the clamped BCE"""
        y = Tensor(self.rng.integers(0, 2, (1, 1, 8, 8)))
        self.assertAlmostEqual(total_loss(y, y).item(), bce_loss(y, y).item(), delta=1e-15)

    def test_monotone_towards_target(self):
        """Test that moving the prediction towards the target strictly lowers the total"""
        target = self.rng.integers(0, 2, (1, 1, 8, 8)).astype(np.float64)
        start = self.rng.uniform(0.05, 0.95, target.shape)
        losses = [
            total_loss(Tensor((1 - t) * start + t * target), Tensor(target)).item()
            for t in np.linspace(0.0, 0.95, 20)
        ]
        self.assertTrue(all(later < earlier for earlier, later in zip(losses, losses[1:])))

    def test_presets_drop_a_component(self):
        """Test that bce_dice omits Jaccard and dice_jaccard omits BCE"""
        pred = Tensor(self.rng.uniform(0.05, 0.95, (1, 1, 4, 4)))
        target = Tensor(self.rng.integers(0, 2, (1, 1, 4, 4)))
        parts = {name: part.item() for name, part in loss_components(pred, target).items()}
        bce_dice = total_loss(pred, target, LossConfig.preset('bce_dice')).item()
        dice_jaccard = total_loss(pred, target, LossConfig.preset('dice_jaccard')).item()
        self.assertAlmostEqual(bce_dice, parts['bce'] + parts['dice'], delta=1e-12)
        self.assertAlmostEqual(dice_jaccard, parts['dice'] + parts['jaccard'], delta=1e-12)
        self.assertEqual(set(LOSS_PRESETS), {'total', 'bce_dice', 'dice_jaccard'})

    def test_weight_overrides(self):
        """Test that overridden weights replace only the named components of a preset"""
        pred = Tensor(self.rng.uniform(0.05, 0.95, (1, 1, 4, 4)))
        target = Tensor(self.rng.integers(0, 2, (1, 1, 4, 4)))
        parts = {name: part.item() for name, part in loss_components(pred, target).items()}
        config = LossConfig.preset('bce_dice').with_weights({'dice': 0.25, 'jaccard': 2.0})
        self.assertEqual((config.w_bce, config.w_dice, config.w_jac), (1.0, 0.25, 2.0))
        expected = parts['bce'] + 0.25 * parts['dice'] + 2.0 * parts['jaccard']
        self.assertAlmostEqual(total_loss(pred, target, config).item(), expected, delta=1e-12)
        self.assertEqual(LossConfig.preset('bce_dice').w_jac, 0.0)

    def test_invalid_config(self):
        """Test non-positive smoothing, negative weights, unknown presets and keys"""
        pred = Tensor(np.full((1, 1, 2, 2), 0.5))
        with self.assertRaises(TrainingError):
            total_loss(pred, pred, LossConfig(alpha=0.0))
        with self.assertRaises(TrainingError):
            total_loss(pred, pred, LossConfig(w_bce=-1.0))
        with self.assertRaises(TrainingError):
            LossConfig.preset('focal')
        with self.assertRaises(TrainingError):
            LossConfig.from_dict({'gamma': 2.0})
        with self.assertRaises(TrainingError):
            total_loss(pred, pred, LossConfig(w_bce=0.0, w_dice=0.0, w_jac=0.0))
        with self.assertRaises(TrainingError):
            LossConfig().with_weights({'focal': 1.0})
        with self.assertRaises(TrainingError):
            LossConfig().with_weights({'dice': 'heavy'})
