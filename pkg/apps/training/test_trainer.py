import json
from unittest import mock

import numpy as np
import pytest

from apps.datasets.batching import Batcher
from apps.datasets.index import build_index
from apps.networks.config import ModelConfig
from apps.networks.network import build_model

from .checkpoints import load_checkpoint
from .exceptions import DivergenceError, TrainingError
from .losses import total_loss
from .test_fixtures import MaskEchoModel, TrainingTestCase, micro_config, quick_train_config
from .trainer import (
    BEST_CHECKPOINT,
    EPOCH_LOG,
    LAST_CHECKPOINT,
    EarlyStopping,
    Trainer,
    evaluate,
    predict,
    train,
)


class EarlyStoppingTestCase(TrainingTestCase):
    """Test the patience counter on the monitored score"""

    def test_patience_counts_stale_epochs(self):
        """Test that three stale epochs stop a run with patience 3"""
        stopper = EarlyStopping(patience=3, min_delta=1e-4)
        self.assertTrue(stopper.update(0.5))
        self.assertTrue(stopper.update(0.6))
        for _ in range(2):
            self.assertFalse(stopper.update(0.55))
            self.assertFalse(stopper.should_stop)
        self.assertFalse(stopper.update(0.6))
        self.assertTrue(stopper.should_stop)
        self.assertEqual(stopper.best, 0.6)

    def test_gains_below_min_delta_are_stale(self):
        """Test that an improvement no larger than min_delta does not reset the counter"""
        stopper = EarlyStopping(patience=2, min_delta=0.01)
        stopper.update(0.5)
        self.assertFalse(stopper.update(0.505))
        self.assertTrue(stopper.update(0.52))
        self.assertEqual(stopper.stale_epochs, 0)

    def test_invalid_patience(self):
        """Test that patience below 1 is rejected"""
        with self.assertRaises(TrainingError):
            EarlyStopping(patience=0)


class CallbackRecorder:
    def __init__(self):
        self.epochs, self.results, self.failures = [], [], []

    def on_epoch_end(self, log):
        self.epochs.append(log.epoch)

    def on_train_end(self, result):
        self.results.append(result)

    def on_failure(self, exc):
        self.failures.append(exc)


class TrainerRunTestCase(TrainingTestCase):
    """Test a short training run and the files it leaves behind"""

    def fit(self, out_name, train_config=None, model_config=None, resume=False, callbacks=()):
        index = self.index
        train_config = train_config or quick_train_config()
        model = build_model(model_config or micro_config())
        train_batcher, val_batcher = self.batchers(index, train_config)
        return train(model, train_batcher, val_batcher, train_config, self.tmp / out_name,
                     resume=resume, callbacks=callbacks)

    def setUp(self):
        super().setUp()
        self.index = self.dataset()

    def test_run_directory_contents(self):
        """Test epochs.jsonl, both checkpoints and the result counters"""
        callbacks = CallbackRecorder()
        result = self.fit('run', callbacks=[callbacks])
        out = self.tmp / 'run'
        lines = [json.loads(line) for line in (out / EPOCH_LOG).read_text().splitlines()]
        self.assertEqual([line['epoch'] for line in lines], [1, 2])
        self.assertEqual(set(lines[0]), {'epoch', 'train_loss', 'train_dice', 'val_loss', 'val_dice', 'val_iou'})
        for line in lines:
            self.assertGreaterEqual(line['train_dice'], 0.0)
            self.assertLessEqual(line['train_dice'], 1.0)
        self.assertTrue((out / BEST_CHECKPOINT).exists())
        self.assertEqual(load_checkpoint(out / LAST_CHECKPOINT).epoch, 2)

        # 6 training pairs in batches of 4
        self.assertEqual(result.steps, 4)
        self.assertEqual(result.epochs_run, 2)
        self.assertFalse(result.stopped_early)
        self.assertIn(result.best_value, [line['val_dice'] for line in lines])
        self.assertEqual(callbacks.epochs, [1, 2])
        self.assertEqual(len(callbacks.results), 1)
        self.assertEqual(callbacks.failures, [])

    def test_runs_are_deterministic(self):
        """Test that the same seed produces byte-identical logs and checkpoints"""
        self.fit('a')
        self.fit('b')
        for name in (EPOCH_LOG, LAST_CHECKPOINT):
            self.assertEqual((self.tmp / 'a' / name).read_bytes(), (self.tmp / 'b' / name).read_bytes())

    def test_early_stop(self):
        """Test that patience 1 with a huge min_delta stops after the second epoch"""
        result = self.fit('stop', quick_train_config(epochs=5, early_stop_patience=1, min_delta=10.0))
        self.assertTrue(result.stopped_early)
        self.assertEqual(result.epochs_run, 2)
        self.assertEqual(result.best_epoch, 1)

    def test_fresh_run_truncates_old_log(self):
        """Test that starting from epoch 0 replaces an existing epochs.jsonl"""
        (self.tmp / 'run').mkdir()
        (self.tmp / 'run' / EPOCH_LOG).write_text('{"epoch": 9}\n')
        self.fit('run', quick_train_config(epochs=1))
        lines = (self.tmp / 'run' / EPOCH_LOG).read_text().splitlines()
        self.assertEqual([json.loads(line)['epoch'] for line in lines], [1])

    def test_resume_without_directory(self):
        """Test that resuming needs a run directory"""
        train_config = quick_train_config()
        train_batcher, val_batcher = self.batchers(self.index, train_config)
        with self.assertRaises(TrainingError):
            train(build_model(micro_config()), train_batcher, val_batcher, train_config, None, resume=True)

    def test_divergence_keeps_last_good_state(self):
        """Test that a NaN loss aborts and leaves both checkpoints and the log untouched"""
        self.fit('run', quick_train_config(epochs=1))
        out = self.tmp / 'run'
        before = {name: (out / name).read_bytes() for name in (EPOCH_LOG, BEST_CHECKPOINT, LAST_CHECKPOINT)}

        def poisoned(*args, **kwargs):
            return total_loss(*args, **kwargs) * float('nan')

        callbacks = CallbackRecorder()
        with mock.patch('apps.training.trainer.total_loss', side_effect=poisoned):
            with self.assertRaises(DivergenceError):
                self.fit('run', quick_train_config(epochs=2), resume=True, callbacks=[callbacks])
        self.assertEqual(len(callbacks.failures), 1)
        for name, data in before.items():
            self.assertEqual((out / name).read_bytes(), data, name)


class TrainerResumeTestCase(TrainingTestCase):
    """Test that an interrupted run continues exactly where it stopped"""

    float64 = True

    def fit(self, out_dir, epochs, resume=False):
        train_config = quick_train_config(epochs=epochs)
        train_batcher, val_batcher = self.batchers(self.index, train_config)
        return train(build_model(micro_config()), train_batcher, val_batcher, train_config, out_dir, resume=resume)

    def setUp(self):
        super().setUp()
        self.index = self.dataset()

    def test_resume_matches_uninterrupted_run(self):
        """Test that 1 epoch plus a resume to 3 equals 3 epochs in one go"""
        self.fit(self.tmp / 'straight', 3)
        self.fit(self.tmp / 'split', 1)
        result = self.fit(self.tmp / 'split', 3, resume=True)

        self.assertEqual(result.epochs_run, 3)
        for name in (EPOCH_LOG, LAST_CHECKPOINT):
            self.assertEqual(
                (self.tmp / 'straight' / name).read_bytes(),
                (self.tmp / 'split' / name).read_bytes(),
                name,
            )

    def test_resume_drops_log_lines_past_checkpoint(self):
        """Test that epochs logged after the last checkpoint are discarded"""
        out = self.tmp / 'run'
        self.fit(out, 1)
        with open(out / EPOCH_LOG, 'a') as handle:
            handle.write(json.dumps({'epoch': 2, 'train_loss': 0.0, 'val_loss': 0.0,
                                     'val_dice': 1.0, 'val_iou': 1.0}) + '\n')
        config = quick_train_config(epochs=1)
        train_batcher, val_batcher = self.batchers(self.index, config)
        trainer = Trainer(build_model(micro_config()), train_batcher, val_batcher, config, out)
        trainer.resume()
        self.assertEqual(trainer.epoch, 1)
        self.assertEqual([log.epoch for log in trainer.history], [1])
        self.assertEqual(len((out / EPOCH_LOG).read_text().splitlines()), 1)
        self.assertEqual(trainer.best_epoch, 1)


class PredictEvaluateTestCase(TrainingTestCase):
    """Test inference helpers with a model that echoes the image"""

    def echo_dataset(self, count=4, size=16):
        root = self.tmp / 'echo'
        rng = np.random.default_rng(1)
        for i in range(count):
            mask = np.zeros((size, size), dtype=np.uint8)
            top, left = rng.integers(0, size // 2, 2)
            mask[top:top + size // 2, left:left + size // 2] = 255
            self.write_pair(root, f"case_{i}", np.repeat(mask[:, :, None], 3, axis=2), mask)
        return build_index(root, fractions=(0.5, 0.25, 0.25))

    def test_perfect_predictions_score_one(self):
        """Test that an exact probability map gives mDice and mIoU of 1"""
        index = self.echo_dataset()
        batcher = Batcher(index.split('all'), 3, 16, shuffle=False, prefetch=0)
        model = MaskEchoModel()
        loss, report = evaluate(model, batcher)
        self.assertEqual(len(report), 4)
        self.assertEqual(report.mdice, 1.0)
        self.assertEqual(report.miou, 1.0)
        self.assertLess(loss, 1e-6)
        self.assertTrue(model.training)

    def test_predict_restores_mode(self):
        """Test that predict runs in eval mode and restores the previous mode"""
        model = build_model(micro_config())
        probabilities = predict(model, self.rng.uniform(size=(2, 3, 32, 32)))
        self.assertEqual(probabilities.shape, (2, 1, 32, 32))
        self.assertTrue(np.all((probabilities > 0) & (probabilities < 1)))
        self.assertTrue(model.training)


@pytest.mark.slow
class TrainerConvergenceTestCase(TrainingTestCase):
    """Longer runs that check the model actually learns"""

    def test_overfits_four_samples(self):
        """Test that 300 steps on four 64x64 samples drive the loss well down"""
        index = self.dataset(count=8, size=64)
        config = quick_train_config(learning_rate=1e-4, batch_size=4, augment=False)
        batcher = Batcher(index.split('train')[:4], 4, 64, shuffle=False, prefetch=0)
        trainer = Trainer(build_model(ModelConfig.tiny()), batcher, batcher, config)
        batch = next(batcher.epoch(0))
        first = trainer.train_step(batch)
        for _ in range(299):
            last = trainer.train_step(batch)
        self.assertLess(last, 0.2)
        self.assertLess(last, 0.25 * first)

    def test_learns_synthetic_polyps(self):
        """Test that a short run on synthetic data beats chance on held-out images"""
        index = self.dataset(count=60, size=64)
        config = quick_train_config(epochs=8, batch_size=4, learning_rate=1e-3)
        train_batcher, val_batcher = self.batchers(index, config, image_size=64)
        model = build_model(ModelConfig.tiny())
        result = train(model, train_batcher, val_batcher, config, self.tmp / 'run')
        test = Batcher(index.split('test'), 4, 64, shuffle=False, prefetch=0)
        _, report = evaluate(model, test)
        self.assertGreater(result.best_value, 0.3)
        self.assertGreater(report.mdice, 0.3)
