from unittest.mock import patch

from django.db import OperationalError
from django.test import SimpleTestCase, TestCase, override_settings

from apps.networks.exceptions import ConfigError

from .config import TrainConfig, load_run_config, run_config_from_options
from .exceptions import TrainingError
from .models import EpochRecord, TrainingRun
from .runs import RunRecorder
from .test_fixtures import TrainingTestCase, micro_config, quick_train_config
from .trainer import EpochLog, TrainResult


class TrainingRunModelTest(TestCase):
    """Test the run registry models"""

    def setUp(self):
        self.run = TrainingRun.objects.create(variant='full', seed=4, config={'model': {}, 'train': {}})

    def test_run_defaults(self):
        """Test default status and counters of a new run"""
        self.assertEqual(self.run.status, 'running')
        self.assertFalse(self.run.is_finished)
        self.assertIsNone(self.run.best_val_dice)
        self.assertEqual(str(self.run), f"Run {self.run.id} - full - seed 4 - running")

    def test_epoch_records_are_ordered(self):
        """Test that epochs come back in order through the related name"""
        for epoch in (2, 1):
            EpochRecord.objects.create(run=self.run, epoch=epoch, train_loss=1.0, val_loss=1.0,
                                       val_dice=0.1 * epoch, val_iou=0.05 * epoch)
        self.assertEqual([record.epoch for record in self.run.epochs.all()], [1, 2])


class RunRecorderTest(TestCase):
    """Test the trainer callback that fills the registry"""

    def setUp(self):
        self.recorder = RunRecorder(micro_config(variant='dsenc'), quick_train_config(), '/data', '/runs/a')

    def test_records_epochs_and_completion(self):
        """Test epoch rows, the epoch counter and the final status"""
        self.recorder.on_epoch_end(EpochLog(1, 0.9, 0.8, 0.4, 0.3))
        self.recorder.on_epoch_end(EpochLog(2, 0.7, 0.6, 0.5, 0.35, train_dice=0.55))
        self.recorder.on_train_end(TrainResult(best_value=0.5, best_epoch=2, epochs_run=2, steps=8,
                                               stopped_early=True))
        run = TrainingRun.objects.get(id=self.recorder.run_id)
        self.assertEqual(run.variant, 'dsenc')
        self.assertEqual(run.status, 'stopped')
        self.assertEqual(run.best_epoch, 2)
        self.assertEqual(run.best_val_dice, 0.5)
        self.assertEqual(run.epochs.count(), 2)
        self.assertEqual([record.train_dice for record in run.epochs.all()], [None, 0.55])
        self.assertEqual(run.config['model']['variant'], 'dsenc')

    def test_resumed_epoch_overwrites(self):
        """Test that recording the same epoch twice keeps one row"""
        self.recorder.on_epoch_end(EpochLog(1, 0.9, 0.8, 0.4, 0.3))
        self.recorder.on_epoch_end(EpochLog(1, 0.5, 0.5, 0.6, 0.5))
        record = EpochRecord.objects.get(run_id=self.recorder.run_id)
        self.assertEqual(record.val_dice, 0.6)

    def test_failure_status(self):
        """Test that a failure stores the error message"""
        self.recorder.on_failure(TrainingError('loss became nan'))
        run = TrainingRun.objects.get(id=self.recorder.run_id)
        self.assertEqual(run.status, 'failed')
        self.assertIn('loss became nan', run.error_message)

    def test_database_errors_disable_recording(self):
        """Test that a broken database is logged once and then ignored"""
        with patch.object(EpochRecord.objects, 'update_or_create', side_effect=OperationalError('locked')):
            with self.assertLogs('apps.training.runs', level='WARNING') as logs:
                self.recorder.on_epoch_end(EpochLog(1, 0.9, 0.8, 0.4, 0.3))
        self.assertFalse(self.recorder.enabled)
        self.assertEqual(len(logs.records), 1)
        self.recorder.on_train_end(TrainResult(0.4, 1, 1, 4, False))
        self.assertEqual(TrainingRun.objects.get(id=self.recorder.run_id).status, 'running')

    def test_unmigrated_database(self):
        """Test that failing to create the run leaves a disabled recorder"""
        with patch.object(TrainingRun.objects, 'create', side_effect=OperationalError('no such table')):
            recorder = RunRecorder(micro_config(), quick_train_config())
        self.assertIsNone(recorder.run_id)
        self.assertFalse(recorder.enabled)
        recorder.on_epoch_end(EpochLog(1, 0.9, 0.8, 0.4, 0.3))


class RunConfigTest(TrainingTestCase):
    """Test merging defaults, config files and flag overrides"""

    @override_settings(SEGMENTATION_IMAGE_SIZE=64, SEGMENTATION_DEFAULT_SEED=11)
    def test_defaults_come_from_settings(self):
        """Test image size and seeds when nothing else is given"""
        model, train = load_run_config()
        self.assertEqual(model.image_size, 64)
        self.assertEqual(model.seed, 11)
        self.assertEqual(train.seed, 11)
        self.assertEqual(model.variant, 'full')
        self.assertEqual(train.learning_rate, 1e-4)

    def test_file_then_flags(self):
        """Test that flags win over the file and unset flags do not mask it"""
        path = self.write_run_config(train={'epochs': 4, 'batch_size': 2})
        model, train = load_run_config(path, {'variant': 'base', 'seed': None}, {'epochs': 7, 'batch_size': None})
        self.assertEqual(model.image_size, 32)
        self.assertEqual(model.variant, 'base')
        self.assertEqual(train.epochs, 7)
        self.assertEqual(train.batch_size, 2)

    def test_invalid_files(self):
        """Test unreadable JSON, unknown sections, unknown keys and invalid values"""
        broken = self.tmp / 'broken.json'
        broken.write_text('{not json')
        with self.assertRaises(TrainingError):
            load_run_config(broken)
        with self.assertRaises(TrainingError):
            load_run_config(self.tmp / 'missing.json')
        extra = self.tmp / 'extra.json'
        extra.write_text('{"model": {}, "optimizer": {}}')
        with self.assertRaises(TrainingError):
            load_run_config(extra)
        with self.assertRaises(TrainingError):
            load_run_config(self.write_run_config(train={'momentum': 0.9}, name='b.json'))
        with self.assertRaises(ConfigError):
            load_run_config(self.write_run_config(model={'image_size': 40}, name='c.json'))

    def test_loss_weight_overrides(self):
        """Test component weights from a config file and from the flag"""
        path = self.write_run_config(train={'loss': 'bce_dice', 'loss_weights': {'jaccard': 0.5}})
        _, train = load_run_config(path)
        loss = train.loss_config()
        self.assertEqual((loss.w_bce, loss.w_dice, loss.w_jac), (1.0, 1.0, 0.5))

        _, train = run_config_from_options({'loss_weights': [0.5, 1.0, 0.0]})
        self.assertEqual(train.loss_weights, {'bce': 0.5, 'dice': 1.0, 'jaccard': 0.0})
        self.assertEqual(train.loss_config().w_bce, 0.5)


class TrainConfigTest(SimpleTestCase):
    """Test training hyperparameter validation"""

    def test_defaults(self):
        """Test the default optimizer, loss and threshold settings"""
        config = TrainConfig().validate()
        adam = config.adam_config()
        self.assertEqual((adam.lr, adam.beta1, adam.beta2, adam.eps), (1e-4, 0.9, 0.999, 1e-8))
        self.assertEqual(config.loss_config().alpha, 1.0)
        self.assertEqual(config.threshold, 0.5)

    def test_invalid_values(self):
        """Test that non-positive budgets and unknown loss presets are rejected"""
        for overrides in ({'epochs': 0}, {'batch_size': 0}, {'loss': 'focal'}, {'early_stop_patience': 0}):
            with self.subTest(overrides), self.assertRaises(TrainingError):
                TrainConfig(**overrides).validate()

    def test_invalid_loss_weights(self):
        """Test unknown components, a non-mapping value and all-zero weights"""
        for weights in ({'focal': 1.0}, [1.0, 1.0, 1.0], {'bce': 0, 'dice': 0, 'jaccard': 0}):
            with self.subTest(weights=weights), self.assertRaises(TrainingError):
                TrainConfig(loss_weights=weights).validate()
