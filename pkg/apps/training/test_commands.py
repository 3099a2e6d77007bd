import json
from io import StringIO
from unittest import mock

import numpy as np
import pytest
from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase

from apps.datasets.codecs import read_image
from apps.networks.network import build_model
from apps.tensors.ops import Conv2d

from .checkpoints import Checkpoint, capture, save_checkpoint
from .models import EpochRecord, TrainingRun
from .test_fixtures import MICRO_MODEL, MaskEchoModel, TrainingTestCase, micro_config
from .verification import gradcheck_suite


def run(*args):
    out = StringIO()
    call_command(*args, stdout=out)
    return out.getvalue()


class GenDataCommandTestCase(TrainingTestCase):
    """Test the synthetic dataset generator command"""

    def test_writes_requested_pairs(self):
        """Test that --count pairs and index.json are written"""
        out = self.tmp / 'data'
        output = run('gen_data', '--out', str(out), '--count', '5', '--size', '32', '--seed', '4')
        self.assertEqual(len(list((out / 'images').iterdir())), 5)
        self.assertEqual(len(list((out / 'masks').iterdir())), 5)
        manifest = json.loads((out / 'index.json').read_text())
        self.assertEqual(len(manifest['pairs']), 5)
        self.assertIn('Wrote 5 pairs', output)

    def test_same_seed_same_bytes(self):
        """Test that two runs with one seed write identical files"""
        for name in ('a', 'b'):
            run('gen_data', '--out', str(self.tmp / name), '--count', '3', '--size', '16', '--seed', '9')
        for relative in ('images/synth_00002.ppm', 'masks/synth_00002.pgm', 'index.json'):
            self.assertEqual((self.tmp / 'a' / relative).read_bytes(), (self.tmp / 'b' / relative).read_bytes())

    def test_unwritable_output(self):
        """Test that an output path below a regular file fails cleanly"""
        blocker = self.tmp / 'file.txt'
        blocker.write_text('x')
        with self.assertRaises(CommandError):
            run('gen_data', '--out', str(blocker / 'data'), '--count', '2', '--size', '16')

    def test_invalid_count(self):
        """Test that a zero count is rejected"""
        with self.assertRaises(CommandError):
            run('gen_data', '--out', str(self.tmp / 'data'), '--count', '0')


class TrainCommandTestCase(TrainingTestCase, TestCase):
    """Test the train command end to end on a micro model"""

    def setUp(self):
        super().setUp()
        self.dataset()
        self.data = str(self.tmp / 'synth')
        self.config = str(self.write_run_config(train={'epochs': 1, 'batch_size': 4}))

    def train(self, out_name, *extra):
        return run('train', '--data', self.data, '--config', self.config,
                   '--out', str(self.tmp / out_name), '--seed', '3', *extra)

    def test_smoke_run_registers(self):
        """Test that one epoch writes the run files and a completed registry row"""
        output = self.train('run')
        out = self.tmp / 'run'
        for name in ('best.ckpt', 'last.ckpt', 'epochs.jsonl', 'config.json'):
            self.assertTrue((out / name).exists(), name)
        config = json.loads((out / 'config.json').read_text())
        self.assertEqual(config['model']['seed'], 3)
        self.assertEqual(config['train']['seed'], 3)
        self.assertIn('Best val mDice', output)

        run_row = TrainingRun.objects.get()
        self.assertEqual(run_row.status, 'completed')
        self.assertEqual(run_row.variant, 'full')
        self.assertEqual(run_row.epochs_run, 1)
        record = EpochRecord.objects.get(run=run_row)
        self.assertTrue(0.0 <= record.train_dice <= 1.0)

    def test_no_record(self):
        """Test that --no-record leaves the registry empty"""
        self.train('run', '--no-record', '--variant', 'base')
        self.assertEqual(TrainingRun.objects.count(), 0)
        config = json.loads((self.tmp / 'run' / 'config.json').read_text())
        self.assertEqual(config['model']['variant'], 'base')

    def test_same_seed_same_log(self):
        """Test that two runs with one seed log identical epochs"""
        self.train('a', '--no-record')
        self.train('b', '--no-record')
        self.assertEqual((self.tmp / 'a' / 'epochs.jsonl').read_bytes(), (self.tmp / 'b' / 'epochs.jsonl').read_bytes())

    def test_rejects_bad_arguments(self):
        """Test an unknown variant, a missing dataset and a bad image size"""
        with self.assertRaises(CommandError):
            run('train', '--variant', 'bogus')
        with self.assertRaises(CommandError):
            run('train', '--data', str(self.tmp / 'missing'), '--config', self.config, '--no-record')
        with self.assertRaises(CommandError):
            self.train('run', '--image-size', '40', '--no-record')


class EvalCommandTestCase(TrainingTestCase):
    """Test checkpoint evaluation reports"""

    def setUp(self):
        super().setUp()
        self.dataset()
        self.data = str(self.tmp / 'synth')
        config = str(self.write_run_config(train={'epochs': 1, 'batch_size': 4}))
        run('train', '--data', self.data, '--config', config, '--out', str(self.tmp / 'run'), '--no-record')
        self.ckpt = str(self.tmp / 'run' / 'best.ckpt')

    def test_report_schema_and_repeatability(self):
        """Test the report keys and that two evaluations write the same bytes"""
        for name in ('a.json', 'b.json'):
            run('eval', '--data', self.data, '--ckpt', self.ckpt, '--split', 'all',
                '--report', str(self.tmp / name))
        report = json.loads((self.tmp / 'a.json').read_text())
        self.assertEqual(set(report), {'miou', 'mdice', 'recall', 'precision', 'f2', 'per_image'})
        self.assertEqual(len(report['per_image']), 12)
        self.assertEqual((self.tmp / 'a.json').read_bytes(), (self.tmp / 'b.json').read_bytes())

    def test_invalid_inputs(self):
        """Test an unknown split and a missing checkpoint"""
        with self.assertRaises(CommandError):
            run('eval', '--data', self.data, '--ckpt', self.ckpt, '--split', 'bogus')
        with self.assertRaises(CommandError):
            run('eval', '--data', self.data, '--ckpt', str(self.tmp / 'missing.ckpt'))


class EvalOracleTestCase(TrainingTestCase):
    """Test that a perfect predictor scores exactly 1"""

    def test_perfect_model(self):
        """Test mDice and mIoU of 1 for a model that echoes the ground truth"""
        root = self.tmp / 'echo'
        rng = np.random.default_rng(3)
        for i in range(5):
            mask = np.zeros((32, 32), dtype=np.uint8)
            top, left = rng.integers(0, 16, 2)
            mask[top:top + 12, left:left + 10] = 255
            self.write_pair(root, f"case_{i}", np.repeat(mask[:, :, None], 3, axis=2), mask)
        checkpoint = Checkpoint(model_config={}, train_config={'seed': 0, 'batch_size': 2})
        report_path = self.tmp / 'report.json'
        with mock.patch('apps.training.runner.load_model', return_value=(MaskEchoModel(), checkpoint)):
            run('eval', '--data', str(root), '--ckpt', 'unused.ckpt', '--split', 'all', '--report', str(report_path))
        report = json.loads(report_path.read_text())
        self.assertEqual(report['mdice'], 1.0)
        self.assertEqual(report['miou'], 1.0)


class InferCommandTestCase(TrainingTestCase):
    """Test single-image segmentation"""

    def setUp(self):
        super().setUp()
        self.ckpt = str(save_checkpoint(capture(build_model(micro_config())), self.tmp / 'model.ckpt'))
        self.image = self.write_image('wide', 32, 48)

    def write_image(self, stem, height, width):
        pixels = self.rng.integers(0, 256, (height, width, 3)).astype(np.uint8)
        image_path, _ = self.write_pair(self.tmp / 'images', stem, pixels, pixels[:, :, 0])
        return str(image_path)

    def infer(self, *extra):
        mask_path = self.tmp / 'mask.pgm'
        run('infer', '--ckpt', self.ckpt, '--image', self.image, '--out-mask', str(mask_path), *extra)
        return read_image(mask_path)

    def test_mask_matches_image(self):
        """Test that the mask has the image size and only the values 0 and 255"""
        mask = self.infer()
        self.assertEqual(mask.shape, (32, 48))
        self.assertTrue(set(np.unique(mask)) <= {0, 255})

    def test_extreme_thresholds(self):
        """Test that threshold 0 marks everything and threshold 1 nothing"""
        self.assertTrue(np.all(self.infer('--threshold', '0') == 255))
        self.assertTrue(np.all(self.infer('--threshold', '1') == 0))

    def test_save_probabilities(self):
        """Test that --save-prob writes an 8-bit map consistent with the mask"""
        prob_path = self.tmp / 'prob.pgm'
        mask = self.infer('--save-prob', str(prob_path))
        probabilities = read_image(prob_path)
        self.assertEqual(probabilities.shape, mask.shape)
        self.assertTrue(np.all(probabilities[mask == 255] >= 127))

    def test_rejects_indivisible_size(self):
        """Test that a side not divisible by the stride is refused with a padding hint"""
        self.image = self.write_image('odd', 30, 32)
        with self.assertRaisesMessage(CommandError, 'pad to 32x32'):
            self.infer()
        self.assertFalse((self.tmp / 'mask.pgm').exists())


class GradcheckCommandTestCase(TrainingTestCase):
    """Test the gradient check command and that it catches broken gradients"""

    def test_operators_pass(self):
        """Test that every operator and block gradient passes"""
        output = run('gradcheck', '--skip-model')
        self.assertIn('gradient checks passed', output)

    def test_broken_convolution_gradient_is_caught(self):
        """Test that scaling the convolution input gradient fails the suite"""
        original = Conv2d.backward

        def broken(function, grad):
            grad_x, grad_w, grad_bias = original(function, grad)
            return grad_x * 1.5, grad_w, grad_bias

        with mock.patch.object(Conv2d, 'backward', broken):
            report = gradcheck_suite(include_model=False)
            with self.assertRaises(CommandError):
                run('gradcheck', '--skip-model')
        self.assertFalse(report.passed)
        self.assertTrue(any('conv2d' in outcome.name for outcome in report.failures))


class AblateCommandTestCase(TrainingTestCase):
    """Test the variant comparison on a micro model"""

    def test_two_variant_ablation(self):
        """Test that ablation.json holds a row per requested variant"""
        self.dataset()
        config = self.write_run_config(dict(MICRO_MODEL), {'batch_size': 4})
        out = self.tmp / 'ablation'
        output = run('ablate', '--data', str(self.tmp / 'synth'), '--out', str(out), '--config', str(config),
                     '--epochs', '1', '--variants', 'base', 'full')
        result = json.loads((out / 'ablation.json').read_text())
        self.assertEqual(set(result['variants']), {'base', 'full'})
        self.assertEqual(result['split'], 'test')
        self.assertEqual(set(result['variants']['full']), {'miou', 'mdice', 'recall', 'precision', 'f2'})
        self.assertTrue((out / 'base' / 'best.ckpt').exists())
        self.assertIn('mdice', output)


@pytest.mark.slow
class SelftestCommandTestCase(TrainingTestCase):
    """Full self-test including the end-to-end model gradient"""

    def test_selftest_passes(self):
        """Test that every check of the self-test passes"""
        output = run('selftest', '--seed', '0')
        self.assertIn('checks passed', output)
