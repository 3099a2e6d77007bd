from io import StringIO

from celery import current_app
from django.core.management import call_command
from django.test import TestCase, override_settings

from apps.datasets.exceptions import DatasetError

from .models import TrainingRun
from .tasks import run_ablation, run_training
from .test_fixtures import TrainingTestCase, micro_config, quick_train_config


# Use eager task execution for testing
@override_settings(CELERY_TASK_ALWAYS_EAGER=True)
class TrainingTaskTest(TrainingTestCase, TestCase):
    """Test the Celery training and ablation tasks"""

    def setUp(self):
        super().setUp()
        conf = current_app.conf
        previous = (conf.task_always_eager, conf.task_eager_propagates)
        conf.task_always_eager = True
        conf.task_eager_propagates = True
        self.addCleanup(self._restore_conf, previous)

        self.dataset()
        self.data = str(self.tmp / 'synth')
        self.model = micro_config(seed=3).to_dict()
        self.train = quick_train_config(epochs=1).to_dict()

    def _restore_conf(self, previous):
        current_app.conf.task_always_eager, current_app.conf.task_eager_propagates = previous

    def test_run_training_task(self):
        """Test that the task trains, registers the run and returns its summary"""
        out = self.tmp / 'run'
        summary = run_training.delay(self.data, self.model, self.train, str(out)).get()

        self.assertEqual(summary['epochs_run'], 1)
        self.assertEqual(summary['out_dir'], str(out))
        self.assertTrue((out / 'best.ckpt').exists())
        run = TrainingRun.objects.get(id=summary['run_id'])
        self.assertEqual(run.status, 'completed')
        self.assertEqual(run.seed, 3)

    def test_default_run_directory(self):
        """Test that a task without out_dir writes under the runs root, named by task id"""
        with override_settings(SEGMENTATION_RUNS_ROOT=self.tmp / 'runs'):
            result = run_training.delay(self.data, self.model, self.train)
            summary = result.get()
        self.assertEqual(summary['out_dir'], str(self.tmp / 'runs' / f"task-{result.id}"))

    def test_task_failure_propagates(self):
        """Test that a missing dataset fails the task"""
        with self.assertRaises(DatasetError):
            run_training.delay(str(self.tmp / 'missing'), self.model, self.train, str(self.tmp / 'run')).get()

    def test_run_ablation_task(self):
        """Test that the ablation task returns one row per variant"""
        result = run_ablation.delay(
            self.data, self.model, self.train, str(self.tmp / 'ablation'), 1, ['base'],
        ).get()
        self.assertEqual(list(result['variants']), ['base'])
        self.assertIn(result['split'], ('test', 'val'))
        self.assertTrue((self.tmp / 'ablation' / 'ablation.json').exists())

    def test_train_command_async(self):
        """Test that --async queues the run instead of training inline"""
        out = StringIO()
        config = self.write_run_config(train={'epochs': 1, 'batch_size': 4})
        call_command('train', '--data', self.data, '--config', str(config), '--out', str(self.tmp / 'queued'),
                     '--async', stdout=out)
        self.assertIn('Queued training task', out.getvalue())
        self.assertTrue((self.tmp / 'queued' / 'last.ckpt').exists())
