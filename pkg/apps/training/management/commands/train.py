from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pathlib import Path
from apps.networks.config import ModelVariant
from apps.training.config import add_run_arguments, run_config_from_options
from apps.training.runner import run_training
from apps.training.tasks import run_training as run_training_task
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Train a segmentation model variant and write best.ckpt, last.ckpt and epochs.jsonl'

    def add_arguments(self, parser):
        parser.add_argument(
            '--data',
            type=str,
            default=str(settings.SEGMENTATION_DATA_ROOT),
            help='Dataset directory with images/ and masks/',
        )
        parser.add_argument(
            '--variant',
            choices=[variant.value for variant in ModelVariant],
            help='Model variant (overrides the config file, default full)',
        )
        parser.add_argument(
            '--out',
            type=str,
            help='Run directory (default <runs root>/<variant>-seed<seed>)',
        )
        parser.add_argument(
            '--resume',
            action='store_true',
            help='Continue from last.ckpt in the run directory',
        )
        parser.add_argument(
            '--no-record',
            action='store_true',
            help='Do not write the run to the registry database',
        )
        parser.add_argument(
            '--async',
            action='store_true',
            help='Queue the run as a Celery task (requires a worker)',
        )
        add_run_arguments(parser)

    def handle(self, *args, **options):
        try:
            model_config, train_config = run_config_from_options(options, options['variant'])
            out_dir = Path(options['out'] or (
                Path(settings.SEGMENTATION_RUNS_ROOT) / f"{model_config.variant}-seed{train_config.seed}"
            ))

            if options['async']:
                task = run_training_task.delay(
                    options['data'], model_config.to_dict(), train_config.to_dict(),
                    str(out_dir), options['resume'],
                )
                self.stdout.write(self.style.SUCCESS(f"Queued training task {task.id} -> {out_dir}"))
                return

            self.stdout.write(
                f"Training {model_config.variant} on {options['data']} "
                f"(seed {train_config.seed}, up to {train_config.epochs} epochs) -> {out_dir}"
            )
            result, run_id = run_training(
                options['data'], model_config, train_config, out_dir,
                resume=options['resume'], record=not options['no_record'],
            )
        except Exception as e:
            logger.error(f"Error in train command: {e}")
            raise CommandError(f"Command failed: {str(e)}")

        if result.stopped_early:
            self.stdout.write(self.style.WARNING(f"Early stopping after epoch {result.epochs_run}"))
        registry = f", registry run {run_id}" if run_id is not None else ''
        self.stdout.write(
            self.style.SUCCESS(
                f"Best val mDice {result.best_value:.4f} at epoch {result.best_epoch} "
                f"({result.steps} steps{registry}); checkpoint {result.best_checkpoint}"
            )
        )
