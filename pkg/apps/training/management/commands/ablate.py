from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pathlib import Path
from apps.networks.config import ModelVariant
from apps.training.ablation import run_ablation
from apps.training.config import add_run_arguments, run_config_from_options
from apps.training.tasks import run_ablation as run_ablation_task
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Train every model variant on the same data and seed and compare their metrics'

    def add_arguments(self, parser):
        parser.add_argument(
            '--data',
            type=str,
            default=str(settings.SEGMENTATION_DATA_ROOT),
            help='Dataset directory with images/ and masks/',
        )
        parser.add_argument(
            '--out',
            type=str,
            help='Directory for the per-variant runs and ablation.json',
        )
        parser.add_argument(
            '--variants',
            nargs='+',
            choices=[variant.value for variant in ModelVariant],
            help='Subset of variants (default all four)',
        )
        parser.add_argument(
            '--async',
            action='store_true',
            help='Queue the ablation as a Celery task (requires a worker)',
        )
        add_run_arguments(parser)
        parser.set_defaults(epochs=3)

    def handle(self, *args, **options):
        try:
            model_config, train_config = run_config_from_options(options)
            out_dir = Path(options['out'] or (
                Path(settings.SEGMENTATION_RUNS_ROOT) / f"ablation-seed{train_config.seed}"
            ))

            if options['async']:
                task = run_ablation_task.delay(
                    options['data'], model_config.to_dict(), train_config.to_dict(),
                    str(out_dir), options['epochs'], options['variants'],
                )
                self.stdout.write(self.style.SUCCESS(f"Queued ablation task {task.id} -> {out_dir}"))
                return

            result = run_ablation(
                options['data'], model_config, train_config, out_dir,
                epochs=options['epochs'], variants=options['variants'],
            )
        except Exception as e:
            logger.error(f"Error in ablate command: {e}")
            raise CommandError(f"Command failed: {str(e)}")

        self.stdout.write(f"Scores on the {result.split} split after {options['epochs']} epochs:")
        self.stdout.write(result.table())
        if not result.ordering_holds:
            self.stdout.write(self.style.WARNING("Full variant scored below the base variant on this seed"))
        self.stdout.write(self.style.SUCCESS(f"Ablation written to {out_dir / 'ablation.json'}"))
