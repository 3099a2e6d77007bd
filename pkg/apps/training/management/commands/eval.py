from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from pathlib import Path
from apps.datasets.index import SPLITS
from apps.training.metrics import DEFAULT_THRESHOLD
from apps.training.runner import evaluate_checkpoint
import json
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Evaluate a checkpoint on a dataset split and write a metrics report'

    def add_arguments(self, parser):
        parser.add_argument(
            '--data',
            type=str,
            default=str(settings.SEGMENTATION_DATA_ROOT),
            help='Dataset directory with images/ and masks/',
        )
        parser.add_argument(
            '--ckpt',
            type=str,
            required=True,
            help='PVTA checkpoint to evaluate',
        )
        parser.add_argument(
            '--split',
            choices=list(SPLITS) + ['all'],
            default='test',
            help='Split to score (drawn with the seed stored in the checkpoint)',
        )
        parser.add_argument(
            '--report',
            type=str,
            help='Write the JSON report here',
        )
        parser.add_argument(
            '--threshold',
            type=float,
            default=DEFAULT_THRESHOLD,
            help='Probability threshold for the binary prediction',
        )

    def handle(self, *args, **options):
        try:
            report = evaluate_checkpoint(
                options['data'], options['ckpt'], split=options['split'], threshold=options['threshold']
            )
            summary = report.to_dict()
            if options['report']:
                Path(options['report']).write_text(json.dumps(summary, indent=2, sort_keys=True) + '\n')
        except Exception as e:
            logger.error(f"Error in eval command: {e}")
            raise CommandError(f"Command failed: {str(e)}")

        self.stdout.write(f"{len(report)} images from the {options['split']} split")
        for key in ('miou', 'mdice', 'recall', 'precision', 'f2'):
            self.stdout.write(f"  {key:<10} {summary[key]:.4f}")
        self.stdout.write(f"  {'wf2':<10} {report.mean_f_beta_weighted:.4f}")
        if options['report']:
            self.stdout.write(self.style.SUCCESS(f"Report written to {options['report']}"))
