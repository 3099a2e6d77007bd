from django.conf import settings
from django.core.management.base import BaseCommand, CommandError
from apps.datasets.index import DEFAULT_FRACTIONS
from apps.datasets.synthetic import SynthSpec, generate_synthetic
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Generate a synthetic polyp-like image/mask dataset with an index manifest'

    def add_arguments(self, parser):
        parser.add_argument(
            '--out',
            type=str,
            default=str(settings.SEGMENTATION_DATA_ROOT),
            help='Dataset directory (images/, masks/ and index.json are written here)',
        )
        parser.add_argument(
            '--count',
            type=int,
            default=100,
            help='Number of image/mask pairs',
        )
        parser.add_argument(
            '--size',
            type=int,
            default=64,
            help='Side length of the square images',
        )
        parser.add_argument(
            '--seed',
            type=int,
            default=settings.SEGMENTATION_DEFAULT_SEED,
            help='Seed; the same seed always writes the same bytes',
        )
        parser.add_argument(
            '--fractions',
            type=float,
            nargs=3,
            default=list(DEFAULT_FRACTIONS),
            metavar=('TRAIN', 'VAL', 'TEST'),
            help='Split fractions reported for the generated index',
        )

    def handle(self, *args, **options):
        spec = SynthSpec(count=options['count'], image_size=options['size'], seed=options['seed'])
        try:
            index = generate_synthetic(spec, options['out'], fractions=tuple(options['fractions']))
        except Exception as e:
            logger.error(f"Error in gen_data command: {e}")
            raise CommandError(f"Command failed: {str(e)}")

        counts = ', '.join(f"{name} {len(indices)}" for name, indices in index.splits.items())
        self.stdout.write(
            self.style.SUCCESS(f"Wrote {len(index)} pairs to {options['out']} ({counts})")
        )
