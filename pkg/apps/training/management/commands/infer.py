from django.core.management.base import BaseCommand, CommandError
from apps.datasets.codecs import write_netpbm
from apps.training.metrics import DEFAULT_THRESHOLD
from apps.training.runner import load_model, segment_image, write_probabilities
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Segment one image with a checkpoint and write a binary PGM mask'

    def add_arguments(self, parser):
        parser.add_argument('--ckpt', type=str, required=True, help='PVTA checkpoint')
        parser.add_argument('--image', type=str, required=True, help='PPM, PGM or PNG image')
        parser.add_argument('--out-mask', type=str, required=True, help='Output PGM mask (0/255)')
        parser.add_argument(
            '--threshold',
            type=float,
            default=DEFAULT_THRESHOLD,
            help='Foreground where the probability is at least this value',
        )
        parser.add_argument(
            '--save-prob',
            type=str,
            help='Also write the probability map as an 8-bit PGM',
        )

    def handle(self, *args, **options):
        try:
            model, _ = load_model(options['ckpt'])
            mask, probabilities = segment_image(model, options['image'], options['threshold'])
            write_netpbm(options['out_mask'], mask)
            if options['save_prob']:
                write_probabilities(options['save_prob'], probabilities)
        except Exception as e:
            logger.error(f"Error in infer command: {e}")
            raise CommandError(f"Command failed: {str(e)}")

        foreground = float((mask > 0).mean())
        self.stdout.write(
            self.style.SUCCESS(
                f"Wrote {mask.shape[0]}x{mask.shape[1]} mask to {options['out_mask']} "
                f"({foreground:.1%} foreground)"
            )
        )
