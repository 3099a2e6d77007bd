from django.core.management.base import BaseCommand, CommandError
from apps.training.verification import gradcheck_suite
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Check every analytic gradient against central finite differences at 64-bit precision'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0, help='Seed of the random test tensors')
        parser.add_argument(
            '--skip-model',
            action='store_true',
            help='Leave out the end-to-end model check',
        )

    def handle(self, *args, **options):
        report = gradcheck_suite(seed=options['seed'], include_model=not options['skip_model'])
        self.stdout.write(report.table())
        if not report.passed:
            names = ', '.join(outcome.name for outcome in report.failures)
            self.stdout.write(self.style.ERROR(f"{len(report.failures)} gradient checks failed"))
            raise CommandError(f"Gradient check failed: {names}")
        self.stdout.write(self.style.SUCCESS(f"All {len(report.outcomes)} gradient checks passed"))
