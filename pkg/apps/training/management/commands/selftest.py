from django.core.management.base import BaseCommand, CommandError
from apps.training.verification import selftest_suite
import logging

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = 'Run the gradient checks plus the loss, metric, block, model and checkpoint invariants'

    def add_arguments(self, parser):
        parser.add_argument('--seed', type=int, default=0, help='Base seed of the checks')

    def handle(self, *args, **options):
        report = selftest_suite(seed=options['seed'])
        self.stdout.write(report.table())
        if not report.passed:
            names = ', '.join(outcome.name for outcome in report.failures)
            self.stdout.write(self.style.ERROR(f"{len(report.failures)} checks failed"))
            raise CommandError(f"Self-test failed: {names}")
        self.stdout.write(self.style.SUCCESS(f"All {len(report.outcomes)} checks passed"))
