"""
Run registry bookkeeping.

The registry is a convenience record of what was trained; results never
depend on it. When the database is not migrated or not reachable the
recorder logs a warning once and turns itself off.
"""
import logging

from django.db import DatabaseError

from .models import EpochRecord, TrainingRun

logger = logging.getLogger(__name__)


class RunRecorder:
    """Trainer callback writing TrainingRun / EpochRecord rows"""

    def __init__(self, model_config, train_config, data_root='', out_dir=''):
        self.run = None
        self.enabled = True
        self._guarded(
            'create run',
            self._create,
            model_config, train_config, data_root, out_dir,
        )

    def _guarded(self, action, func, *args):
        if not self.enabled:
            return None
        try:
            return func(*args)
        except DatabaseError as exc:
            self.enabled = False
            logger.warning(f"Run registry unavailable ({action}): {exc}; continuing without it")
            return None

    def _create(self, model_config, train_config, data_root, out_dir):
        self.run = TrainingRun.objects.create(
            variant=model_config.variant,
            seed=train_config.seed,
            data_root=str(data_root),
            out_dir=str(out_dir or ''),
            config={'model': model_config.to_dict(), 'train': train_config.to_dict()},
        )
        logger.info(f"Registered training run {self.run.id}")

    @property
    def run_id(self):
        return None if self.run is None else self.run.id

    def on_epoch_end(self, log):
        def write():
            EpochRecord.objects.update_or_create(
                run=self.run,
                epoch=log.epoch,
                defaults={
                    'train_loss': log.train_loss,
                    'train_dice': log.train_dice,
                    'val_loss': log.val_loss,
                    'val_dice': log.val_dice,
                    'val_iou': log.val_iou,
                },
            )
            self.run.epochs_run = log.epoch
            self.run.save(update_fields=['epochs_run', 'updated_at'])

        if self.run is not None:
            self._guarded('record epoch', write)

    def on_train_end(self, result):
        def write():
            self.run.status = 'stopped' if result.stopped_early else 'completed'
            self.run.epochs_run = result.epochs_run
            self.run.best_epoch = result.best_epoch
            self.run.best_val_dice = result.best_value
            self.run.save()

        if self.run is not None:
            self._guarded('finish run', write)

    def on_failure(self, exc):
        def write():
            self.run.status = 'failed'
            self.run.error_message = str(exc)
            self.run.save(update_fields=['status', 'error_message', 'updated_at'])

        if self.run is not None:
            self._guarded('mark failure', write)
