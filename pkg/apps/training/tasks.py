from celery import shared_task
from django.conf import settings
from pathlib import Path
import logging

from apps.networks.config import ModelConfig

from .ablation import run_ablation as ablate
from .config import TrainConfig
from .runner import run_training as train_run

logger = logging.getLogger(__name__)


@shared_task(bind=True)
def run_training(self, data_root, model_config, train_config, out_dir=None, resume=False):
    """
    Train one model in a worker.

    Configs travel as plain dicts (JSON serializer); the result is the
    TrainResult summary plus the registry run id.
    """
    out_dir = out_dir or str(Path(settings.SEGMENTATION_RUNS_ROOT) / f"task-{self.request.id}")
    try:
        result, run_id = train_run(
            data_root,
            ModelConfig.from_dict(model_config).validate(),
            TrainConfig.from_dict(train_config).validate(),
            out_dir,
            resume=resume,
        )
    except Exception as e:
        logger.error(f"Training task {self.request.id} failed: {str(e)}")
        raise

    logger.info(
        f"Training task {self.request.id} finished: best val mDice {result.best_value:.4f} "
        f"at epoch {result.best_epoch}"
    )
    summary = result.to_dict()
    summary['run_id'] = run_id
    return summary


@shared_task(bind=True)
def run_ablation(self, data_root, model_config, train_config, out_dir=None, epochs=3, variants=None):
    """Train and score every requested variant, returning the comparison table"""
    out_dir = out_dir or str(Path(settings.SEGMENTATION_RUNS_ROOT) / f"ablation-{self.request.id}")
    try:
        result = ablate(
            data_root,
            ModelConfig.from_dict(model_config).validate(),
            TrainConfig.from_dict(train_config).validate(),
            out_dir,
            epochs=epochs,
            variants=variants,
        )
    except Exception as e:
        logger.error(f"Ablation task {self.request.id} failed: {str(e)}")
        raise

    logger.info(f"Ablation task {self.request.id} finished on the {result.split} split")
    return result.to_dict()
