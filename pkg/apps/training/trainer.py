"""
Adam training loop with validation, early stopping and checkpointing.

One epoch iterates the training batcher (forward, total loss, backward,
Adam step), then scores the validation batcher. The run directory holds

    epochs.jsonl   one JSON object per finished epoch
    best.ckpt      weights of the best validation mDice so far
    last.ckpt      full state after the latest epoch, used to resume

A diverging loss aborts the run and leaves both checkpoints as they were
after the last good epoch.
"""
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from apps.tensors.exceptions import NonFiniteError
from apps.tensors.tape import GradTape
from apps.tensors.tensor import Tensor

from .checkpoints import capture, load_checkpoint, restore_model, restore_optimizer, save_checkpoint
from .config import TrainConfig
from .exceptions import DivergenceError, TrainingError
from .losses import total_loss
from .metrics import MetricsReport, evaluate_batch
from .optim import Adam

logger = logging.getLogger(__name__)

EPOCH_LOG = 'epochs.jsonl'
BEST_CHECKPOINT = 'best.ckpt'
LAST_CHECKPOINT = 'last.ckpt'


class EarlyStopping:
    """
    Tracks the monitored value (higher is better).

    A value counts as an improvement when it beats the best so far by more
    than ``min_delta``; the run should stop once ``patience`` consecutive
    epochs failed to improve.
    """

    def __init__(self, patience=5, min_delta=1e-4, best=None, stale_epochs=0):
        if patience < 1:
            raise TrainingError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.min_delta = min_delta
        self.best = best
        self.stale_epochs = stale_epochs

    def update(self, value):
        if self.best is None or value > self.best + self.min_delta:
            self.best = value
            self.stale_epochs = 0
            return True
        self.stale_epochs += 1
        return False

    @property
    def should_stop(self):
        return self.stale_epochs >= self.patience


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float
    val_dice: float
    val_iou: float
    train_dice: float = None

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)


@dataclass
class TrainResult:
    best_value: float
    best_epoch: int
    epochs_run: int
    steps: int
    stopped_early: bool
    history: list = field(default_factory=list)
    out_dir: Path = None

    @property
    def best_checkpoint(self):
        return None if self.out_dir is None else self.out_dir / BEST_CHECKPOINT

    def to_dict(self):
        return {
            'best_value': self.best_value,
            'best_epoch': self.best_epoch,
            'epochs_run': self.epochs_run,
            'steps': self.steps,
            'stopped_early': self.stopped_early,
            'out_dir': None if self.out_dir is None else str(self.out_dir),
        }


def _finite(name, value, step):
    if not np.isfinite(value):
        logger.error(f"{name} became {value} at step {step}")
        raise DivergenceError(f"{name} became {value} at step {step}")
    return value


def predict(model, images):
    """Eval-mode probabilities for a [B, 3, H, W] array"""
    was_training = model.training
    model.eval()
    try:
        return model(Tensor(images)).numpy()
    finally:
        model.train(was_training)


def evaluate(model, batcher, loss_config=None, threshold=0.5):
    """
    Mean validation loss (per sample) and per-image metrics over one pass.

    Runs in eval mode without recording a tape; the previous mode is
    restored afterwards.
    """
    was_training = model.training
    model.eval()
    loss_sum, count = 0.0, 0
    report = MetricsReport()
    try:
        for batch in batcher.epoch(0):
            probabilities = model(Tensor(batch.images))
            loss = total_loss(probabilities, batch.masks, loss_config).item()
            loss_sum += loss * len(batch)
            count += len(batch)
            report.extend(evaluate_batch(probabilities, batch.masks, threshold, names=batch.names))
    finally:
        model.train(was_training)
    if count == 0:
        raise TrainingError("Validation data is empty")
    return loss_sum / count, report


class Trainer:
    """
    Owns a model, its Adam state and the run directory.

    Args:
        model: a SegModel
        train_batcher: shuffled, optionally augmented batches
        val_batcher: fixed-order validation batches
        config: TrainConfig
        out_dir: run directory; None keeps everything in memory
        callbacks: objects with optional ``on_epoch_end(log)``,
            ``on_train_end(result)`` and ``on_failure(exc)`` hooks
    """

    def __init__(self, model, train_batcher, val_batcher, config=None, out_dir=None, callbacks=()):
        self.model = model
        self.train_batcher = train_batcher
        self.val_batcher = val_batcher
        self.config = (config or TrainConfig()).validate()
        self.loss_config = self.config.loss_config()
        self.optimizer = Adam(model.named_parameters(), self.config.adam_config())
        self.stopper = EarlyStopping(self.config.early_stop_patience, self.config.min_delta)
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.callbacks = list(callbacks)
        self.epoch = 0
        self.best_epoch = 0
        self.history = []

    @property
    def steps(self):
        return self.optimizer.t

    def _notify(self, hook, *args):
        for callback in self.callbacks:
            method = getattr(callback, hook, None)
            if method is not None:
                method(*args)

    def _path(self, name):
        return self.out_dir / name

    def _checkpoint(self):
        return capture(
            self.model,
            self.optimizer,
            train_config=self.config.to_dict(),
            epoch=self.epoch,
            step=self.optimizer.t,
            best=self.stopper.best,
            stale_epochs=self.stopper.stale_epochs,
        )

    def resume(self, path=None):
        """Restore model, optimizer, epoch counter and early-stopping state"""
        path = Path(path) if path is not None else self._path(LAST_CHECKPOINT)
        checkpoint = load_checkpoint(path)
        restore_model(checkpoint, self.model)
        restore_optimizer(checkpoint, self.optimizer)
        self.epoch = checkpoint.epoch
        self.stopper.best = checkpoint.best
        self.stopper.stale_epochs = checkpoint.stale_epochs
        if self.out_dir is not None and self._path(EPOCH_LOG).exists():
            kept = []
            for line in self._path(EPOCH_LOG).read_text().splitlines():
                record = json.loads(line)
                if record['epoch'] <= self.epoch:
                    kept.append(EpochLog(**record))
            self.history = kept
            self._path(EPOCH_LOG).write_text(''.join(log.to_json() + '\n' for log in kept))
            replay = EarlyStopping(self.config.early_stop_patience, self.config.min_delta)
            for log in kept:
                if replay.update(log.val_dice):
                    self.best_epoch = log.epoch
        logger.info(f"Resumed from {path} at epoch {self.epoch}, step {self.optimizer.t}")
        return checkpoint

    def train_step(self, batch, report=None):
        """One Adam step; ``report`` collects thresholded metrics of the same forward pass"""
        self.optimizer.zero_grad()
        try:
            with GradTape() as tape:
                probabilities = self.model(Tensor(batch.images))
                loss = total_loss(probabilities, batch.masks, self.loss_config)
                value = _finite('Training loss', loss.item(), self.optimizer.t + 1)
                tape.backward(loss)
            self.optimizer.step()
        except NonFiniteError as exc:
            logger.error(f"Non-finite values at step {self.optimizer.t + 1}: {exc.message}")
            raise DivergenceError(f"Training diverged at step {self.optimizer.t + 1}: {exc.message}") from exc
        if report is not None:
            report.extend(evaluate_batch(probabilities, batch.masks, self.config.threshold, names=batch.names))
        logger.debug(f"Step {self.optimizer.t}: loss {value:.6f}")
        return value

    def run_epoch(self):
        self.model.train()
        epoch = self.epoch + 1
        loss_sum, count = 0.0, 0
        train_report = MetricsReport()
        for batch in self.train_batcher.epoch(epoch):
            loss_sum += self.train_step(batch, train_report) * len(batch)
            count += len(batch)
        val_loss, report = evaluate(self.model, self.val_batcher, self.loss_config, self.config.threshold)
        self.epoch = epoch
        return EpochLog(
            epoch=epoch,
            train_loss=loss_sum / count,
            train_dice=train_report.mdice,
            val_loss=_finite('Validation loss', val_loss, self.optimizer.t),
            val_dice=report.mdice,
            val_iou=report.miou,
        )

    def fit(self):
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)
            if self.epoch == 0:
                self._path(EPOCH_LOG).write_text('')
        logger.info(
            f"Training {self.model.variant.value} for up to {self.config.epochs} epochs "
            f"from epoch {self.epoch}, {len(self.train_batcher)} batches per epoch"
        )
        stopped_early = False
        try:
            while self.epoch < self.config.epochs and not self.stopper.should_stop:
                log = self.run_epoch()
                improved = self.stopper.update(log.val_dice)
                self.history.append(log)
                if improved:
                    self.best_epoch = log.epoch
                if self.out_dir is not None:
                    with open(self._path(EPOCH_LOG), 'a') as handle:
                        handle.write(log.to_json() + '\n')
                    checkpoint = self._checkpoint()
                    if improved:
                        save_checkpoint(checkpoint, self._path(BEST_CHECKPOINT))
                    save_checkpoint(checkpoint, self._path(LAST_CHECKPOINT))
                logger.info(
                    f"Epoch {log.epoch}: train loss {log.train_loss:.4f}, train mDice {log.train_dice:.4f}, "
                    f"val loss {log.val_loss:.4f}, val mDice {log.val_dice:.4f}, val mIoU {log.val_iou:.4f}"
                )
                self._notify('on_epoch_end', log)
            if self.stopper.should_stop:
                stopped_early = True
                logger.warning(
                    f"Early stopping after epoch {self.epoch}: no val mDice gain for "
                    f"{self.stopper.stale_epochs} epochs (best {self.stopper.best:.4f} at epoch {self.best_epoch})"
                )
        except Exception as exc:
            self._notify('on_failure', exc)
            raise

        result = TrainResult(
            best_value=self.stopper.best,
            best_epoch=self.best_epoch,
            epochs_run=self.epoch,
            steps=self.optimizer.t,
            stopped_early=stopped_early,
            history=list(self.history),
            out_dir=self.out_dir,
        )
        self._notify('on_train_end', result)
        return result


def train(model, train_batcher, val_batcher, config=None, out_dir=None, resume=False, callbacks=()):
    """Build a Trainer, optionally resume from ``out_dir/last.ckpt``, and fit"""
    trainer = Trainer(model, train_batcher, val_batcher, config, out_dir, callbacks)
    if resume:
        if out_dir is None:
            raise TrainingError("Resuming needs a run directory")
        trainer.resume()
    return trainer.fit()
