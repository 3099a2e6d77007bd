from django.db import models
from django.core.validators import MinValueValidator


class TrainingRun(models.Model):
    STATUS_CHOICES = [
        ('running', 'Running'),
        ('completed', 'Completed'),
        ('stopped', 'Stopped early'),
        ('failed', 'Failed'),
    ]

    VARIANT_CHOICES = [
        ('base', 'PVT base'),
        ('dsenc', 'PVT + DS Enc'),
        ('dsencres', 'PVT + DS Enc + Res'),
        ('full', 'PVT + DS Enc + Res + Adapter'),
    ]

    variant = models.CharField(max_length=10, choices=VARIANT_CHOICES)
    seed = models.IntegerField(default=0)
    status = models.CharField(
        max_length=10,
        choices=STATUS_CHOICES,
        default='running'
    )
    data_root = models.CharField(max_length=500, blank=True)
    out_dir = models.CharField(max_length=500, blank=True)
    config = models.JSONField(default=dict)
    epochs_run = models.PositiveIntegerField(default=0)
    best_epoch = models.PositiveIntegerField(default=0)
    best_val_dice = models.FloatField(null=True, blank=True)
    error_message = models.TextField(blank=True)
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at']
        verbose_name = 'Training Run'
        verbose_name_plural = 'Training Runs'

    def __str__(self):
        return f"Run {self.id} - {self.variant} - seed {self.seed} - {self.status}"

    @property
    def is_finished(self):
        return self.status != 'running'


class EpochRecord(models.Model):
    run = models.ForeignKey(
        TrainingRun,
        on_delete=models.CASCADE,
        related_name='epochs'
    )
    epoch = models.PositiveIntegerField(validators=[MinValueValidator(1)])
    train_loss = models.FloatField()
    train_dice = models.FloatField(null=True, blank=True)
    val_loss = models.FloatField()
    val_dice = models.FloatField()
    val_iou = models.FloatField()
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ['run', 'epoch']
        unique_together = ['run', 'epoch']
        verbose_name = 'Epoch Record'
        verbose_name_plural = 'Epoch Records'

    def __str__(self):
        return f"Run {self.run_id} epoch {self.epoch} - val mDice {self.val_dice:.4f}"
