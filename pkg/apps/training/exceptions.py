from django.core.exceptions import ValidationError


class TrainingError(ValidationError):
    """Base class for training, evaluation and checkpoint failures"""


class CheckpointError(TrainingError):
    """Unreadable checkpoint or one that does not match the model"""


class DivergenceError(TrainingError):
    """A loss or gradient became NaN or infinite"""


class MetricError(TrainingError):
    """Invalid metric input: non-binary masks, empty batches or beta <= 0"""
