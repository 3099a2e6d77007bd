"""
Ablation over the four model variants.

Every variant is trained on the same data with the same seed and budget,
then scored on the held-out test split (the validation split when the
test split is empty). The "full >= base" ordering is only reported; a
crash or divergence in any variant fails the whole ablation.
"""
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

from apps.datasets.index import build_index
from apps.networks.config import ModelVariant

from .runner import evaluate_checkpoint, run_training

logger = logging.getLogger(__name__)

COLUMNS = ('miou', 'mdice', 'recall', 'precision', 'f2')


@dataclass
class AblationResult:
    rows: dict = field(default_factory=dict)
    split: str = 'test'
    ordering_holds: bool = True

    def to_dict(self):
        return {'split': self.split, 'ordering_holds': self.ordering_holds, 'variants': self.rows}

    def table(self):
        lines = [f"{'variant':<10}" + ''.join(f"{column:>11}" for column in COLUMNS)]
        for variant, row in self.rows.items():
            lines.append(f"{variant:<10}" + ''.join(f"{row[column]:>11.4f}" for column in COLUMNS))
        return '\n'.join(lines)


def run_ablation(data_root, model_config, train_config, out_dir, epochs=3, variants=None, record=False):
    out_dir = Path(out_dir)
    train_config = replace(train_config, epochs=epochs)
    variants = [ModelVariant.parse(v).value for v in (variants or [v.value for v in ModelVariant])]
    index = build_index(data_root, seed=train_config.seed)
    result = AblationResult(split='test' if index.split('test') else 'val')
    if result.split == 'val':
        logger.warning("Test split is empty, scoring the ablation on the validation split")

    for variant in variants:
        variant_config = replace(model_config, variant=variant)
        run_dir = out_dir / variant
        logger.info(f"Ablation: training {variant} for {epochs} epochs")
        run_training(data_root, variant_config, train_config, run_dir, record=record)
        report = evaluate_checkpoint(data_root, run_dir / 'best.ckpt', split=result.split,
                                     threshold=train_config.threshold)
        summary = report.to_dict()
        result.rows[variant] = {column: summary[column] for column in COLUMNS}

    if 'full' in result.rows and 'base' in result.rows:
        result.ordering_holds = result.rows['full']['mdice'] >= result.rows['base']['mdice']
        if not result.ordering_holds:
            logger.warning(
                f"Full variant mDice {result.rows['full']['mdice']:.4f} is below base "
                f"{result.rows['base']['mdice']:.4f} on this seed"
            )

    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / 'ablation.json').write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + '\n')
    return result
