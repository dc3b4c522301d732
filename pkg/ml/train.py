"""
================================================================================
TRAIN SYMBOL GAN
================================================================================

Purpose: Script to train the style-conditioned symbol GAN on a prepared
dataset and save its checkpoints, training log and loss chart.

Usage:
    python -m ml.train config/pipeline.toml [--resume out/checkpoints/latest.joblib]
================================================================================
"""

import argparse
import logging

from ml.trainer import train
from utils import storage
from utils.analytics import loss_curve_figure, write_figure
from utils.config import load_config
from utils.dataset import load_dataset
from utils.errors import ConfigError
from utils.vocab import load_vocabulary

logger = logging.getLogger(__name__)

# =============================================================================
# MODEL TRAINING
# =============================================================================
# PURPOSE: Train and save the generator bundle

def train_and_save_model(config, resume_from=None):
    """Orchestration script to train the GAN and persist everything it produces.

    This is a TRAINING PIPELINE SCRIPT that orchestrates the complete workflow:
    1. Loads the vocabulary and the dataset written by prepare-data
    2. Calls trainer.train(), which gates and writes checkpoints itself
    3. Renders the loss curves of the full log as HTML

    Args:
        config (PipelineConfig): Loaded pipeline config.
        resume_from (Path, optional): Checkpoint to continue from. Without
            it an existing training log is replaced.

    Returns:
        ModelBundle: The bundle after the last step.

    Raises:
        ConfigError: If the prepared dataset does not exist yet.
        NonFiniteLossError: If training diverges.
    """
    print("\n" + "=" * 60)
    print("HANDWRITTEN SYMBOL GAN - MODEL TRAINING")
    print("=" * 60 + "\n")

    if not config.dataset_path.exists():
        raise ConfigError(f"No prepared dataset at {config.dataset_path}; run prepare-data first")
    vocab = load_vocabulary(config.vocabulary)
    print(f"Loading dataset from {config.dataset_path}...")
    samples, manifest = load_dataset(config.dataset_path)
    print(f"{len(samples)} samples in {len(manifest.retained_classes)} classes")

    if resume_from is None and config.log_path.exists():
        logger.info(f"Replacing previous training log {config.log_path}")
        config.log_path.unlink()

    bundle, _ = train(
        config.train,
        samples,
        vocab,
        checkpoint_dir=config.checkpoint_dir,
        log_path=config.log_path,
        resume_from=resume_from,
        config_echo=config.raw,
    )

    if config.log_path.exists():
        write_figure(loss_curve_figure(storage.read_table(config.log_path)),
                     config.reports_dir / "training_losses.html", div_id="training-losses")

    print("\n" + "=" * 60)
    print(f"✅ Training finished at step {bundle.step}, checkpoints in {config.checkpoint_dir}")
    print("=" * 60 + "\n")
    return bundle


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Train the symbol GAN from a pipeline config")
    parser.add_argument("config")
    parser.add_argument("--resume", default=None)
    args = parser.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    train_and_save_model(load_config(args.config), resume_from=args.resume)
