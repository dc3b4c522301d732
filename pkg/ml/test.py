"""
================================================================================
TEST SYMBOL GAN
================================================================================

Purpose: Smoke script that trains the GAN on programmatically drawn toy
glyphs (circles and crosses, plus distorted crosses as shadow exemplars) and
reports how often the classifier recognizes what the generator was asked for.

Runs on CPU in a few minutes; nothing is written to disk.
================================================================================
"""

import logging

from ml.losses import LossWeights
from ml.models import ModelConfig
from ml.trainer import TrainConfig, train
from utils.dataset import stack_images
from utils.formatting import format_accuracy_table
from utils.glyphs import TOY_CLASSES, toy_samples, toy_shadow_samples, toy_vocabulary
from utils.ml_utils import generation_accuracy

# =============================================================================
# MODEL TESTING
# =============================================================================
# PURPOSE: Train on toy glyphs and check class fidelity of generated images

def test_model(steps=500, samples_per_class=200, seed=0):
    """Train a small GAN on toy glyphs and print per-class generation accuracy.

    Args:
        steps (int): Training steps.
        samples_per_class (int): Toy glyphs drawn per class.
        seed (int): Root seed of data, training and generation.

    Returns:
        pd.DataFrame: Accuracy table from generation_accuracy().

    Note:
        Learning rates are ten times the production defaults so the toy
        problem converges within a few hundred steps.
    """
    print("\n" + "=" * 60)
    print("HANDWRITTEN SYMBOL GAN - TOY SMOKE TEST")
    print("=" * 60 + "\n")

    vocab = toy_vocabulary(with_shadow=True)
    samples = toy_samples(samples_per_class, canvas=(32, 32), seed=seed)
    samples += toy_shadow_samples(samples_per_class // 4, canvas=(32, 32), seed=seed + 1)
    print(f"Drew {len(samples)} toy glyphs ({', '.join(vocab.generation_classes)} + shadow)")

    config = TrainConfig(
        lr_discriminator=1e-4,
        lr_generator=1e-3,
        lr_classifier=1e-4,
        batch_size=16,
        weights=LossWeights(),
        standard_cycle=150,
        focused_cycle=50,
        focus_classes=("cross",),
        swap_fraction=0.25,
        total_steps=steps,
        seed=seed,
        eval_every=100,
        log_every=100,
        model=ModelConfig(canvas=(32, 32), style_dim=32, base_channels=8),
    )
    bundle, log = train(config, samples, vocab)
    print("\nFinal losses: " + ", ".join(f"{c}={log[c].iloc[-1]:.4f}" for c in ("loss_d", "loss_g", "loss_c")))

    print("\n" + "=" * 60)
    print("GENERATION ACCURACY")
    print("=" * 60 + "\n")
    styles = stack_images([s for s in samples if s.class_name in TOY_CLASSES][:64])
    accuracy = generation_accuracy(bundle, styles, TOY_CLASSES, count=50, seed=seed)
    print(format_accuracy_table(accuracy))
    print("✅ Toy training finished")
    return accuracy


if __name__ == "__main__":
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    test_model()
