"""
================================================================================
MACHINE LEARNING UTILITIES
================================================================================

Purpose: Glue between trained generator bundles and the rest of the pipeline:
per-stage seed derivation, checkpoint lookup and loading, symbol bank
generation and per-class generation accuracy.

HOW IT WORKS:
1. Every stochastic stage gets its own seed, derived from the pipeline seed
   and a stage name with a stable hash (derive_seed)
2. A checkpoint path may be a file or a checkpoint directory; in a directory
   the newest gated checkpoint wins, latest.joblib is the fallback
3. generate_symbol_bank() renders `count` images per requested class, each
   conditioned on a style exemplar drawn by seed, and wraps them in a
   SymbolBank the engraver can consume; near-empty images are redrawn with
   round-derived seeds until the count is met

KEY CONCEPTS:
- Derived seed: sha256("<seed>:<stage>") reduced to 31 bits; identical across
  runs and platforms, unlike Python's salted hash()
- Generation accuracy: share of generated images the bundle's own classifier
  assigns to the requested class
================================================================================
"""

import hashlib
import logging
from pathlib import Path

import numpy as np
import pandas as pd

from ml.models import ModelBundle
from utils.engraver import SymbolBank
from utils.errors import BadShadowTargetError, EmptyBankError, EmptyDatasetError, UnreadableSourceError

logger = logging.getLogger(__name__)

CHECKPOINT_GLOB = "checkpoint_step*.joblib"
LATEST_CHECKPOINT = "latest.joblib"
SEED_MODULUS = 2 ** 31
# Generated images whose brightest pixel stays at or below this hold no symbol
MIN_PEAK_INK = 0.05
MAX_DRAW_ROUNDS = 10


def derive_seed(seed, stage):
    """Stable per-stage seed in [0, 2**31).

    Args:
        seed (int): Pipeline seed.
        stage (str): Stage name, e.g. "batches" or "generate".

    Returns:
        int: Derived seed.

    Example:
        >>> derive_seed(7, "noise") == derive_seed(7, "noise")
        True
    """
    digest = hashlib.sha256(f"{int(seed)}:{stage}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % SEED_MODULUS


# =============================================================================
# CHECKPOINTS
# =============================================================================

def resolve_checkpoint(path):
    """Return the checkpoint file a path refers to.

    Raises:
        UnreadableSourceError: If nothing loadable is found.
    """
    path = Path(path)
    if path.is_file():
        return path
    if path.is_dir():
        gated = sorted(path.glob(CHECKPOINT_GLOB))
        if gated:
            return gated[-1]
        if (path / LATEST_CHECKPOINT).is_file():
            return path / LATEST_CHECKPOINT
    raise UnreadableSourceError(f"No checkpoint found at {path}")


def load_trained_bundle(path, vocab):
    """Load a generator bundle from a checkpoint file or directory."""
    checkpoint = resolve_checkpoint(path)
    bundle = ModelBundle.load_model(checkpoint, vocab)
    logger.info(f"Loaded checkpoint {checkpoint} (step {bundle.step})")
    return bundle


# =============================================================================
# GENERATION
# =============================================================================

def _check_targets(vocab, classes):
    for name in classes:
        if not vocab.is_generation_target(name):
            vocab.get(name)
            raise BadShadowTargetError(f"'{name}' is a shadow class and cannot be generated")


def generate_images(bundle, style_images, class_name, count, seed):
    """Generate `count` images of one class, styles drawn from style_images by seed.

    Returns:
        np.ndarray: (count, H, W) ink-positive images.
    """
    style_images = np.asarray(style_images, dtype=np.float32)
    if len(style_images) == 0:
        raise EmptyDatasetError("No style exemplars to condition generation on")
    rng = np.random.default_rng(derive_seed(seed, f"styles:{class_name}"))
    picks = rng.integers(0, len(style_images), size=count)
    return bundle.generate(style_images[picks], [class_name] * count,
                           noise_seed=derive_seed(seed, f"noise:{class_name}"))


def generate_symbol_bank(bundle, style_images, classes, count, seed):
    """Render a symbol bank of generated exemplars.

    Images whose peak ink stays at or below MIN_PEAK_INK are discarded and
    redrawn with a seed derived from the round number, so every class ends
    up with exactly `count` exemplars.

    Args:
        bundle (ModelBundle): Trained bundle.
        style_images (np.ndarray): Style exemplars (N, H, W).
        classes (list): Generation classes to render.
        count (int): Images per class.
        seed (int): Generation seed.

    Returns:
        SymbolBank: Anchors and nominal heights estimated per class.

    Raises:
        BadShadowTargetError: If a requested class is a shadow class.
        EmptyBankError: If a class is still short after MAX_DRAW_ROUNDS rounds.
    """
    _check_targets(bundle.vocab, classes)
    bank = SymbolBank()
    for name in classes:
        kept, discarded = 0, 0
        for draw in range(MAX_DRAW_ROUNDS):
            if kept == count:
                break
            round_seed = seed if draw == 0 else derive_seed(seed, f"redraw:{draw}")
            for image in generate_images(bundle, style_images, name, count - kept, round_seed):
                if image.max() <= MIN_PEAK_INK:
                    discarded += 1
                    continue
                bank.add(name, image)
                kept += 1
        if kept < count:
            raise EmptyBankError(
                f"Only {kept} of {count} generated '{name}' images hold ink after {MAX_DRAW_ROUNDS} rounds")
        if discarded:
            logger.warning(f"Redrew {discarded} near-empty '{name}' images")
        logger.info(f"Generated {kept} images of '{name}'")
    return bank


def generation_accuracy(bundle, style_images, classes, count, seed):
    """Share of generated images the classifier assigns to the requested class.

    Returns:
        pd.DataFrame: Columns class_name, generated, correct, accuracy.
    """
    _check_targets(bundle.vocab, classes)
    rows = []
    for name in classes:
        images = generate_images(bundle, style_images, name, count, seed)
        predicted = np.asarray(bundle.classify(images)).argmax(axis=1)
        correct = int((predicted == bundle.vocab.index_of[name]).sum())
        rows.append({"class_name": name, "generated": count, "correct": correct, "accuracy": correct / count})
    return pd.DataFrame(rows)
