"""
================================================================================
ADVERSARIAL TRAINER
================================================================================

Purpose: The training loop of the symbol GAN and its scheduling tricks.

HOW A STEP WORKS:
1. schedule_mode() picks a standard batch (all classes) or a focused batch
   (only the hard focus classes)
2. swap_labels() exchanges a fraction of the content labels pairwise, so the
   generator must draw class B in the style of an A sample
3. The discriminator is updated on real vs generated images
4. The classifier is updated on real images plus shadow ("bad") exemplars
5. The generator is updated on alpha*adversarial + beta*classification +
   gamma_div*diversity
6. Every eval_every steps a fixed held-out batch is regenerated and scored;
   a checkpoint is written only when the combined score improves

KEY CONCEPTS:
- Shadow classes exist only on the classifier side: real distorted
  exemplars teach it what a bad gclef looks like, and generated images are
  pushed away from that class through the classification loss.
- Determinism: every random draw comes from generators seeded from
  TrainConfig.seed, and the torch thread count is pinned to 1.
================================================================================
"""

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from ml.losses import (
    CLASSIFICATION_MODES,
    LossWeights,
    adversarial_fake_term,
    adversarial_losses,
    classification_loss,
    diversity_penalty,
    total_loss,
)
from ml.models import ModelBundle, ModelConfig
from utils import storage
from utils.dataset import BatchStream, stack_images
from utils.errors import (
    BatchMismatchError,
    BothCyclesZeroError,
    EmptyDatasetError,
    EmptyFocusSetError,
    NonFiniteLossError,
    ShapeMismatchError,
)
from utils.ml_utils import derive_seed

logger = logging.getLogger(__name__)

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LOG_COLUMNS = ["step", "mode", "loss_d", "loss_g", "loss_c", "loss_c_real",
               "loss_div", "loss_total", "score_combined", "checkpoint"]


# =============================================================================
# CONFIGURATION
# =============================================================================

class TrainingMode(str, Enum):
    """Which batch stream a step draws from."""

    STANDARD = "standard"
    FOCUSED = "focused"


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    Attributes:
        lr_discriminator, lr_generator, lr_classifier (float): Adam rates.
        batch_size (int): Samples per step.
        weights (LossWeights): alpha, beta, gamma_div.
        standard_cycle, focused_cycle (int): Steps per schedule period.
        focus_classes (tuple): Classes of focused batches.
        swap_fraction (float): Fraction of content labels swapped per batch.
        total_steps (int): Absolute step count to train to.
        seed (int): Root of every random draw of the run.
        checkpoint_weights (tuple): (w_euclid, w_cos, w_ssim).
        eval_every (int): Steps between checkpoint evaluations.
        eval_batch_size (int): Size of the held-out style batch.
        shadow_batch_size (int): Shadow exemplars per classifier step.
        classification_mode (str): "kl" or "cross_entropy".
        non_saturating (bool): Train the generator on -log D(G(z)) instead of
            log(1 - D(G(z))).
        deterministic (bool): Pin torch to one thread.
        log_every (int): Steps between log flushes and progress lines.
        model (ModelConfig): Network sizes.
    """

    lr_discriminator: float = 1e-5
    lr_generator: float = 1e-4
    lr_classifier: float = 1e-5
    batch_size: int = 16
    weights: LossWeights = field(default_factory=LossWeights)
    standard_cycle: int = 150
    focused_cycle: int = 50
    focus_classes: tuple = ("accidentalsharp", "gclef")
    swap_fraction: float = 0.25
    total_steps: int = 10000
    seed: int = 0
    checkpoint_weights: tuple = (1.0, 1.0, 1.0)
    eval_every: int = 100
    eval_batch_size: int = 16
    shadow_batch_size: int = 4
    classification_mode: str = "kl"
    non_saturating: bool = True
    deterministic: bool = True
    log_every: int = 50
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        self.focus_classes = tuple(self.focus_classes)
        self.checkpoint_weights = tuple(float(w) for w in self.checkpoint_weights)
        if min(self.lr_discriminator, self.lr_generator, self.lr_classifier) <= 0:
            raise ValueError("Learning rates must be > 0")
        if self.standard_cycle < 0 or self.focused_cycle < 0:
            raise ValueError("Cycle lengths must be >= 0")
        if self.standard_cycle == 0 and self.focused_cycle == 0:
            raise BothCyclesZeroError("standard_cycle and focused_cycle cannot both be 0")
        if not 0.0 <= self.swap_fraction <= 1.0:
            raise ValueError(f"swap_fraction must lie in [0, 1], got {self.swap_fraction}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if len(self.checkpoint_weights) != 3 or min(self.checkpoint_weights) < 0:
            raise ValueError("checkpoint_weights must be three values >= 0")
        if self.classification_mode not in CLASSIFICATION_MODES:
            raise ValueError(f"classification_mode must be one of {CLASSIFICATION_MODES}")
        if min(self.eval_every, self.eval_batch_size, self.log_every) < 1 or self.shadow_batch_size < 0:
            raise ValueError("eval_every, eval_batch_size and log_every must be >= 1")


# =============================================================================
# SCHEDULING AND LABEL SWAPPING
# =============================================================================

def schedule_mode(step_index, standard_cycle, focused_cycle):
    """Standard iff step_index mod (standard_cycle + focused_cycle) < standard_cycle.

    Raises:
        BothCyclesZeroError: If both cycles are 0.
    """
    if standard_cycle < 0 or focused_cycle < 0:
        raise ValueError("Cycle lengths must be >= 0")
    period = standard_cycle + focused_cycle
    if period == 0:
        raise BothCyclesZeroError("standard_cycle and focused_cycle cannot both be 0")
    return TrainingMode.STANDARD if step_index % period < standard_cycle else TrainingMode.FOCUSED


def swap_labels(labels, fraction, rng):
    """Exchange labels pairwise at floor(fraction * n) random positions.

    An odd position count is rounded down to the next even number. The
    multiset of labels never changes.

    Args:
        labels (list): Class names, one per sample.
        fraction (float): Share of positions to swap, in [0, 1].
        rng (np.random.Generator): Source of the positions.

    Returns:
        list: New label list.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    swapped = list(labels)
    k = int(math.floor(fraction * len(swapped)))
    k -= k % 2
    if k == 0:
        return swapped
    positions = rng.choice(len(swapped), size=k, replace=False)
    for a, b in zip(positions[0::2], positions[1::2]):
        swapped[a], swapped[b] = swapped[b], swapped[a]
    return swapped


# =============================================================================
# SSIM
# =============================================================================

def _gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    g = torch.exp(-(coords ** 2) / (2 * sigma ** 2))
    g = g / g.sum()
    return torch.outer(g, g).view(1, 1, size, size)


def _as_image_batch(images):
    x = images if isinstance(images, torch.Tensor) else torch.as_tensor(np.asarray(images))
    x = x.detach().to(torch.float64)
    if x.dim() == 2:
        x = x.view(1, 1, *x.shape)
    elif x.dim() == 3:
        x = x.unsqueeze(1)
    return x


def batch_ssim(a, b):
    """Per-image SSIM of two equally shaped batches, as a float64 tensor (n,)."""
    x, y = _as_image_batch(a), _as_image_batch(b)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"SSIM needs equal shapes, got {tuple(x.shape)} and {tuple(y.shape)}")
    if min(x.shape[-2:]) < SSIM_WINDOW:
        raise ShapeMismatchError(f"SSIM needs images of at least {SSIM_WINDOW} x {SSIM_WINDOW}")
    window = _gaussian_window()
    c1 = (SSIM_K1 * 1.0) ** 2
    c2 = (SSIM_K2 * 1.0) ** 2
    mu_x = F.conv2d(x, window)
    mu_y = F.conv2d(y, window)
    sigma_x = F.conv2d(x * x, window) - mu_x ** 2
    sigma_y = F.conv2d(y * y, window) - mu_y ** 2
    sigma_xy = F.conv2d(x * y, window) - mu_x * mu_y
    ssim_map = ((2 * mu_x * mu_y + c1) * (2 * sigma_xy + c2)) / \
               ((mu_x ** 2 + mu_y ** 2 + c1) * (sigma_x + sigma_y + c2))
    return ssim_map.mean(dim=(1, 2, 3))


def ssim(a, b):
    """Mean SSIM with an 11 x 11 Gaussian window (sigma 1.5), dynamic range 1.

    Window positions cover the valid region only.

    Raises:
        ShapeMismatchError: If the shapes differ or are smaller than the window.
    """
    return float(batch_ssim(a, b).mean())


# =============================================================================
# CHECKPOINT SCORING
# =============================================================================

@dataclass(frozen=True)
class CheckpointScore:
    """Raw and combined similarity of a generated batch to its style inputs."""

    euclid: float
    cosine: float
    ssim: float
    normalized_euclid: float
    combined: float


def checkpoint_score(input_batch, generated_batch, feature_encoder, weights=(1.0, 1.0, 1.0),
                     euclid_bounds=None):
    """Compare generated images with their style inputs.

    Args:
        input_batch: (n, H, W) style images.
        generated_batch: (n, H, W) images generated from them.
        feature_encoder (callable): Maps an (n, H, W) batch to (n, d) features.
        weights (tuple): (w_euclid, w_cos, w_ssim).
        euclid_bounds (tuple, optional): (min, max) Euclidean distance seen
            so far in the run; the normalized term is 0 when absent or
            degenerate.

    Returns:
        CheckpointScore: combined = w_cos*cosine + w_ssim*ssim - w_euclid*normalized_euclid.

    Raises:
        BatchMismatchError: If the batch sizes differ.
    """
    inputs = np.asarray(input_batch, dtype=np.float64)
    generated = np.asarray(generated_batch, dtype=np.float64)
    if len(inputs) != len(generated):
        raise BatchMismatchError(f"{len(inputs)} inputs but {len(generated)} generated images")
    f_in = np.asarray(feature_encoder(inputs.astype(np.float32)), dtype=np.float64)
    f_gen = np.asarray(feature_encoder(generated.astype(np.float32)), dtype=np.float64)

    euclid = float(np.linalg.norm(f_in - f_gen, axis=1).mean())
    norms = np.linalg.norm(f_in, axis=1) * np.linalg.norm(f_gen, axis=1)
    cosines = np.where(norms > 0, (f_in * f_gen).sum(axis=1) / np.maximum(norms, 1e-300), 0.0)
    cosine = float(np.clip(cosines, -1.0, 1.0).mean())
    structural = ssim(inputs, generated)

    normalized = 0.0
    if euclid_bounds is not None:
        low, high = euclid_bounds
        if high > low:
            normalized = float(np.clip((euclid - low) / (high - low), 0.0, 1.0))
    w_euclid, w_cos, w_ssim = weights
    combined = w_cos * cosine + w_ssim * structural - w_euclid * normalized
    return CheckpointScore(euclid, cosine, structural, normalized, combined)


class CheckpointGate:
    """Tracks the run's Euclidean range and the best combined score."""

    def __init__(self, weights=(1.0, 1.0, 1.0)):
        self.weights = tuple(weights)
        self.euclid_min = math.inf
        self.euclid_max = -math.inf
        self.best = -math.inf

    def evaluate(self, input_batch, generated_batch, feature_encoder):
        """Score a batch, widening the Euclidean range with it first."""
        raw = checkpoint_score(input_batch, generated_batch, feature_encoder, self.weights)
        self.euclid_min = min(self.euclid_min, raw.euclid)
        self.euclid_max = max(self.euclid_max, raw.euclid)
        return checkpoint_score(input_batch, generated_batch, feature_encoder, self.weights,
                                euclid_bounds=(self.euclid_min, self.euclid_max))

    def improved(self, score):
        """True (and remember the score) when it strictly beats the best so far."""
        if score.combined > self.best:
            self.best = score.combined
            return True
        return False

    def state_dict(self):
        """Range and best score, for resuming a run."""
        return {"euclid_min": self.euclid_min, "euclid_max": self.euclid_max, "best": self.best}

    def load_state_dict(self, state):
        """Restore what state_dict() returned."""
        self.euclid_min = state["euclid_min"]
        self.euclid_max = state["euclid_max"]
        self.best = state["best"]


# =============================================================================
# TRAINING LOOP
# =============================================================================

def _check_finite(step, **losses):
    for name, value in losses.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(f"{name} became {value} at step {step}")


def _check_scores(step, *scores):
    for s in scores:
        if not torch.isfinite(s).all():
            raise NonFiniteLossError(f"Discriminator scores became non-finite at step {step}")


def _split_samples(samples, vocab, config):
    generation = [s for s in samples if vocab.is_generation_target(s.class_name)]
    shadows = [s for s in samples if s.class_name in vocab and vocab.get(s.class_name).is_bad_shadow]
    if not generation:
        raise EmptyDatasetError("No generation-class samples to train on")
    order = np.random.default_rng(derive_seed(config.seed, "eval-batch")).permutation(len(generation))
    k = min(config.eval_batch_size, len(generation))
    eval_samples = [generation[i] for i in order[:k]]
    held_out = set(int(i) for i in order[:k])
    pool = [s for i, s in enumerate(generation) if i not in held_out]
    if not pool:
        pool = generation
    return pool, shadows, eval_samples


def train(config, samples, vocab, checkpoint_dir=None, log_path=None,
          resume_from=None, config_echo=None):
    """Run adversarial training to config.total_steps.

    Args:
        config (TrainConfig): Hyperparameters.
        samples (list): Balanced SymbolSamples; shadow-class samples feed
            the classifier only.
        vocab (ClassVocabulary): Vocabulary with shadow classes registered.
        checkpoint_dir (Path, optional): Where improving checkpoints and
            latest.joblib go. Nothing is written when None.
        log_path (Path, optional): Append-only CSV training log.
        resume_from (Path, optional): Bundle to continue from; its step
            counter, optimizer state and RNG state are restored. Learning
            rates come from `config`; a change is logged as a warning.
        config_echo (dict, optional): Raw pipeline config stored in every
            checkpoint.

    Returns:
        tuple: (ModelBundle, DataFrame of the log rows written by this call)

    Raises:
        NonFiniteLossError: If any loss becomes NaN or infinite.
        EmptyFocusSetError: If focused steps are scheduled but no sample
            belongs to a focus class.
    """
    if config.deterministic:
        torch.set_num_threads(1)
    pool, shadows, eval_samples = _split_samples(samples, vocab, config)
    stream = BatchStream(pool, config.batch_size, derive_seed(config.seed, "batches"), config.focus_classes)
    shadow_stream = (BatchStream(shadows, config.shadow_batch_size, derive_seed(config.seed, "shadow"))
                     if shadows and config.shadow_batch_size > 0 else None)
    if config.focused_cycle > 0 and not stream.has_focus():
        raise EmptyFocusSetError(f"No training samples for focus classes {list(config.focus_classes)}")

    gate = CheckpointGate(config.checkpoint_weights)
    label_rng = np.random.default_rng(derive_seed(config.seed, "swap"))
    noise_gen = torch.Generator().manual_seed(derive_seed(config.seed, "noise"))
    learning_rates = (config.lr_discriminator, config.lr_generator, config.lr_classifier)

    if resume_from is not None:
        bundle = ModelBundle.load_model(resume_from, vocab)
        bundle.apply_learning_rates(*learning_rates)
        state = bundle.rng_state or {}
        if "swap" in state:
            label_rng.bit_generator.state = state["swap"]
            noise_gen.set_state(state["noise"])
            stream.load_state_dict(state["stream"])
            if shadow_stream is not None and state.get("shadow_stream") is not None:
                shadow_stream.load_state_dict(state["shadow_stream"])
            gate.load_state_dict(state["gate"])
        logger.info(f"Resuming from {resume_from} at step {bundle.step}")
    else:
        bundle = ModelBundle(vocab, config.model, seed=derive_seed(config.seed, "init"),
                             learning_rates=learning_rates)
    if config_echo is not None:
        bundle.config_echo = config_echo

    checkpoint_dir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    eval_images = stack_images(eval_samples)
    eval_labels = [s.class_name for s in eval_samples]
    eval_seed = derive_seed(config.seed, "eval-noise")
    sigma = bundle.config.noise_std

    def remember_rng():
        bundle.rng_state = {
            "swap": label_rng.bit_generator.state,
            "noise": noise_gen.get_state(),
            "stream": stream.state_dict(),
            "shadow_stream": shadow_stream.state_dict() if shadow_stream is not None else None,
            "gate": gate.state_dict(),
        }

    rows, pending = [], []
    start = bundle.step
    if start >= config.total_steps:
        logger.info(f"Bundle already at step {start}, nothing to train")

    try:
        for step in range(start, config.total_steps):
            mode = schedule_mode(step, config.standard_cycle, config.focused_cycle)
            batch = stream.next_batch(mode.value)
            real = bundle.to_batch(stack_images(batch))
            true_labels = [s.class_name for s in batch]
            content_labels = swap_labels(true_labels, config.swap_fraction, label_rng)
            content = bundle.content_vectors(content_labels)
            bundle.train_mode()

            # discriminator
            style = bundle.style_encoder(real)
            noisy_style = style + torch.randn(style.shape, generator=noise_gen) * sigma
            fake = bundle.decoder(noisy_style, content)
            d_real = torch.sigmoid(bundle.discriminator(real))
            d_fake = torch.sigmoid(bundle.discriminator(fake.detach()))
            _check_scores(step, d_real, d_fake)
            loss_d, _ = adversarial_losses(d_real, d_fake)
            _check_finite(step, loss_d=loss_d.item())
            bundle.opt_discriminator.zero_grad()
            loss_d.backward()
            bundle.opt_discriminator.step()

            # classifier on real data and shadow exemplars
            clf_batch, clf_labels = real, list(true_labels)
            if shadow_stream is not None:
                shadow_batch = shadow_stream.next_batch()
                clf_batch = torch.cat([real, bundle.to_batch(stack_images(shadow_batch))])
                clf_labels += [s.class_name for s in shadow_batch]
            clf_targets = torch.as_tensor(np.stack([vocab.full_one_hot(n) for n in clf_labels]))
            predicted_real = F.softmax(bundle.classifier(clf_batch), dim=1)
            loss_c_real = classification_loss(predicted_real, clf_targets, config.classification_mode, validate=False)
            _check_finite(step, loss_c_real=loss_c_real.item())
            bundle.opt_classifier.zero_grad()
            loss_c_real.backward()
            bundle.opt_classifier.step()

            # generator
            bundle.discriminator.requires_grad_(False)
            bundle.classifier.requires_grad_(False)
            bundle.classifier.eval()
            d_fake = torch.sigmoid(bundle.discriminator(fake))
            _check_scores(step, d_fake)
            if config.non_saturating:
                _, adv_term = adversarial_losses(d_real.detach(), d_fake)
            else:
                adv_term = adversarial_fake_term(d_fake)
            gen_targets = torch.as_tensor(np.stack([vocab.full_one_hot(n) for n in content_labels]))
            predicted_fake = F.softmax(bundle.classifier(fake), dim=1)
            loss_c = classification_loss(predicted_fake, gen_targets, config.classification_mode, validate=False)
            loss_div = diversity_penalty(fake, noisy_style.detach(), content_labels)
            loss_total = total_loss(config.weights, adv_term, loss_c, loss_div)
            _check_finite(step, loss_g=adv_term.item(), loss_c=loss_c.item(),
                          loss_div=loss_div.item(), loss_total=loss_total.item())
            bundle.opt_generator.zero_grad()
            loss_total.backward()
            bundle.opt_generator.step()
            bundle.discriminator.requires_grad_(True)
            bundle.classifier.requires_grad_(True)
            bundle.step = step + 1

            row = {
                "step": step,
                "mode": mode.value,
                "loss_d": loss_d.item(),
                "loss_g": adv_term.item(),
                "loss_c": loss_c.item(),
                "loss_c_real": loss_c_real.item(),
                "loss_div": loss_div.item(),
                "loss_total": loss_total.item(),
                "score_combined": float("nan"),
                "checkpoint": "",
            }

            if bundle.step % config.eval_every == 0 or bundle.step == config.total_steps:
                generated = bundle.generate(eval_images, eval_labels, noise_seed=eval_seed)
                score = gate.evaluate(eval_images, generated, bundle.encode_style)
                row["score_combined"] = score.combined
                if gate.improved(score) and checkpoint_dir is not None:
                    name = f"checkpoint_step{bundle.step:06d}.joblib"
                    remember_rng()
                    bundle.save_model(checkpoint_dir / name)
                    row["checkpoint"] = name
                    logger.info(f"Step {bundle.step}: combined score {score.combined:.4f} improved, saved {name}")

            rows.append(row)
            pending.append(row)
            if log_path is not None and (len(pending) >= config.log_every or bundle.step == config.total_steps):
                storage.append_table_rows(log_path, pending)
                pending = []
            if bundle.step % config.log_every == 0:
                logger.info(f"Step {bundle.step}/{config.total_steps} [{mode.value}] "
                            f"loss_d={row['loss_d']:.4f} loss_g={row['loss_g']:.4f} "
                            f"loss_c={row['loss_c']:.4f} loss_div={row['loss_div']:.4f}")
    finally:
        # rows of the steps already run reach the log even when a loss turns non-finite
        if log_path is not None and pending:
            storage.append_table_rows(log_path, pending)

    remember_rng()
    bundle.eval_mode()
    if checkpoint_dir is not None:
        bundle.save_model(checkpoint_dir / "latest.joblib")
    return bundle, pd.DataFrame(rows, columns=LOG_COLUMNS)
