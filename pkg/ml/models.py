"""
================================================================================
STYLE-CONDITIONED SYMBOL GAN
================================================================================

Purpose: The three networks of the symbol generator and the bundle that owns
their parameters and optimizer state.

HOW IT WORKS:
- StyleEncoder turns one handwritten symbol image into a style vector s.
- Decoder turns concat(s + noise, one_hot(class)) into a canvas-sized image
  in [0,1] (sigmoid output, ink-positive like the dataset).
- Discriminator scores how real an image looks, in (0,1).
- SymbolClassifier predicts a distribution over the full classifier
  vocabulary, shadow ("bad") classes included.

ModelBundle holds all four modules, their Adam optimizers, the step counter
and the RNG state, and persists them with save_model() / load_model() as one
joblib file.
================================================================================
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from utils import storage
from utils.errors import ShapeMismatchError, VocabularyMismatchError

logger = logging.getLogger(__name__)

SCORE_EPS = 1e-7
ADAM_BETAS = (0.5, 0.999)


# =============================================================================
# CONFIGURATION
# =============================================================================

@dataclass
class ModelConfig:
    """Network sizes.

    Attributes:
        canvas (tuple): Image (height, width); both must be multiples of 16.
        style_dim (int): Dimension d_s of the style vector.
        base_channels (int): Width of the first conv layer of every network.
        noise_std (float): Std of the Gaussian noise added to the style vector.
    """

    canvas: tuple = (64, 64)
    style_dim: int = 128
    base_channels: int = 32
    noise_std: float = 0.1

    def __post_init__(self):
        self.canvas = tuple(int(v) for v in self.canvas)
        if len(self.canvas) != 2 or any(v < 16 or v % 16 for v in self.canvas):
            raise ValueError(f"canvas must be two multiples of 16, got {self.canvas}")
        if self.style_dim < 1 or self.base_channels < 1:
            raise ValueError("style_dim and base_channels must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")


# =============================================================================
# NETWORKS
# =============================================================================

class StyleEncoder(nn.Module):
    """Four stride-2 conv blocks, global average pooling, linear to d_s."""

    def __init__(self, config):
        super().__init__()
        c = config.base_channels
        widths = [1, c, 2 * c, 4 * c, 4 * c]
        layers = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [nn.Conv2d(w_in, w_out, kernel_size=4, stride=2, padding=1),
                       nn.LeakyReLU(0.2, inplace=True)]
        self.features = nn.Sequential(*layers)
        self.project = nn.Linear(widths[-1], config.style_dim)

    def forward(self, images):
        x = self.features(images)
        x = F.adaptive_avg_pool2d(x, 1).flatten(1)
        return self.project(x)


class Decoder(nn.Module):
    """Projects (noised style, one-hot content) to a tensor and upsamples 16x."""

    def __init__(self, config, num_generation):
        super().__init__()
        c = config.base_channels
        self.seed_channels = 4 * c
        self.seed_shape = (config.canvas[0] // 16, config.canvas[1] // 16)
        self.project = nn.Sequential(
            nn.Linear(config.style_dim + num_generation,
                      self.seed_channels * self.seed_shape[0] * self.seed_shape[1]),
            nn.ReLU(inplace=True),
        )
        widths = [4 * c, 4 * c, 2 * c, c, c]
        layers = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [nn.ConvTranspose2d(w_in, w_out, kernel_size=4, stride=2, padding=1, bias=False),
                       nn.BatchNorm2d(w_out),
                       nn.ReLU(inplace=True)]
        layers += [nn.Conv2d(c, 1, kernel_size=3, padding=1), nn.Sigmoid()]
        self.upsample = nn.Sequential(*layers)

    def forward(self, style, content):
        x = self.project(torch.cat([style, content], dim=1))
        x = x.view(x.size(0), self.seed_channels, *self.seed_shape)
        return self.upsample(x)


class ResidualBlock(nn.Module):
    """Pre-activation residual block with LeakyReLU and optional 2x average pooling."""

    def __init__(self, w_in, w_out, downsample):
        super().__init__()
        self.conv1 = nn.Conv2d(w_in, w_out, kernel_size=3, padding=1)
        self.conv2 = nn.Conv2d(w_out, w_out, kernel_size=3, padding=1)
        self.shortcut = nn.Conv2d(w_in, w_out, kernel_size=1) if w_in != w_out else nn.Identity()
        self.downsample = downsample

    def forward(self, x):
        h = self.conv1(F.leaky_relu(x, 0.2))
        h = self.conv2(F.leaky_relu(h, 0.2))
        skip = self.shortcut(x)
        if self.downsample:
            h = F.avg_pool2d(h, 2)
            skip = F.avg_pool2d(skip, 2)
        return h + skip


class Discriminator(nn.Module):
    """Initial conv, six residual blocks, linear score head.

    Blocks downsample while the feature map is larger than 1 pixel, so a
    32 x 32 canvas gets five pooling blocks and one plain one.
    """

    NUM_BLOCKS = 6

    def __init__(self, config):
        super().__init__()
        c = config.base_channels
        n_down = min(self.NUM_BLOCKS, int(math.log2(min(config.canvas))))
        self.stem = nn.Conv2d(1, c, kernel_size=3, padding=1)
        blocks, width = [], c
        for i in range(self.NUM_BLOCKS):
            w_out = min(8 * c, c * 2 ** ((i + 1) // 2))
            blocks.append(ResidualBlock(width, w_out, downsample=i < n_down))
            width = w_out
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(width, 1)

    def forward(self, images):
        x = self.blocks(self.stem(images))
        x = F.leaky_relu(x, 0.2).mean(dim=(2, 3))
        return self.head(x).squeeze(1)


class SymbolClassifier(nn.Module):
    """Three conv + batch norm + ReLU + max-pool blocks, flatten, linear."""

    def __init__(self, config, num_classes):
        super().__init__()
        c = config.base_channels
        widths = [1, c, 2 * c, 4 * c]
        layers = []
        for w_in, w_out in zip(widths[:-1], widths[1:]):
            layers += [nn.Conv2d(w_in, w_out, kernel_size=3, padding=1),
                       nn.BatchNorm2d(w_out),
                       nn.ReLU(inplace=True),
                       nn.MaxPool2d(2)]
        self.features = nn.Sequential(*layers)
        flat = widths[-1] * (config.canvas[0] // 8) * (config.canvas[1] // 8)
        self.head = nn.Linear(flat, num_classes)

    def forward(self, images):
        return self.head(self.features(images).flatten(1))


# =============================================================================
# MODEL BUNDLE
# =============================================================================
# PURPOSE: Own parameters, optimizers and counters; expose the forward ops

class ModelBundle:
    """All networks of one run plus their optimizer state.

    Args:
        vocab (ClassVocabulary): Vocabulary with any shadow classes registered.
        config (ModelConfig, optional): Network sizes.
        seed (int): Seed for parameter initialization.
        learning_rates (tuple): (discriminator, generator, classifier).

    Note:
        Forward ops (encode_style, generate, discriminate, classify) run in
        inference mode without gradients. The trainer works on the modules
        directly.
    """

    def __init__(self, vocab, config=None, seed=0,
                 learning_rates=(1e-5, 1e-4, 1e-5)):
        self.vocab = vocab
        self.config = config or ModelConfig()
        self.seed = int(seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.seed)
            self.style_encoder = StyleEncoder(self.config)
            self.decoder = Decoder(self.config, vocab.num_generation)
            self.discriminator = Discriminator(self.config)
            self.classifier = SymbolClassifier(self.config, vocab.num_classes)
        self.set_learning_rates(*learning_rates)
        self.step = 0
        self.rng_state = None
        self.config_echo = {}

    # -------------------------------------------------------------------------
    # Housekeeping
    # -------------------------------------------------------------------------

    @property
    def modules(self):
        """Name -> module mapping, in persistence order."""
        return {
            "style_encoder": self.style_encoder,
            "decoder": self.decoder,
            "discriminator": self.discriminator,
            "classifier": self.classifier,
        }

    def generator_parameters(self):
        """Style encoder and decoder parameters, trained by one optimizer."""
        return list(self.style_encoder.parameters()) + list(self.decoder.parameters())

    def set_learning_rates(self, lr_discriminator, lr_generator, lr_classifier):
        """(Re)build the three Adam optimizers with fresh state."""
        self.learning_rates = (float(lr_discriminator), float(lr_generator), float(lr_classifier))
        self.opt_discriminator = torch.optim.Adam(self.discriminator.parameters(), lr=lr_discriminator, betas=ADAM_BETAS)
        self.opt_generator = torch.optim.Adam(self.generator_parameters(), lr=lr_generator, betas=ADAM_BETAS)
        self.opt_classifier = torch.optim.Adam(self.classifier.parameters(), lr=lr_classifier, betas=ADAM_BETAS)

    def apply_learning_rates(self, lr_discriminator, lr_generator, lr_classifier):
        """Change the optimizer rates in place, keeping their Adam moments.

        Args:
            lr_discriminator (float): New discriminator rate.
            lr_generator (float): New style encoder and decoder rate.
            lr_classifier (float): New classifier rate.

        Returns:
            bool: True when any rate differed from the stored one.
        """
        wanted = (float(lr_discriminator), float(lr_generator), float(lr_classifier))
        if wanted == self.learning_rates:
            return False
        logger.warning(f"Learning rates changed from {self.learning_rates} to {wanted}; "
                       f"optimizer moments are kept")
        optimizers = (self.opt_discriminator, self.opt_generator, self.opt_classifier)
        for optimizer, lr in zip(optimizers, wanted):
            for group in optimizer.param_groups:
                group["lr"] = lr
        self.learning_rates = wanted
        return True

    def train_mode(self):
        """Put every network in training mode (batch norm uses batch statistics)."""
        for module in self.modules.values():
            module.train()

    def eval_mode(self):
        """Put every network in inference mode."""
        for module in self.modules.values():
            module.eval()

    def to_batch(self, images):
        """Coerce (H,W), (N,H,W) or (N,1,H,W) input into an (N,1,H,W) float tensor.

        Raises:
            ShapeMismatchError: If the spatial size is not the canvas.
        """
        x = images if isinstance(images, torch.Tensor) else torch.as_tensor(np.asarray(images, dtype=np.float32))
        x = x.float()
        if x.dim() == 2:
            x = x.unsqueeze(0).unsqueeze(0)
        elif x.dim() == 3:
            x = x.unsqueeze(1)
        if x.dim() != 4 or x.size(1) != 1 or tuple(x.shape[-2:]) != self.config.canvas:
            raise ShapeMismatchError(
                f"Expected images of size {self.config.canvas}, got shape {tuple(x.shape)}"
            )
        return x

    def content_vectors(self, class_names):
        """Stack one-hot content vectors; shadow classes raise BadShadowTargetError."""
        return torch.as_tensor(np.stack([self.vocab.one_hot(name) for name in class_names]))

    def style_noise(self, shape, noise_seed):
        """Seeded N(0, noise_std^2) noise for the style vector, zeros when noise_std is 0."""
        if self.config.noise_std == 0:
            return torch.zeros(shape)
        generator = torch.Generator().manual_seed(int(noise_seed))
        return torch.randn(shape, generator=generator) * self.config.noise_std

    # -------------------------------------------------------------------------
    # Forward operations
    # -------------------------------------------------------------------------

    @torch.no_grad()
    def encode_style(self, images):
        """Deterministic style vector(s) of dimension d_s; noise is not added here.

        Returns:
            np.ndarray: (d_s,) for a single image, (N, d_s) for a batch.
        """
        single = np.ndim(images) == 2
        self.style_encoder.eval()
        style = self.style_encoder(self.to_batch(images)).numpy()
        return style[0] if single else style

    @torch.no_grad()
    def generate(self, style_images, class_names, noise_seed=0):
        """decoder(concat(encode_style(style) + eps, one_hot(class))), eps ~ N(0, sigma^2 I).

        Args:
            style_images: One image (H, W) or a batch.
            class_names (str or list): One name, or one per style image.
            noise_seed (int): Seed of eps.

        Returns:
            np.ndarray: (H, W) for a single image, (N, H, W) for a batch.

        Raises:
            BadShadowTargetError: If a class is a shadow class.
            ShapeMismatchError: On wrong image size or count.
        """
        single = np.ndim(style_images) == 2
        names = [class_names] if isinstance(class_names, str) else list(class_names)
        x = self.to_batch(style_images)
        if len(names) == 1 and x.size(0) > 1:
            names = names * x.size(0)
        if len(names) != x.size(0):
            raise ShapeMismatchError(f"{x.size(0)} style images but {len(names)} class names")
        content = self.content_vectors(names)
        self.style_encoder.eval()
        self.decoder.eval()
        style = self.style_encoder(x)
        images = self.decoder(style + self.style_noise(style.shape, noise_seed), content)
        images = images.squeeze(1).numpy()
        return images[0] if single else images

    @torch.no_grad()
    def discriminate(self, images):
        """Probability that each image is real, strictly inside (0,1)."""
        single = np.ndim(images) == 2
        self.discriminator.eval()
        scores = self.discriminator(self.to_batch(images)).double().sigmoid()
        scores = scores.clamp(SCORE_EPS, 1.0 - SCORE_EPS).numpy()
        return float(scores[0]) if single else scores

    @torch.no_grad()
    def classify(self, images):
        """Softmax distribution over generation + shadow classes."""
        single = np.ndim(images) == 2
        self.classifier.eval()
        probabilities = F.softmax(self.classifier(self.to_batch(images)).double(), dim=1).numpy()
        return probabilities[0] if single else probabilities

    # -------------------------------------------------------------------------
    # Persistence
    # -------------------------------------------------------------------------

    def save_model(self, path, config_echo=None):
        """Persist parameters, optimizer state, counters and config echo.

        The bundle stores the vocabulary fingerprint so load_model() can
        refuse a mismatched vocabulary. Written atomically.
        """
        if config_echo is not None:
            self.config_echo = config_echo
        storage.dump_bundle(path, {
            "model_config": asdict(self.config),
            "seed": self.seed,
            "learning_rates": self.learning_rates,
            "state_dicts": {name: module.state_dict() for name, module in self.modules.items()},
            "optimizers": {
                "discriminator": self.opt_discriminator.state_dict(),
                "generator": self.opt_generator.state_dict(),
                "classifier": self.opt_classifier.state_dict(),
            },
            "step": self.step,
            "rng_state": self.rng_state,
            "vocab_fingerprint": self.vocab.fingerprint(),
            "class_names": [c.canonical_name for c in self.vocab.classes],
            "config_echo": self.config_echo,
        })

    @staticmethod
    def load_model(path, vocab):
        """Rebuild a ModelBundle written by save_model().

        Args:
            path (Path): Bundle file.
            vocab (ClassVocabulary): Vocabulary the bundle must have been trained on.

        Returns:
            ModelBundle: In inference mode, optimizers at their stored rates.

        Raises:
            VocabularyMismatchError: If the bundle was written for another vocabulary.
            UnreadableSourceError: If the file cannot be read.
        """
        data = storage.load_bundle(path)
        if data["vocab_fingerprint"] != vocab.fingerprint():
            raise VocabularyMismatchError(
                f"Checkpoint {path} was trained on a different vocabulary "
                f"({len(data['class_names'])} classes stored, {vocab.num_classes} loaded)"
            )
        bundle = ModelBundle(vocab, ModelConfig(**data["model_config"]), seed=data["seed"],
                             learning_rates=data["learning_rates"])
        for name, module in bundle.modules.items():
            module.load_state_dict(data["state_dicts"][name])
        bundle.opt_discriminator.load_state_dict(data["optimizers"]["discriminator"])
        bundle.opt_generator.load_state_dict(data["optimizers"]["generator"])
        bundle.opt_classifier.load_state_dict(data["optimizers"]["classifier"])
        bundle.step = int(data["step"])
        bundle.rng_state = data["rng_state"]
        bundle.config_echo = data.get("config_echo", {})
        bundle.eval_mode()
        logger.info(f"Loaded model bundle {path} at step {bundle.step}")
        return bundle
