"""
================================================================================
LINE-IMAGE QUALITY METRICS
================================================================================

Purpose: Compare a candidate set of staff-line images with a reference set
using FID, KID and a handwriting-style distance (HWD).

HOW IT WORKS:
1. Images are loaded ink-positive, optionally Otsu-binarized, and brought to
   the extractor's input size (height normalized, width center crop/pad)
2. A FeatureExtractor embeds every image once
3. fid / kid / hwd reduce the two feature matrices to scalars

KEY CONCEPTS:
- FID: ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)), unbiased covariances
- KID: unbiased MMD^2 with the cubic kernel (x.y / d + 1)^3; it can be slightly
  negative when both sets come from the same distribution
- HWD: distance between the means of the L2-normalized style embeddings
- Stub extractor: a seeded Gaussian random projection of block-averaged
  pixels. It needs no weights and is what the tests run on.
================================================================================
"""

import logging
import math
from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import pandas as pd
import scipy.linalg
from PIL import Image
from skimage.filters import threshold_otsu
from sklearn.random_projection import GaussianRandomProjection

from utils import storage
from utils.errors import (
    DimensionMismatchError,
    EmptyImageError,
    ExtractorUnavailableError,
    TooFewSamplesError,
    ZeroVectorError,
)

logger = logging.getLogger(__name__)

FID_JITTER = 1e-6
EXTRACTOR_KINDS = ("stub", "inception", "torchscript")
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


# =============================================================================
# PREPROCESSING
# =============================================================================

def binarize(image):
    """Otsu binarization of an ink-positive grayscale image; ink = 1.

    Raises:
        EmptyImageError: If the image has no pixels.

    Note:
        A constant image has no threshold and binarizes to all background.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.size == 0:
        raise EmptyImageError("Cannot binarize an empty image")
    if image.min() == image.max():
        return np.zeros_like(image, dtype=np.float32)
    threshold = threshold_otsu(image)
    return (image > threshold).astype(np.float32)


def prepare_line_image(image, size):
    """Scale a line image to the target height and center crop/pad its width.

    Args:
        image (np.ndarray): Ink-positive (H, W) image.
        size (tuple): Target (height, width).

    Returns:
        np.ndarray: float32 (height, width), background 0.
    """
    image = np.asarray(image, dtype=np.float32)
    target_h, target_w = size
    h, w = image.shape
    new_w = max(1, int(round(w * target_h / h)))
    resized = np.asarray(Image.fromarray(image).resize((new_w, target_h), Image.BILINEAR), dtype=np.float32)
    out = np.zeros((target_h, target_w), dtype=np.float32)
    if new_w >= target_w:
        left = (new_w - target_w) // 2
        out[:] = resized[:, left:left + target_w]
    else:
        left = (target_w - new_w) // 2
        out[:, left:left + new_w] = resized
    return np.clip(out, 0.0, 1.0)


# =============================================================================
# METRICS
# =============================================================================

def _feature_pair(features_a, features_b, minimum):
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if np.ndim(features_a) == 1:
        a = a.T
    if np.ndim(features_b) == 1:
        b = b.T
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatchError(f"Feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if len(a) < minimum or len(b) < minimum:
        raise TooFewSamplesError(f"Need at least {minimum} samples per set, got {len(a)} and {len(b)}")
    return a, b


def _trace_sqrt_product(sigma_a, sigma_b):
    """Tr((S_a S_b)^(1/2)) via eigh of S_a^(1/2) S_b S_a^(1/2)."""
    values, vectors = scipy.linalg.eigh(sigma_a)
    sqrt_a = (vectors * np.sqrt(np.clip(values, 0.0, None))) @ vectors.T
    middle = sqrt_a @ sigma_b @ sqrt_a
    eigenvalues = scipy.linalg.eigvalsh((middle + middle.T) / 2.0)
    tolerance = max(eigenvalues.max(initial=0.0), 0.0) * len(eigenvalues) * np.finfo(np.float64).eps
    eigenvalues = np.where(eigenvalues > tolerance, eigenvalues, 0.0)
    return float(np.sqrt(eigenvalues).sum())


def fid(features_a, features_b):
    """Frechet distance between Gaussians fitted to two feature sets.

    Args:
        features_a (np.ndarray): (n, d) features; a 1-D array is n samples of d=1.
        features_b (np.ndarray): (m, d) features.

    Returns:
        float: FID, clipped at 0.

    Raises:
        DimensionMismatchError: If d differs.
        TooFewSamplesError: If n or m < 2.
    """
    a, b = _feature_pair(features_a, features_b, 2)
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    sigma_a = np.atleast_2d(np.cov(a, rowvar=False, ddof=1))
    sigma_b = np.atleast_2d(np.cov(b, rowvar=False, ddof=1))
    trace_sqrt = _trace_sqrt_product(sigma_a, sigma_b)
    if not math.isfinite(trace_sqrt):
        logger.warning(f"Non-finite matrix square root, retrying with {FID_JITTER} diagonal jitter")
        jitter = FID_JITTER * np.eye(len(sigma_a))
        trace_sqrt = _trace_sqrt_product(sigma_a + jitter, sigma_b + jitter)
    value = float(((mu_a - mu_b) ** 2).sum() + np.trace(sigma_a) + np.trace(sigma_b) - 2.0 * trace_sqrt)
    return max(value, 0.0)


def _polynomial_kernel(x, y, d):
    return (x @ y.T / d + 1.0) ** 3


def kid(features_a, features_b):
    """Unbiased MMD^2 with kernel (x.y / d + 1)^3.

    Raises:
        TooFewSamplesError: If either set has fewer than 2 samples.
        DimensionMismatchError: If d differs.
    """
    a, b = _feature_pair(features_a, features_b, 2)
    n, m, d = len(a), len(b), a.shape[1]
    k_aa = _polynomial_kernel(a, a, d)
    k_bb = _polynomial_kernel(b, b, d)
    k_ab = _polynomial_kernel(a, b, d)
    within_a = (k_aa.sum() - np.trace(k_aa)) / (n * (n - 1))
    within_b = (k_bb.sum() - np.trace(k_bb)) / (m * (m - 1))
    return float(within_a + within_b - 2.0 * k_ab.mean())


def kid_biased(features_a, features_b):
    """Biased MMD^2 (diagonals kept); exactly 0 for identical sets."""
    a, b = _feature_pair(features_a, features_b, 1)
    d = a.shape[1]
    return float(_polynomial_kernel(a, a, d).mean() + _polynomial_kernel(b, b, d).mean()
                 - 2.0 * _polynomial_kernel(a, b, d).mean())


def kid_resampled(features_a, features_b, n_resamples=50, subset_size=None, seed=0):
    """KID averaged over random subsets drawn without replacement from each set.

    Returns:
        tuple: (mean, standard deviation) over the resamples.
    """
    a, b = _feature_pair(features_a, features_b, 2)
    size = min(len(a), len(b)) if subset_size is None else int(subset_size)
    if size < 2 or size > min(len(a), len(b)):
        raise TooFewSamplesError(f"Subset size {size} does not fit sets of {len(a)} and {len(b)}")
    rng = np.random.default_rng(seed)
    values = np.array([
        kid(a[rng.choice(len(a), size, replace=False)], b[rng.choice(len(b), size, replace=False)])
        for _ in range(n_resamples)
    ])
    return float(values.mean()), float(values.std(ddof=1)) if n_resamples > 1 else 0.0


def hwd(style_features_a, style_features_b):
    """Euclidean distance between the means of L2-normalized style vectors.

    Raises:
        ZeroVectorError: If any vector has zero norm.
        TooFewSamplesError: If either set is empty.
    """
    a, b = _feature_pair(style_features_a, style_features_b, 1)
    means = []
    for name, block in (("first", a), ("second", b)):
        norms = np.linalg.norm(block, axis=1, keepdims=True)
        if (norms == 0).any():
            raise ZeroVectorError(f"The {name} set holds a zero style vector")
        means.append((block / norms).mean(axis=0))
    return float(np.linalg.norm(means[0] - means[1]))


# =============================================================================
# FEATURE EXTRACTORS
# =============================================================================

class FeatureExtractor(ABC):
    """image -> fixed-size feature vector; deterministic per instance."""

    name = "extractor"
    input_size = (64, 256)

    @abstractmethod
    def extract(self, images):
        """(N, H, W) prepared ink-positive images -> (N, d) float64 features."""

    def prepare(self, image):
        """Fit one line image to input_size (see prepare_line_image)."""
        return prepare_line_image(image, self.input_size)


class RandomProjectionExtractor(FeatureExtractor):
    """Seeded Gaussian random projection of block-averaged pixels.

    Args:
        input_size (tuple): Prepared image size; both sides divisible by block.
        block (int): Side of the averaging blocks.
        n_components (int): Feature dimension.
        seed (int): Projection seed.
    """

    def __init__(self, input_size=(64, 256), block=4, n_components=64, seed=0):
        self.input_size = tuple(input_size)
        if any(side % block for side in self.input_size):
            raise ValueError(f"input_size {self.input_size} must be divisible by block {block}")
        self.block = block
        self.seed = seed
        self.name = f"random-projection(d={n_components}, seed={seed})"
        n_inputs = (self.input_size[0] // block) * (self.input_size[1] // block)
        self.projection = GaussianRandomProjection(n_components=n_components, random_state=seed)
        self.projection.fit(np.zeros((1, n_inputs)))

    @property
    def dim(self):
        """Feature dimension."""
        return self.projection.n_components

    def extract(self, images):
        """Block-average each image, then project it onto the fixed random basis."""
        images = np.asarray(images, dtype=np.float64)
        n, h, w = images.shape
        pooled = images.reshape(n, h // self.block, self.block, w // self.block, self.block).mean(axis=(2, 4))
        return self.projection.transform(pooled.reshape(n, -1))


class _TorchExtractor(FeatureExtractor):
    batch_size = 32

    def _tensor(self, images):
        import torch

        return torch.as_tensor(np.asarray(images, dtype=np.float32)).unsqueeze(1)

    def _forward(self, batch):
        raise NotImplementedError

    def extract(self, images):
        """(N, H, W) prepared images -> (N, d) pooled network features."""
        import torch

        images = np.asarray(images, dtype=np.float32)
        outputs = []
        with torch.no_grad():
            for start in range(0, len(images), self.batch_size):
                batch = self._tensor(images[start:start + self.batch_size])
                outputs.append(self._forward(batch).reshape(len(batch), -1).double().numpy())
        return np.concatenate(outputs, axis=0)


class InceptionExtractor(_TorchExtractor):
    """InceptionV3 pool features (2048-d) from a local weights file.

    Raises:
        ExtractorUnavailableError: If torchvision or the weights cannot be loaded.
    """

    input_size = (299, 299)

    def __init__(self, weights_path):
        try:
            import torch
            import torchvision
        except ImportError as e:
            raise ExtractorUnavailableError(f"torchvision is required for the Inception extractor: {e}") from e
        if weights_path is None or not Path(weights_path).is_file():
            raise ExtractorUnavailableError(f"Inception weights not found at {weights_path}")
        model = torchvision.models.inception_v3(weights=None, aux_logits=True, init_weights=False)
        try:
            model.load_state_dict(torch.load(weights_path, map_location="cpu"))
        except (OSError, RuntimeError) as e:
            raise ExtractorUnavailableError(f"Cannot load Inception weights {weights_path}: {e}") from e
        model.fc = torch.nn.Identity()
        self.model = model.eval()
        self.name = f"inception-v3({Path(weights_path).name})"
        self.mean = torch.tensor(IMAGENET_MEAN).view(1, 3, 1, 1)
        self.std = torch.tensor(IMAGENET_STD).view(1, 3, 1, 1)

    def _forward(self, batch):
        paper = (1.0 - batch).repeat(1, 3, 1, 1)
        return self.model((paper - self.mean) / self.std)


class TorchScriptExtractor(_TorchExtractor):
    """Any TorchScript backbone taking (N, 1, H, W) ink-positive images."""

    def __init__(self, weights_path, input_size=(64, 256)):
        try:
            import torch

            self.model = torch.jit.load(str(weights_path), map_location="cpu").eval()
        except (ImportError, OSError, RuntimeError, ValueError) as e:
            raise ExtractorUnavailableError(f"Cannot load TorchScript model {weights_path}: {e}") from e
        self.input_size = tuple(input_size)
        self.name = f"torchscript({Path(weights_path).name})"

    def _forward(self, batch):
        return self.model(batch)


def build_extractor(kind="stub", weights_path=None, allow_stub=False, seed=0, input_size=(64, 256)):
    """Create a feature extractor by kind.

    Raises:
        ExtractorUnavailableError: If the extractor cannot be built and
            allow_stub is False.
    """
    if kind not in EXTRACTOR_KINDS:
        raise ValueError(f"Extractor kind must be one of {EXTRACTOR_KINDS}, got '{kind}'")
    if kind == "stub":
        return RandomProjectionExtractor(input_size=input_size, seed=seed)
    try:
        if kind == "inception":
            return InceptionExtractor(weights_path)
        return TorchScriptExtractor(weights_path, input_size=input_size)
    except ExtractorUnavailableError as e:
        if not allow_stub:
            raise
        logger.warning(f"{e}; falling back to the random-projection stub")
        return RandomProjectionExtractor(input_size=input_size, seed=seed)


# =============================================================================
# EVALUATION
# =============================================================================

@dataclass
class MetricReport:
    """Scores of one candidate set against one reference set.

    Attributes:
        fid, kid, hwd (float): The three distances; lower is closer.
        n_candidate, n_reference (int): Images read from each directory.
        extractor, style_extractor (str): Names of the feature extractors used.
        binarized (bool): Whether images were Otsu-binarized first.
        kid_std (float): Spread of resampled KID, None without resampling.
    """

    fid: float
    kid: float
    hwd: float
    n_candidate: int
    n_reference: int
    extractor: str
    style_extractor: str
    binarized: bool
    kid_std: float = None

    def to_dict(self):
        return asdict(self)

    def to_frame(self):
        """One-row table with the columns FID, KID, HWD."""
        return pd.DataFrame([{"FID": self.fid, "KID": self.kid, "HWD": self.hwd}])

    def save(self, directory):
        """Write metrics.json and the printable metrics.txt table."""
        from utils.formatting import format_metric_table

        directory = Path(directory)
        storage.write_json(directory / "metrics.json", self.to_dict())
        storage.write_text(directory / "metrics.txt", format_metric_table(self))


class _FeatureCache:
    """Features per (resolved image path, extractor) so no image is embedded twice."""

    def __init__(self, binarize_flag):
        self.binarize_flag = binarize_flag
        self.features = {}

    def features_for(self, paths, extractor):
        missing = [p for p in paths if (p.resolve(), extractor.name) not in self.features]
        if missing:
            prepared = []
            for path in missing:
                image = storage.load_line_image(path)
                if self.binarize_flag:
                    image = binarize(image)
                prepared.append(extractor.prepare(image))
            for path, row in zip(missing, extractor.extract(np.stack(prepared))):
                self.features[(path.resolve(), extractor.name)] = row
        return np.stack([self.features[(p.resolve(), extractor.name)] for p in paths])


def evaluate(candidate_dir, reference_dir, extractor, binarize_flag=True,
             style_extractor=None, kid_resamples=0, kid_subset=None,
             seed=0):
    """Compute FID, KID and HWD between two directories of line images.

    Args:
        candidate_dir, reference_dir: Image directories (natural polarity PNGs).
        extractor (FeatureExtractor): Embeds images for FID and KID.
        binarize_flag (bool): Otsu-binarize before extraction.
        style_extractor (FeatureExtractor, optional): Embeds images for HWD;
            defaults to extractor.
        kid_resamples (int): If > 0, KID is averaged over this many subsets.
        kid_subset (int, optional): Subset size for resampled KID.
        seed (int): Resampling seed.

    Raises:
        EmptyDirectoryError: If either directory holds no images.
    """
    candidates = storage.require_image_files(candidate_dir)
    references = storage.require_image_files(reference_dir)
    style_extractor = style_extractor or extractor
    cache = _FeatureCache(binarize_flag)

    features_c = cache.features_for(candidates, extractor)
    features_r = cache.features_for(references, extractor)
    style_c = cache.features_for(candidates, style_extractor)
    style_r = cache.features_for(references, style_extractor)

    kid_std = None
    if kid_resamples > 0:
        kid_value, kid_std = kid_resampled(features_c, features_r, kid_resamples, kid_subset, seed)
    else:
        kid_value = kid(features_c, features_r)

    report = MetricReport(
        fid=fid(features_c, features_r),
        kid=kid_value,
        hwd=hwd(style_c, style_r),
        n_candidate=len(candidates),
        n_reference=len(references),
        extractor=extractor.name,
        style_extractor=style_extractor.name,
        binarized=bool(binarize_flag),
        kid_std=kid_std,
    )
    logger.info(f"Metrics: FID={report.fid:.4f} KID={report.kid:.4f} HWD={report.hwd:.4f}")
    return report
