"""
================================================================================
SYMBOL DATASET
================================================================================

Purpose: Ingest handwritten symbol images from heterogeneous sources, normalize
them onto a fixed canvas, augment them where the class allows it and balance
the classes to a training threshold.

WHAT HAPPENS TO A SAMPLE:
-------------------------
1. An adapter reads it (class folders, page crops or online stroke files)
2. normalize() turns it into an ink-positive float image on the H x W canvas
3. The source label is mapped to a canonical class via utils.vocab
4. balance() tops small classes up with rotations and flips
5. BatchStream hands out seed-deterministic batches to the trainer

KEY CONCEPTS:
------------
- Ink-positive: ink pixels have high values, paper is 0.
- Permissions: every class says which flips and rotations keep its meaning
  (a flipped gclef is no longer a gclef, a flipped dot still is a dot).
- Shadow samples: curated distorted exemplars of hard classes. They pass
  through balancing untouched and only ever feed the classifier.

EXAMPLE:
--------
```python
samples = ingest(SourceDescriptor("folders", Path("raw/homus"), "homus"), vocab)
balanced, manifest = balance(samples, vocab, threshold=3000, rng_seed=7)
```
"""

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from PIL import Image, ImageDraw
from scipy import ndimage

from utils import storage
from utils.errors import (
    AugmentationForbiddenError,
    BadShadowTargetError,
    ConfigError,
    DegreesOutOfRangeError,
    EmptyDatasetError,
    EmptyFocusSetError,
    EmptyImageError,
    ShapeMismatchError,
    UnknownLabelError,
    UnreadableSourceError,
)

logger = logging.getLogger(__name__)

DEFAULT_CANVAS = (64, 64)
MAX_ROTATION_DEGREES = 10.0
DEFAULT_STROKE_WIDTH = 3.0
DEFAULT_MAX_MULTIPLIER = 30
ADAPTERS = ("folders", "pages", "strokes", "shadow")
LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass
class SymbolSample:
    """One normalized symbol image.

    Attributes:
        image (np.ndarray): float32 H x W array in [0,1], ink-positive.
        class_name (str): Canonical class name.
        source (str): Token of the source it came from, e.g. "homus:12.txt".
        augmentation_tag (str, optional): None for originals, otherwise
            "hflip", "vflip" or "rotation(<deg>)", chained with "+".
    """

    image: np.ndarray
    class_name: str
    source: str
    augmentation_tag: str = None


@dataclass(frozen=True)
class SourceDescriptor:
    """Where a source lives and how to read it.

    Attributes:
        adapter (str): One of "folders", "pages", "strokes", "shadow".
        path (Path): Root directory of the source.
        dataset_id (str): Token used for alias lookup, e.g. "homus".
        stroke_width (float): Pen width in pixels for the strokes adapter.
    """

    adapter: str
    path: Path
    dataset_id: str = ""
    stroke_width: float = DEFAULT_STROKE_WIDTH


@dataclass
class DatasetManifest:
    """Per-class accounting of a balanced dataset."""

    counts: dict
    total: int
    threshold: int
    retained_classes: tuple
    original_counts: dict = field(default_factory=dict)
    dropped: dict = field(default_factory=dict)
    shadow_counts: dict = field(default_factory=dict)
    max_multiplier: int = DEFAULT_MAX_MULTIPLIER
    seed: int = None

    def to_dict(self):
        """JSON-ready mapping of every field."""
        return {
            "counts": dict(self.counts),
            "total": int(self.total),
            "threshold": int(self.threshold),
            "retained_classes": list(self.retained_classes),
            "original_counts": dict(self.original_counts),
            "dropped": dict(self.dropped),
            "shadow_counts": dict(self.shadow_counts),
            "max_multiplier": int(self.max_multiplier),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, payload):
        """Rebuild a manifest from to_dict() output."""
        return cls(
            counts=dict(payload["counts"]),
            total=int(payload["total"]),
            threshold=int(payload["threshold"]),
            retained_classes=tuple(payload["retained_classes"]),
            original_counts=dict(payload.get("original_counts", {})),
            dropped=dict(payload.get("dropped", {})),
            shadow_counts=dict(payload.get("shadow_counts", {})),
            max_multiplier=int(payload.get("max_multiplier", DEFAULT_MAX_MULTIPLIER)),
            seed=payload.get("seed"),
        )

    def to_frame(self):
        """One row per class seen: original count, final count and status."""
        rows = []
        for name, original in self.original_counts.items():
            if name in self.counts:
                status = "kept" if self.counts[name] == original else "augmented"
            else:
                status = "dropped"
            rows.append({
                "class_name": name,
                "original": original,
                "final": self.counts.get(name, 0),
                "status": status,
            })
        for name, count in self.shadow_counts.items():
            rows.append({"class_name": name, "original": count, "final": count, "status": "shadow"})
        return pd.DataFrame(rows, columns=["class_name", "original", "final", "status"])

    def save(self, directory):
        """Write manifest.json and class_counts.csv into a directory."""
        directory = Path(directory)
        storage.write_json(directory / "manifest.json", self.to_dict())
        storage.write_table(directory / "class_counts.csv", self.to_frame())


# =============================================================================
# NORMALIZATION
# =============================================================================
# PURPOSE: Bring any raw raster onto the canvas in one canonical form

def normalize(raw_image, canvas=DEFAULT_CANVAS):
    """Grayscale, rescale to [0,1], make ink-positive and fit onto the canvas.

    Args:
        raw_image (np.ndarray): 2-D grayscale or H x W x C color array, any
            integer or real range.
        canvas (tuple): Target (height, width).

    Returns:
        np.ndarray: float32 array of shape canvas.

    Raises:
        EmptyImageError: If the image has no pixels or no ink.
        ShapeMismatchError: If the array is not 2-D or 3-D.

    Note:
        - Real images already in [0,1] keep their values; anything else is
          min-max rescaled.
        - A median above 0.5 means dark ink on light paper, so the image is
          inverted.
        - The image is resized as a whole by min(H/h, W/w) and centered, so a
          canvas-sized ink-positive image comes back unchanged.
    """
    array = np.asarray(raw_image)
    if array.size == 0:
        raise EmptyImageError("Image has no pixels")
    if array.ndim == 3:
        if array.shape[2] >= 3:
            gray = array[..., :3].astype(np.float64) @ LUMA_WEIGHTS
        else:
            gray = array[..., 0].astype(np.float64)
    elif array.ndim == 2:
        gray = array.astype(np.float64)
    else:
        raise ShapeMismatchError(f"Expected a 2-D or 3-D image, got {array.ndim} dimensions")

    if not np.all(np.isfinite(gray)):
        raise EmptyImageError("Image contains NaN or infinite values")

    low, high = float(gray.min()), float(gray.max())
    already_unit = np.issubdtype(array.dtype, np.floating) and low >= 0.0 and high <= 1.0
    if not already_unit:
        if high == low:
            raise EmptyImageError("Image is constant")
        gray = (gray - low) / (high - low)

    if np.median(gray) > 0.5:
        gray = 1.0 - gray
    if gray.max() <= 0.0:
        raise EmptyImageError("Image has no ink")

    height, width = canvas
    h, w = gray.shape
    scale = min(height / h, width / w)
    new_h = min(height, max(1, int(round(h * scale))))
    new_w = min(width, max(1, int(round(w * scale))))
    if (new_h, new_w) != (h, w):
        resized = Image.fromarray(gray.astype(np.float32)).resize((new_w, new_h), Image.BILINEAR)
        gray = np.asarray(resized, dtype=np.float64)

    out = np.zeros((height, width), dtype=np.float32)
    top = (height - new_h) // 2
    left = (width - new_w) // 2
    out[top:top + new_h, left:left + new_w] = gray
    np.clip(out, 0.0, 1.0, out=out)
    if out.max() <= 0.0:
        raise EmptyImageError("Image has no ink after resizing")
    return out


# =============================================================================
# STROKE RASTERIZATION
# =============================================================================
# PURPOSE: Turn online pen strokes into canvas images

def fit_strokes(strokes, canvas=DEFAULT_CANVAS, margin=4.0):
    """Scale and center stroke coordinates into the canvas, keeping aspect.

    Args:
        strokes (list): List of strokes, each a sequence of (x, y) points.
        canvas (tuple): Target (height, width).
        margin (float): Free border in pixels on every side.

    Returns:
        list: One float64 array of shape (n, 2) per stroke, in pixel
        coordinates of the canvas.
    """
    arrays = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in strokes if len(s)]
    if not arrays:
        raise EmptyImageError("Stroke list holds no points")
    points = np.concatenate(arrays)
    low, high = points.min(axis=0), points.max(axis=0)
    span = high - low
    height, width = canvas
    room = np.array([width - 1 - 2 * margin, height - 1 - 2 * margin], dtype=np.float64)
    limits = [room[i] / span[i] for i in range(2) if span[i] > 0]
    scale = min(limits) if limits else 1.0
    center = (low + high) / 2.0
    target = np.array([(width - 1) / 2.0, (height - 1) / 2.0])
    return [(a - center) * scale + target for a in arrays]


def rasterize_strokes(strokes, canvas=DEFAULT_CANVAS, stroke_width=DEFAULT_STROKE_WIDTH, margin=4.0):
    """Draw strokes as round-capped polylines onto an ink-positive canvas.

    Returns:
        np.ndarray: float32 array of shape canvas with ink 1.0 along strokes.
    """
    height, width = canvas
    image = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(image)
    pen = max(1, int(round(stroke_width)))
    radius = stroke_width / 2.0
    for stroke in fit_strokes(strokes, canvas, margin):
        coords = [(float(x), float(y)) for x, y in stroke]
        if len(coords) > 1:
            draw.line(coords, fill=255, width=pen, joint="curve")
        for x, y in (coords[0], coords[-1]):
            draw.ellipse((x - radius, y - radius, x + radius, y + radius), fill=255)
    return np.asarray(image, dtype=np.float32) / 255.0


def parse_stroke_file(text, source="<string>"):
    """Parse a Homus-style stroke file.

    The first line is the label; each following line is one stroke written
    as "x,y;x,y;...".

    Args:
        text (str): File content.
        source (str): Name used in error messages.

    Returns:
        tuple: (label, strokes)

    Raises:
        EmptyImageError: If the file holds no lines.
        UnreadableSourceError: If a point is not two comma-separated numbers.
    """
    lines = [line.strip() for line in text.splitlines() if line.strip()]
    if not lines:
        raise EmptyImageError(f"Stroke file {source} is empty")
    strokes = []
    for number, line in enumerate(lines[1:], start=2):
        points = []
        for pair in line.split(";"):
            pair = pair.strip()
            if not pair:
                continue
            try:
                x, y = pair.split(",")
                points.append((float(x), float(y)))
            except ValueError as e:
                raise UnreadableSourceError(
                    f"Stroke file {source}, line {number}: point '{pair}' is not 'x,y'") from e
        if points:
            strokes.append(points)
    return lines[0], strokes


# =============================================================================
# AUGMENTATION
# =============================================================================
# PURPOSE: Semantics-preserving variations, gated by class permissions

def _chain_tag(previous, tag):
    return tag if previous is None else f"{previous}+{tag}"


def augment_rotate(sample, degrees, vocab):
    """Rotate about the canvas center with bilinear interpolation.

    Args:
        sample (SymbolSample): Sample to rotate.
        degrees (float): Angle, counter-clockwise positive.
        vocab (ClassVocabulary): Supplies the class permissions.

    Returns:
        SymbolSample: New sample tagged "rotation(<deg>)".

    Raises:
        DegreesOutOfRangeError: If |degrees| > 10.
        AugmentationForbiddenError: If the class does not allow rotation.
    """
    if not np.isfinite(degrees) or abs(degrees) > MAX_ROTATION_DEGREES:
        raise DegreesOutOfRangeError(f"Rotation of {degrees} degrees is outside +-{MAX_ROTATION_DEGREES:g}")
    if not vocab.get(sample.class_name).allow_rotation:
        raise AugmentationForbiddenError(f"Class '{sample.class_name}' does not allow rotation")
    if degrees == 0:
        image = sample.image.copy()
    else:
        image = ndimage.rotate(sample.image, degrees, reshape=False, order=1, mode="constant", cval=0.0)
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
    return SymbolSample(image, sample.class_name, sample.source,
                        _chain_tag(sample.augmentation_tag, f"rotation({degrees:g})"))


def augment_flip(sample, axis, vocab):
    """Mirror the image. "horizontal" maps column j to W-1-j.

    Args:
        sample (SymbolSample): Sample to mirror.
        axis (str): "horizontal" or "vertical".
        vocab (ClassVocabulary): Supplies the class permissions.

    Returns:
        SymbolSample: New sample tagged "hflip" or "vflip".

    Raises:
        AugmentationForbiddenError: If the class does not allow this flip.
        ValueError: If axis is not "horizontal" or "vertical".
    """
    symbol_class = vocab.get(sample.class_name)
    if axis in ("horizontal", "hflip"):
        if not symbol_class.allow_hflip:
            raise AugmentationForbiddenError(f"Class '{sample.class_name}' does not allow horizontal flips")
        image, tag = np.fliplr(sample.image).copy(), "hflip"
    elif axis in ("vertical", "vflip"):
        if not symbol_class.allow_vflip:
            raise AugmentationForbiddenError(f"Class '{sample.class_name}' does not allow vertical flips")
        image, tag = np.flipud(sample.image).copy(), "vflip"
    else:
        raise ValueError(f"Unknown flip axis '{axis}'")
    return SymbolSample(image, sample.class_name, sample.source,
                        _chain_tag(sample.augmentation_tag, tag))


def permitted_operations(vocab, name):
    """Augmentations balance() may apply to a class: "rotate", "horizontal", "vertical"."""
    symbol_class = vocab.get(name)
    ops = []
    if symbol_class.allow_rotation:
        ops.append("rotate")
    if symbol_class.allow_hflip:
        ops.append("horizontal")
    if symbol_class.allow_vflip:
        ops.append("vertical")
    return ops


# =============================================================================
# SOURCE ADAPTERS
# =============================================================================
# PURPOSE: Read raw records from each source layout; decoding may run in parallel

def _load_normalized(path, canvas):
    return normalize(storage.read_raw_image(path), canvas)


def _crop_page(page_path, boxes, canvas):
    page = storage.read_raw_image(page_path)
    crops = []
    for x, y, w, h in boxes:
        x0, y0 = max(0, int(x)), max(0, int(y))
        x1, y1 = min(page.shape[1], int(x) + int(w)), min(page.shape[0], int(y) + int(h))
        if x1 <= x0 or y1 <= y0:
            raise UnreadableSourceError(f"Box ({x}, {y}, {w}, {h}) lies outside page {page_path}")
        crops.append(normalize(page[y0:y1, x0:x1], canvas))
    return crops


def _rasterize_file(path, canvas, stroke_width):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        storage._handle_io_error(e, f"read stroke file {path}")
    label, strokes = parse_stroke_file(text, source=str(path))
    return label, normalize(rasterize_strokes(strokes, canvas, stroke_width), canvas)


def _read_metadata(root):
    path = Path(root) / "metadata.csv"
    if not path.exists():
        return {}
    frame = storage.read_table(path).fillna("")
    return {str(row["file"]): {k: row[k] for k in frame.columns if k != "file"} for _, row in frame.iterrows()}


def _folder_records(root):
    """(path, label, relative name) for every image under root/<label>/."""
    records = []
    for label_dir in sorted(p for p in Path(root).iterdir() if p.is_dir()):
        for path in storage.list_image_files(label_dir):
            records.append((path, label_dir.name, f"{label_dir.name}/{path.name}"))
    return records


def ingest(descriptor, vocab, canvas=DEFAULT_CANVAS, on_unknown="skip", n_jobs=1):
    """Read every sample of one source, normalized and canonicalized.

    Args:
        descriptor (SourceDescriptor): Adapter name, root path and dataset id.
        vocab (ClassVocabulary): Vocabulary used for label canonicalization.
        canvas (tuple): Target (height, width).
        on_unknown (str): "skip" logs and drops samples with unknown labels,
            "fail" raises UnknownLabelError.
        n_jobs (int): Decoding workers for joblib.Parallel. Output order is
            the sorted input order regardless of n_jobs.

    Returns:
        list: SymbolSample objects.

    Raises:
        ConfigError: If the adapter or on_unknown is not a known value.
        UnreadableSourceError: If the root or a file cannot be read.
        UnknownLabelError: If on_unknown == "fail" and a label has no alias.
        BadShadowTargetError: If a shadow folder names a class the vocabulary
            does not declare as shadow.
    """
    if descriptor.adapter not in ADAPTERS:
        raise ConfigError(f"Unknown adapter '{descriptor.adapter}' for {descriptor.path}, expected one of {ADAPTERS}")
    if on_unknown not in ("skip", "fail"):
        raise ConfigError(f"on_unknown must be 'skip' or 'fail', got '{on_unknown}'")
    root = Path(descriptor.path)
    if not root.is_dir():
        raise UnreadableSourceError(f"Source directory {root} does not exist")

    dataset_id = descriptor.dataset_id or root.name
    parallel = Parallel(n_jobs=n_jobs)
    # (image, source label, metadata, source token)
    records = []

    if descriptor.adapter in ("folders", "shadow"):
        metadata = _read_metadata(root)
        found = _folder_records(root)
        images = parallel(delayed(_load_normalized)(path, canvas) for path, _, _ in found)
        records = [(img, label, metadata.get(name), f"{dataset_id}:{name}")
                   for img, (_, label, name) in zip(images, found)]

    elif descriptor.adapter == "pages":
        table_path = root / "annotations.csv"
        if not table_path.exists():
            raise UnreadableSourceError(f"Page source {root} has no annotations.csv")
        table = storage.read_table(table_path)
        pages = list(dict.fromkeys(table["page"].astype(str)))
        groups = [table[table["page"].astype(str) == page] for page in pages]
        crops = parallel(
            delayed(_crop_page)(root / page, group[["x", "y", "width", "height"]].to_numpy().tolist(), canvas)
            for page, group in zip(pages, groups)
        )
        for page, group, images in zip(pages, groups, crops):
            for (_, row), img in zip(group.iterrows(), images):
                meta = {"stem": row["stem"]} if "stem" in group.columns and isinstance(row["stem"], str) else None
                records.append((img, str(row["label"]), meta, f"{dataset_id}:{page}@{row['x']},{row['y']}"))

    elif descriptor.adapter == "strokes":
        files = sorted(root.rglob("*.txt"))
        results = parallel(delayed(_rasterize_file)(path, canvas, descriptor.stroke_width) for path in files)
        records = [(img, label, None, f"{dataset_id}:{path.relative_to(root).as_posix()}")
                   for (label, img), path in zip(results, files)]

    samples = []
    skipped = 0
    for image, label, meta, token in records:
        try:
            if descriptor.adapter == "shadow":
                if not vocab.get(label).is_bad_shadow:
                    raise BadShadowTargetError(
                        f"Shadow source {root} holds '{label}', which is not a shadow class of the vocabulary")
                name = label
            else:
                name = vocab.canonicalize(dataset_id, label, meta, image)
        except UnknownLabelError as e:
            if on_unknown == "fail":
                raise
            skipped += 1
            logger.warning(f"Skipping {token}: {e}")
            continue
        samples.append(SymbolSample(image, name, token))

    logger.info(f"Ingested {len(samples)} samples from {descriptor.adapter} source {root} "
                f"({skipped} skipped)")
    return samples


# =============================================================================
# BALANCING
# =============================================================================

def balance(samples, vocab, threshold, rng_seed, max_multiplier=DEFAULT_MAX_MULTIPLIER):
    """Augment every class up to the threshold, or drop it.

    Args:
        samples (list): Normalized samples, any order.
        vocab (ClassVocabulary): Provides class order and permissions.
        threshold (int): Minimum count per retained class.
        rng_seed (int): Seed for base-sample and operation choice.
        max_multiplier (int): A class with n originals is dropped when
            n * max_multiplier < threshold.

    Returns:
        tuple: (balanced samples, DatasetManifest)

    Note:
        Classes at or above the threshold are untouched. Smaller classes get
        randomly chosen originals passed through a random permitted operation
        (rotation angle uniform in [-10, 10]) until the count equals the
        threshold. Shadow-class samples pass through unchanged.
    """
    if threshold < 0 or max_multiplier < 1:
        raise ValueError("threshold must be >= 0 and max_multiplier >= 1")
    rng = np.random.default_rng(rng_seed)
    by_class = defaultdict(list)
    for sample in samples:
        if sample.class_name not in vocab:
            logger.warning(f"Ignoring sample of unknown class '{sample.class_name}'")
            continue
        by_class[sample.class_name].append(sample)

    balanced = []
    counts, original_counts, dropped, shadow_counts = {}, {}, {}, {}
    for name in vocab.generation_classes:
        originals = by_class.get(name, [])
        n = len(originals)
        if n == 0:
            continue
        original_counts[name] = n
        if n >= threshold:
            balanced.extend(originals)
            counts[name] = n
            continue
        ops = permitted_operations(vocab, name)
        if not ops:
            dropped[name] = "no permitted augmentation"
            continue
        if n * max_multiplier < threshold:
            dropped[name] = f"{n} x {max_multiplier} < {threshold}"
            continue
        balanced.extend(originals)
        for _ in range(threshold - n):
            base = originals[int(rng.integers(n))]
            op = ops[int(rng.integers(len(ops)))]
            if op == "rotate":
                balanced.append(augment_rotate(base, float(rng.uniform(-MAX_ROTATION_DEGREES, MAX_ROTATION_DEGREES)), vocab))
            else:
                balanced.append(augment_flip(base, op, vocab))
        counts[name] = threshold

    for name in vocab.shadow_classes:
        shadows = by_class.get(name, [])
        if shadows:
            balanced.extend(shadows)
            shadow_counts[name] = len(shadows)

    for name, reason in dropped.items():
        logger.warning(f"Dropped class '{name}': {reason}")

    manifest = DatasetManifest(
        counts=counts,
        total=len(balanced),
        threshold=int(threshold),
        retained_classes=tuple(counts),
        original_counts=original_counts,
        dropped=dropped,
        shadow_counts=shadow_counts,
        max_multiplier=int(max_multiplier),
        seed=rng_seed,
    )
    return balanced, manifest


# =============================================================================
# BATCHING
# =============================================================================

def make_batches(samples, batch_size, rng_seed, drop_last=False):
    """Shuffle once with the seed and cut into batches.

    Raises:
        EmptyDatasetError: If samples is empty.
    """
    if not samples:
        raise EmptyDatasetError("Cannot batch an empty sample list")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = np.random.default_rng(rng_seed).permutation(len(samples))
    batches = [[samples[i] for i in order[start:start + batch_size]]
               for start in range(0, len(order), batch_size)]
    if drop_last and len(batches[-1]) < batch_size:
        batches = batches[:-1]
    return batches


def make_focused_batches(samples, focus_classes, batch_size, rng_seed, drop_last=False):
    """make_batches restricted to samples whose class is in focus_classes.

    Raises:
        EmptyDatasetError: If samples is empty.
        EmptyFocusSetError: If no sample belongs to a focus class.
    """
    if not samples:
        raise EmptyDatasetError("Cannot batch an empty sample list")
    focus = set(focus_classes)
    focused = [s for s in samples if s.class_name in focus]
    if not focused:
        raise EmptyFocusSetError(f"No samples for focus classes {sorted(focus)}")
    return make_batches(focused, batch_size, rng_seed, drop_last)


class BatchStream:
    """Endless, seed-deterministic batches from a standard and a focused pool.

    Each pool is walked in a shuffled order and reshuffled when exhausted, so
    every batch is full even when a pool is smaller than the batch size. The
    state (RNG plus both cursors) can be saved and restored for exact resume.

    Args:
        samples (list): Generation-class samples.
        batch_size (int): Samples per batch.
        rng_seed (int): Seed for all shuffles.
        focus_classes (iterable, optional): Classes of the focused pool.
    """

    def __init__(self, samples, batch_size, rng_seed, focus_classes=()):
        if not samples:
            raise EmptyDatasetError("Cannot stream batches from an empty sample list")
        self.samples = list(samples)
        self.batch_size = int(batch_size)
        self.focus_classes = tuple(sorted(set(focus_classes)))
        focus = set(self.focus_classes)
        self._pools = {
            "standard": np.arange(len(self.samples)),
            "focused": np.array([i for i, s in enumerate(self.samples) if s.class_name in focus], dtype=np.int64),
        }
        self._rng = np.random.default_rng(rng_seed)
        self._orders = {name: self._rng.permutation(pool) for name, pool in self._pools.items()}
        self._cursors = {name: 0 for name in self._pools}

    def has_focus(self):
        """True when at least one sample belongs to a focus class."""
        return len(self._pools["focused"]) > 0

    def next_indices(self, mode="standard"):
        """Sample indices of the next batch; "focused" draws from the focus classes only."""
        pool = self._pools[mode]
        if len(pool) == 0:
            raise EmptyFocusSetError(f"No samples for focus classes {list(self.focus_classes)}")
        picked = []
        while len(picked) < self.batch_size:
            if self._cursors[mode] >= len(pool):
                self._orders[mode] = self._rng.permutation(pool)
                self._cursors[mode] = 0
            take = min(self.batch_size - len(picked), len(pool) - self._cursors[mode])
            start = self._cursors[mode]
            picked.extend(int(i) for i in self._orders[mode][start:start + take])
            self._cursors[mode] += take
        return picked

    def next_batch(self, mode="standard"):
        """SymbolSamples of the next batch (see next_indices)."""
        return [self.samples[i] for i in self.next_indices(mode)]

    def state_dict(self):
        """Cursor positions and shuffled orders, for resuming a run."""
        return {
            "rng": self._rng.bit_generator.state,
            "orders": {k: v.copy() for k, v in self._orders.items()},
            "cursors": dict(self._cursors),
        }

    def load_state_dict(self, state):
        """Restore what state_dict() returned."""
        self._rng.bit_generator.state = state["rng"]
        self._orders = {k: np.asarray(v).copy() for k, v in state["orders"].items()}
        self._cursors = dict(state["cursors"])


# =============================================================================
# PERSISTENCE
# =============================================================================

def stack_images(samples):
    """Stack sample images into an (n, H, W) float32 array."""
    return np.stack([s.image for s in samples]).astype(np.float32)


def save_dataset(path, samples, manifest):
    """Persist a prepared dataset as one joblib bundle."""
    storage.dump_bundle(path, {
        "images": stack_images(samples) if samples else np.zeros((0, 0, 0), np.float32),
        "class_names": [s.class_name for s in samples],
        "sources": [s.source for s in samples],
        "tags": [s.augmentation_tag for s in samples],
        "manifest": manifest.to_dict(),
    })


def load_dataset(path):
    """Load a dataset written by save_dataset.

    Returns:
        tuple: (list of SymbolSample, DatasetManifest)
    """
    payload = storage.load_bundle(path)
    samples = [SymbolSample(image, name, source, tag) for image, name, source, tag in
               zip(payload["images"], payload["class_names"], payload["sources"], payload["tags"])]
    return samples, DatasetManifest.from_dict(payload["manifest"])
