"""
================================================================================
FILE STORAGE ACCESS LAYER
================================================================================

Purpose: Centralize all disk access for the pipeline.
Architecture: CLI subcommands -> utils.* / ml.* stages -> utils.storage -> files

WHY THIS MODULE EXISTS:
- Every stage reads and writes images, sidecar tables and bundles; keeping
  that in one place gives one polarity convention and one atomic-write rule.
- Other modules should not open image files directly, they should use the
  functions of this module.

KEY CONCEPTS:
- Polarity: images on disk are natural (dark ink on light paper); arrays in
  memory are ink-positive floats in [0,1].
- Atomic writes: every artifact is written to a temp file and renamed, so a
  crash never leaves a half-written checkpoint or report behind.
- Determinism: JSON uses sorted keys, PNG files carry no timestamps.
================================================================================
"""

import json
import logging
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import joblib
import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from utils.errors import EmptyDirectoryError, UnreadableSourceError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif")


# =============================================================================
# INTERNAL HELPERS
# =============================================================================

def _handle_io_error(e, context="file operation"):
    """Centralized error handling for reads.

    Logs the failure and raises UnreadableSourceError with context, so every
    caller reports unreadable inputs the same way.

    Args:
        e (Exception): The exception that occurred.
        context (str, optional): Description of the operation that failed.

    Raises:
        UnreadableSourceError: Always.
    """
    error_message = str(e)
    logger.error(f"Error in {context}: {error_message}")
    raise UnreadableSourceError(f"Failed to {context}: {error_message[:200]}") from e


@contextmanager
def _atomic_path(path):
    """Yield a temp path next to `path`; rename it over `path` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    os.close(fd)
    tmp_path = Path(tmp_name)
    try:
        yield tmp_path
        os.replace(tmp_path, path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()


# =============================================================================
# IMAGES
# =============================================================================
# PURPOSE: Read and write raster images with one polarity convention

def list_image_files(directory, recursive=False):
    """List image files in a directory, sorted by relative path.

    Args:
        directory (str or Path): Directory to scan.
        recursive (bool, optional): Descend into subdirectories. Defaults to False.

    Returns:
        list: Sorted list of Path objects.
    """
    directory = Path(directory)
    pattern = "**/*" if recursive else "*"
    return sorted(
        p for p in directory.glob(pattern)
        if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )


def require_image_files(directory, recursive=False):
    """Like list_image_files, but an absent or empty directory is an error.

    Raises:
        EmptyDirectoryError: If the directory is missing or holds no images.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise EmptyDirectoryError(f"Image directory {directory} does not exist")
    files = list_image_files(directory, recursive=recursive)
    if not files:
        raise EmptyDirectoryError(f"Image directory {directory} holds no images")
    return files


def read_raw_image(path):
    """Read an image as a 2-D array in its stored value range.

    16-bit and 32-bit integer images keep their range; everything else is
    converted to 8-bit grayscale.

    Raises:
        UnreadableSourceError: If the file is missing or not an image.
    """
    try:
        with Image.open(path) as img:
            if img.mode in ("I;16", "I;16B", "I;16L", "I", "F"):
                return np.array(img)
            return np.array(img.convert("L"))
    except (OSError, UnidentifiedImageError, ValueError) as e:
        _handle_io_error(e, f"read image {path}")


def read_ink_image(path):
    """Read a natural-polarity image written by write_ink_png as ink-positive floats."""
    raw = read_raw_image(path).astype(np.float32)
    return 1.0 - raw / 255.0


def load_line_image(path):
    """Read a line image of unknown polarity as ink-positive floats in [0,1].

    Paper dominates a music line, so a bright median means dark ink and the
    image is inverted.
    """
    raw = read_raw_image(path).astype(np.float64)
    top = 255.0 if raw.max() <= 255 else float(np.iinfo(np.uint16).max)
    gray = raw / top
    if np.median(gray) > 0.5:
        gray = 1.0 - gray
    return np.clip(gray, 0.0, 1.0).astype(np.float32)


def write_ink_png(path, ink):
    """Write an ink-positive array as an 8-bit natural-polarity PNG (atomic)."""
    ink = np.clip(np.asarray(ink, dtype=np.float64), 0.0, 1.0)
    pixels = np.round((1.0 - ink) * 255.0).astype(np.uint8)
    with _atomic_path(path) as tmp:
        Image.fromarray(pixels).save(tmp, format="PNG")


# =============================================================================
# TABLES AND STRUCTURED REPORTS
# =============================================================================

def write_json(path, payload):
    """Write JSON with sorted keys and a trailing newline (atomic)."""
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    with _atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def read_json(path):
    """Parse a JSON file.

    Raises:
        UnreadableSourceError: If the file is missing or not valid JSON.
    """
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        _handle_io_error(e, f"read JSON {path}")


def write_table(path, frame):
    """Write a DataFrame as CSV without the index (atomic)."""
    with _atomic_path(path) as tmp:
        frame.to_csv(tmp, index=False)


def read_table(path):
    """Read a CSV into a DataFrame.

    Raises:
        UnreadableSourceError: If the file is missing or not parseable.
    """
    try:
        return pd.read_csv(path)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        _handle_io_error(e, f"read table {path}")


def append_table_rows(path, rows):
    """Append rows (list of dicts) to a CSV, writing the header on first use."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False)


def write_text(path, text):
    """Write UTF-8 text (atomic)."""
    with _atomic_path(path) as tmp:
        tmp.write_text(text, encoding="utf-8")


def _json_default(value):
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Cannot serialize {type(value).__name__}")


# =============================================================================
# BUNDLES
# =============================================================================
# PURPOSE: joblib persistence for datasets and model bundles

def dump_bundle(path, payload):
    """Persist a Python object with joblib (atomic)."""
    with _atomic_path(path) as tmp:
        joblib.dump(payload, tmp)
    logger.info(f"Saved bundle to {path}")


def load_bundle(path):
    """Load an object written by dump_bundle.

    Raises:
        UnreadableSourceError: If the file is missing or corrupt.
    """
    try:
        return joblib.load(path)
    except (OSError, EOFError, ValueError) as e:
        _handle_io_error(e, f"load bundle {path}")
