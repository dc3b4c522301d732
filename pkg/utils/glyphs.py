"""
================================================================================
TOY GLYPHS
================================================================================

Purpose: Programmatically drawn two-class glyph set (circles and crosses) used
by the smoke training script and the test suite. Every glyph varies in
position, size and pen width so the generator has a "style" to pick up.
================================================================================
"""

import numpy as np
from PIL import Image, ImageDraw

from utils.dataset import SymbolSample
from utils.vocab import parse_vocabulary

TOY_CLASSES = ("circle", "cross")

TOY_VOCABULARY_TEXT = """
class circle hflip vflip rotate
class cross hflip vflip rotate
alias toy:circle -> circle
alias toy:cross -> cross
"""


def toy_vocabulary(with_shadow=False):
    """Two-class vocabulary; optionally with the shadow class 'crossbad'."""
    text = TOY_VOCABULARY_TEXT + ("shadow cross\n" if with_shadow else "")
    return parse_vocabulary(text, source="<toy>")


def draw_glyph(class_name, canvas, rng):
    """Draw one ink-positive glyph with random placement, size and pen width.

    Args:
        class_name (str): "circle" or "cross".
        canvas (tuple): (height, width).
        rng (np.random.Generator): Source of the style jitter.

    Returns:
        np.ndarray: float32 array of shape canvas.
    """
    height, width = canvas
    side = min(height, width)
    image = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(image)
    radius = side * rng.uniform(0.22, 0.36)
    cx = width / 2 + rng.uniform(-0.08, 0.08) * side
    cy = height / 2 + rng.uniform(-0.08, 0.08) * side
    pen = max(1, int(round(side * rng.uniform(0.05, 0.1))))
    box = (cx - radius, cy - radius, cx + radius, cy + radius)
    if class_name == "circle":
        draw.ellipse(box, outline=255, width=pen)
    elif class_name == "cross":
        draw.line((box[0], box[1], box[2], box[3]), fill=255, width=pen)
        draw.line((box[0], box[3], box[2], box[1]), fill=255, width=pen)
    else:
        raise ValueError(f"No toy glyph for class '{class_name}'")
    return np.asarray(image, dtype=np.float32) / 255.0


def draw_distorted_cross(canvas, rng):
    """A cross with one arm cut short, used as a shadow exemplar."""
    image = draw_glyph("cross", canvas, rng)
    height, width = canvas
    image[: height // 2, width // 2:] = 0.0
    return image


def toy_samples(n_per_class, canvas=(32, 32), seed=0, classes=TOY_CLASSES):
    """Draw n_per_class glyphs for each toy class, class-interleaved.

    Returns:
        list: SymbolSample objects with source "toy:<index>".
    """
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n_per_class):
        for name in classes:
            samples.append(SymbolSample(draw_glyph(name, canvas, rng), name, f"toy:{len(samples)}"))
    return samples


def toy_shadow_samples(n, canvas=(32, 32), seed=0):
    """Draw n distorted crosses labelled with the shadow class "crossbad".

    Returns:
        list: SymbolSample objects with source "toy-shadow:<index>".
    """
    rng = np.random.default_rng(seed)
    return [SymbolSample(draw_distorted_cross(canvas, rng), "crossbad", f"toy-shadow:{i}") for i in range(n)]
