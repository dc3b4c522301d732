"""
================================================================================
SYMBOL CLASS VOCABULARY
================================================================================

Purpose: Canonical taxonomy of handwritten music-symbol classes. Maps labels
from heterogeneous source datasets onto canonical class names, builds one-hot
content vectors for the generator, and manages classifier-only "bad" shadow
classes.

HOW IT WORKS:
- The vocabulary is read from a line-oriented definition file (see
  config/vocabulary.txt for the grammar).
- Generation classes get contiguous indices 0..G-1 in file order.
- Shadow classes (<base>bad) are appended after every generation class, so
  registering one never moves an existing index.
- A vocabulary is immutable once loaded; register_bad_class returns a new one.
================================================================================
"""

import hashlib
import logging
from dataclasses import dataclass
from pathlib import Path
from types import MappingProxyType

import numpy as np

from utils.errors import (
    BadShadowTargetError,
    DuplicateShadowError,
    UnknownLabelError,
    VocabularyError,
)

logger = logging.getLogger(__name__)

SHADOW_SUFFIX = "bad"
STEM_RESOLVER = "stem"
KNOWN_RESOLVERS = (STEM_RESOLVER,)
PERMISSION_FLAGS = ("hflip", "vflip", "rotate")


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class SymbolClass:
    """One canonical symbol class and its augmentation permissions."""

    canonical_name: str
    allow_hflip: bool = False
    allow_vflip: bool = False
    allow_rotation: bool = False
    is_bad_shadow: bool = False
    base_class: str = None


@dataclass(frozen=True)
class AliasEntry:
    """Target of a (dataset, source label) alias, with an optional resolver."""

    canonical_name: str
    resolver: str = None


class ClassVocabulary:
    """Ordered, immutable collection of symbol classes plus the alias table.

    Attributes:
        classes (tuple): All classes, generation classes first, then shadows.
        index_of (Mapping): canonical_name -> contiguous integer index.
        alias_table (Mapping): (dataset_id, source_label) -> AliasEntry.

    Raises:
        VocabularyError: On duplicate names, a shadow class without a
            generation base, or a generation class after a shadow class.
    """

    def __init__(self, classes, alias_table=None):
        self.classes = tuple(classes)
        seen_shadow = False
        index = {}
        for i, symbol_class in enumerate(self.classes):
            name = symbol_class.canonical_name
            if name in index:
                raise VocabularyError(f"Duplicate class name '{name}'")
            if symbol_class.is_bad_shadow:
                seen_shadow = True
                base = symbol_class.base_class
                if base not in index or self.classes[index[base]].is_bad_shadow:
                    raise VocabularyError(f"Shadow class '{name}' needs a generation base class, got '{base}'")
            elif seen_shadow:
                raise VocabularyError(f"Generation class '{name}' listed after a shadow class")
            index[name] = i
        self.index_of = MappingProxyType(index)
        self.alias_table = MappingProxyType(dict(alias_table or {}))

    # -------------------------------------------------------------------------
    # Views
    # -------------------------------------------------------------------------

    @property
    def generation_classes(self):
        """Generation class names in index order."""
        return tuple(c.canonical_name for c in self.classes if not c.is_bad_shadow)

    @property
    def shadow_classes(self):
        """Shadow class names in index order, after every generation class."""
        return tuple(c.canonical_name for c in self.classes if c.is_bad_shadow)

    @property
    def num_generation(self):
        """Number G of generation classes, the length of a content vector."""
        return len(self.generation_classes)

    @property
    def num_classes(self):
        """Size of the classifier output, shadow classes included."""
        return len(self.classes)

    def __len__(self):
        return len(self.classes)

    def __contains__(self, name):
        """True for any canonical name, shadow classes included."""
        return name in self.index_of

    def get(self, name):
        """Return the SymbolClass for a canonical name.

        Raises:
            UnknownLabelError: If the name is not in the vocabulary.
        """
        if name not in self.index_of:
            raise UnknownLabelError(f"Unknown class '{name}'")
        return self.classes[self.index_of[name]]

    def is_generation_target(self, name):
        """True for a known class that is not a shadow class."""
        return name in self.index_of and not self.get(name).is_bad_shadow

    def fingerprint(self):
        """Stable SHA-256 over class names, flags and order.

        Checkpoints store it so that a model is never loaded against a
        vocabulary with different indices.
        """
        digest = hashlib.sha256()
        for c in self.classes:
            digest.update(
                f"{c.canonical_name}|{int(c.allow_hflip)}{int(c.allow_vflip)}"
                f"{int(c.allow_rotation)}|{c.base_class or ''}\n".encode("utf-8")
            )
        return digest.hexdigest()

    # -------------------------------------------------------------------------
    # Operations (see module-level wrappers below)
    # -------------------------------------------------------------------------

    def canonicalize(self, source_dataset_id, source_label, metadata=None, image=None):
        """Method form of the module-level canonicalize()."""
        key = (source_dataset_id.lower(), source_label)
        entry = self.alias_table.get(key)
        if entry is None:
            raise UnknownLabelError(f"No alias for label '{source_label}' of dataset '{source_dataset_id}'")
        if entry.resolver is None:
            return entry.canonical_name
        if entry.resolver == STEM_RESOLVER:
            direction = _resolve_stem_direction(metadata, image)
            name = f"{entry.canonical_name}{direction}"
            if name not in self.index_of:
                raise UnknownLabelError(f"Resolved class '{name}' is not in the vocabulary")
            return name
        raise VocabularyError(f"Unknown resolver '{entry.resolver}'")

    def one_hot(self, name):
        """Method form of the module-level one_hot()."""
        symbol_class = self.get(name)
        if symbol_class.is_bad_shadow:
            raise BadShadowTargetError(f"'{name}' is a shadow class and cannot be a generation target")
        vector = np.zeros(self.num_generation, dtype=np.float32)
        vector[self.index_of[name]] = 1.0
        return vector

    def full_one_hot(self, name):
        """One-hot over the whole classifier vocabulary (shadows included)."""
        self.get(name)
        vector = np.zeros(self.num_classes, dtype=np.float32)
        vector[self.index_of[name]] = 1.0
        return vector

    def register_bad_class(self, base):
        """Method form of the module-level register_bad_class()."""
        base_class = self.get(base)
        if base_class.is_bad_shadow:
            raise BadShadowTargetError(f"'{base}' is itself a shadow class")
        shadow_name = f"{base}{SHADOW_SUFFIX}"
        if shadow_name in self.index_of:
            raise DuplicateShadowError(f"Shadow class '{shadow_name}' is already registered")
        shadow = SymbolClass(
            canonical_name=shadow_name,
            allow_hflip=base_class.allow_hflip,
            allow_vflip=base_class.allow_vflip,
            allow_rotation=base_class.allow_rotation,
            is_bad_shadow=True,
            base_class=base,
        )
        return ClassVocabulary(self.classes + (shadow,), self.alias_table)


# =============================================================================
# MODULE-LEVEL OPERATIONS
# =============================================================================
# PURPOSE: Function-style entry points used across the pipeline

def canonicalize(vocab, source_dataset_id, source_label, metadata=None, image=None):
    """Map a source-dataset label onto its canonical class name.

    Args:
        vocab (ClassVocabulary): Loaded vocabulary with its alias table.
        source_dataset_id (str): Dataset token, e.g. "homus" (case-insensitive).
        source_label (str): Label as written by the source, e.g. "Eight-Rest".
        metadata (Mapping, optional): Per-sample metadata; "stem" ("up"/"down")
            feeds the stem resolver.
        image (np.ndarray, optional): Ink-positive image, used by the stem
            resolver when metadata has no stem direction.

    Returns:
        str: Canonical class name.

    Raises:
        UnknownLabelError: If (dataset, label) has no alias entry.

    Example:
        >>> canonicalize(vocab, "homus", "Eight-Rest")
        'eightrest'
    """
    return vocab.canonicalize(source_dataset_id, source_label, metadata, image)


def one_hot(vocab, name):
    """Content vector of length num_generation with 1.0 at the class index.

    Raises:
        BadShadowTargetError: If name is a shadow class.
        UnknownLabelError: If name is not in the vocabulary.
    """
    return vocab.one_hot(name)


def register_bad_class(vocab, base):
    """Return a new vocabulary with '<base>bad' appended after all classes.

    Raises:
        DuplicateShadowError: If the shadow is already registered.
        UnknownLabelError: If base is not in the vocabulary.
    """
    return vocab.register_bad_class(base)


# =============================================================================
# STEM DIRECTION RESOLUTION
# =============================================================================

def _resolve_stem_direction(metadata, image):
    """Return "up" or "down" from metadata, falling back to the ink heuristic."""
    if metadata:
        stem = str(metadata.get("stem") or "").strip().lower()
        if stem in ("up", "down"):
            return stem
    if image is None:
        raise UnknownLabelError("Stem direction needs metadata or an image")
    return stem_direction_from_ink(image)


def stem_direction_from_ink(image):
    """Guess stem direction by comparing ink above and below the notehead.

    The notehead is taken to be the row band with the most ink; an up-stem
    leaves more ink above that band than below it.
    """
    ink = np.asarray(image, dtype=np.float64)
    if ink.ndim != 2 or ink.sum() <= 0:
        raise UnknownLabelError("Cannot resolve stem direction from an empty image")
    rows = ink.sum(axis=1)
    band = max(1, ink.shape[0] // 8)
    smoothed = np.convolve(rows, np.ones(band) / band, mode="same")
    head_row = int(np.argmax(smoothed))
    above = rows[: max(0, head_row - band)].sum()
    below = rows[head_row + band + 1:].sum()
    return "up" if above >= below else "down"


# =============================================================================
# DEFINITION FILE PARSING
# =============================================================================

def parse_vocabulary(text, source="<string>"):
    """Parse the line-oriented vocabulary definition format.

    Grammar (one statement per line, '#' starts a comment):
        class <name> [hflip] [vflip] [rotate]
        alias <dataset>:<source_label> -> <canonical>[:<resolver>]
        shadow <base>

    Class lines define generation classes in index order. Shadow lines are
    applied after every class line through register_bad_class.

    Args:
        text (str): Definition file content.
        source (str): Name used in error messages.

    Returns:
        ClassVocabulary: Generation classes, aliases and shadows.

    Raises:
        VocabularyError: On syntax errors, unknown flags or dangling aliases.
    """
    classes = []
    aliases = {}
    shadows = []

    for number, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        keyword, _, rest = line.partition(" ")
        rest = rest.strip()
        where = f"{source}:{number}"

        if keyword == "class":
            tokens = rest.split()
            if not tokens:
                raise VocabularyError(f"{where}: class line without a name")
            name, flags = tokens[0], set(tokens[1:])
            unknown = flags - set(PERMISSION_FLAGS)
            if unknown:
                raise VocabularyError(f"{where}: unknown flags {sorted(unknown)}")
            if name != name.lower() or name.endswith(SHADOW_SUFFIX):
                raise VocabularyError(f"{where}: class names are lowercase and may not end in '{SHADOW_SUFFIX}'")
            classes.append(SymbolClass(
                canonical_name=name,
                allow_hflip="hflip" in flags,
                allow_vflip="vflip" in flags,
                allow_rotation="rotate" in flags,
            ))
        elif keyword == "alias":
            source_part, arrow, target = rest.partition("->")
            dataset, colon, label = source_part.strip().partition(":")
            if not arrow or not colon or not dataset or not label.strip():
                raise VocabularyError(f"{where}: expected 'alias dataset:label -> canonical[:resolver]'")
            canonical, _, resolver = target.strip().partition(":")
            if resolver and resolver not in KNOWN_RESOLVERS:
                raise VocabularyError(f"{where}: unknown resolver '{resolver}'")
            aliases[(dataset.strip().lower(), label.strip())] = AliasEntry(canonical.strip(), resolver or None)
        elif keyword == "shadow":
            shadows.append(rest)
        else:
            raise VocabularyError(f"{where}: unknown statement '{keyword}'")

    vocab = ClassVocabulary(classes, aliases)
    for (dataset, label), entry in aliases.items():
        if entry.resolver == STEM_RESOLVER:
            targets = [f"{entry.canonical_name}up", f"{entry.canonical_name}down"]
        else:
            targets = [entry.canonical_name]
        missing = [t for t in targets if t not in vocab]
        if missing:
            raise VocabularyError(f"{source}: alias {dataset}:{label} points at unknown classes {missing}")

    for base in shadows:
        vocab = vocab.register_bad_class(base)
    return vocab


def load_vocabulary(path, expected_generation_size=None):
    """Load a vocabulary definition file.

    Args:
        path (str or Path): Location of the definition file.
        expected_generation_size (int, optional): If given, the number of
            generation classes must match (49 for the shipped table).

    Raises:
        VocabularyError: If the file cannot be read, is malformed, or has
            the wrong number of generation classes.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise VocabularyError(f"Cannot read vocabulary file {path}: {e}") from e

    vocab = parse_vocabulary(text, source=str(path))
    if expected_generation_size is not None and vocab.num_generation != expected_generation_size:
        raise VocabularyError(
            f"{path}: expected {expected_generation_size} generation classes, found {vocab.num_generation}"
        )
    logger.info(f"Loaded vocabulary {path.name}: {vocab.num_generation} classes, "
                f"{len(vocab.shadow_classes)} shadow, {len(vocab.alias_table)} aliases")
    return vocab
