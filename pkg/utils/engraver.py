"""
================================================================================
HANDWRITTEN SCORE ENGRAVER
================================================================================

Purpose: Turn a small MusicXML score into a single handwritten-looking staff
line by placing symbol images (real or generated) from a symbol bank.

PIPELINE:
---------
1. parse_musicxml(): partwise MusicXML -> ScoreSpec (single part, single staff)
2. layout(): ScoreSpec -> ordered Placements (class name, anchor x/y, scale)
3. engrave(): draws the five staff lines, then pastes one bank exemplar per
   placement with multiply blending and records an annotation per symbol

KEY CONCEPTS:
------------
- Staff position p: 0 is the bottom line, 8 the top line, each step is half
  a staff space. In G clef E4 sits on p=0 and B4 on the middle line p=4.
- Anchor: the point of a symbol image that lands on the layout position
  (notehead center for notes, G line for a G clef, ink center otherwise).
- Nominal height: how many staff spaces tall a symbol's ink is drawn.
- Notes are whole-symbol classes (quarternoteup, halfnotedown, ...), not
  assembled from heads and stems.

EXAMPLE:
--------
```python
score = parse_musicxml(Path("scores/minuet.musicxml").read_text())
bank = SymbolBank.load(Path("out/bank"))
line = engrave(score, bank, background=None, rng_seed=3)
line.save(Path("out/lines/minuet.png"), Path("out/lines/minuet.csv"))
```
"""

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from lxml import etree
from PIL import Image

from utils import storage
from utils.errors import (
    EmptyBankError,
    MalformedDocumentError,
    MissingSymbolClassError,
    PitchOutOfRangeError,
    UnreadableSourceError,
    UnsupportedStructureError,
)

logger = logging.getLogger(__name__)

STEPS = "CDEFGAB"
DURATION_CLASSES = ("whole", "half", "quarter", "eighth")
DURATION_BEATS = {"whole": 4.0, "half": 2.0, "quarter": 1.0, "eighth": 0.5}
NOTE_CLASS_STEM = {"half": "halfnote", "quarter": "quarternote", "eighth": "eighthnote"}
REST_CLASSES = {"whole": "wholerest", "half": "halfrest", "quarter": "quarterrest", "eighth": "eightrest"}
ACCIDENTAL_CLASSES = {
    "sharp": "accidentalsharp",
    "flat": "accidentalflat",
    "natural": "accidentalnatural",
    "double-sharp": "accidentaldoublesharp",
    "sharp-sharp": "accidentaldoublesharp",
}
ALTER_ACCIDENTALS = {1: "sharp", -1: "flat", 0: "natural", 2: "double-sharp"}
CLEF_CLASSES = {"G": "gclef", "F": "fclef", "C": "cclef"}
CLEF_PITCHES = {"G": ("G", 4), "F": ("F", 3), "C": ("C", 4)}
STANDARD_CLEF_LINES = {"G": 2, "F": 4, "C": 3}
# Key signature staff positions in treble clef; other clefs are shifted
SHARP_POSITIONS = (8, 5, 9, 6, 3, 7, 4)
FLAT_POSITIONS = (4, 7, 3, 6, 2, 5, 1)
KEY_OFFSETS = {"G": 0, "F": -2, "C": -1}
TIME_DIGITS = (2, 3, 4, 6, 8)
LOWEST_POSITION, HIGHEST_POSITION = -6, 14

DEFAULT_NOMINAL_HEIGHTS = {
    "gclef": 7.0, "fclef": 3.4, "cclef": 4.0,
    "accidentalsharp": 2.8, "accidentalflat": 2.4, "accidentalnatural": 2.8, "accidentaldoublesharp": 1.0,
    "wholenote": 1.0, "noteheadblack": 1.0, "noteheadhalf": 1.0,
    "halfnoteup": 3.5, "halfnotedown": 3.5, "quarternoteup": 3.5, "quarternotedown": 3.5,
    "eighthnoteup": 3.5, "eighthnotedown": 3.5, "sixteenthnoteup": 3.75, "sixteenthnotedown": 3.75,
    "wholerest": 0.5, "halfrest": 0.5, "quarterrest": 3.0, "eightrest": 2.0,
    "sixteenthrest": 2.8, "thirtysecondrest": 3.6,
    "barline": 4.0, "doublebarline": 4.0, "repeatdots": 1.5,
    "timesig2": 2.0, "timesig3": 2.0, "timesig4": 2.0, "timesig6": 2.0, "timesig8": 2.0,
    "commontime": 2.0, "cuttime": 3.0,
    "dot": 0.4,
}
DEFAULT_NOMINAL_HEIGHT = 1.0
# Share of the peak ink value below which exemplar pixels are background
INK_FRACTION = 0.1
# Fraction of the ink height, from the top, where the reference line sits
CLEF_ANCHOR_FRACTIONS = {"gclef": 0.64, "fclef": 0.3, "cclef": 0.5}


# =============================================================================
# DOMAIN TYPES
# =============================================================================

@dataclass(frozen=True)
class Clef:
    """Clef sign (G, F or C) and the staff line it sits on, counted from the bottom."""

    sign: str = "G"
    line: int = 2


@dataclass(frozen=True)
class TimeSignature:
    """Beats per measure over beat type; symbol is "common" or "cut" when drawn as a sign."""

    beats: int
    beat_type: int
    symbol: str = None


@dataclass(frozen=True)
class NoteEvent:
    """One pitched note.

    Attributes:
        step (str): Diatonic step, one of CDEFGAB.
        octave (int): Scientific octave (C4 is middle C).
        alter (int): Semitone alteration, -1 flat to +2 double sharp.
        duration_class (str): whole, half, quarter or eighth.
        stem (str or None): "up" or "down" when the document fixes it.
        accidental (str or None): Accidental written in the document, if any.
        dotted (bool): Whether the duration carries a dot.
    """

    step: str
    octave: int
    alter: int = 0
    duration_class: str = "quarter"
    stem: str = None
    accidental: str = None
    dotted: bool = False


@dataclass(frozen=True)
class RestEvent:
    duration_class: str = "quarter"
    dotted: bool = False


@dataclass
class Measure:
    """Measure number (as written) and its events in document order."""

    number: str
    events: list = field(default_factory=list)


@dataclass
class ScoreSpec:
    """Symbolic content of one single-staff line.

    Attributes:
        divisions (int): Duration units per quarter note.
        clef (Clef): Clef of the first measure.
        time (TimeSignature or None): Time signature of the first measure.
        key_fifths (int): Key signature, positive for sharps, negative for flats.
        measures (list): Measure objects in order.
        warnings (list): One message per kind of skipped content.
    """

    divisions: int = 1
    clef: Clef = Clef()
    time: TimeSignature = None
    key_fifths: int = 0
    measures: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def events(self):
        """All NoteEvent and RestEvent objects of the score, flattened across measures."""
        return [event for measure in self.measures for event in measure.events]


@dataclass(frozen=True)
class StaffGeometry:
    """Raster geometry of a line. Spacings are in staff spaces."""

    staff_space: int = 10
    image_height: int = 128
    left_margin: int = 20
    right_margin: int = 20
    quarter_spacing: float = 2.5
    min_spacing: float = 1.8
    line_thickness: int = 1

    @property
    def staff_top(self):
        """y of the top staff line."""
        return (self.image_height - 4 * self.staff_space) // 2

    @property
    def bottom_line_y(self):
        """y of the lowest staff line."""
        return self.staff_top + 4 * self.staff_space

    def y_of(self, position):
        """Pixel row of staff position p (0 = bottom line)."""
        return self.bottom_line_y - position * self.staff_space / 2.0


@dataclass(frozen=True)
class Placement:
    """Where one symbol goes on the line.

    Attributes:
        canonical_name (str): Bank class to draw.
        x (float): Pixel column of the symbol's anchor.
        y (float): Pixel row of the symbol's anchor.
        scale (float): Pixels per staff space.
        kind (str): clef, keysig, timesig, accidental, note, rest, dot or barline.
        position (int or None): Staff position of notes and accidentals.
        stack (int): Order of symbols sharing one x (0 on top), used by the
            two digits of a time signature.
    """

    canonical_name: str
    x: float
    y: float
    scale: float
    kind: str
    position: int = None
    stack: int = 0


@dataclass(frozen=True)
class Annotation:
    """Ink bounding box of one drawn symbol, in line pixels."""

    canonical_name: str
    kind: str
    x: int
    y: int
    w: int
    h: int


@dataclass
class EngravedLine:
    """Ink-positive line raster plus one annotation per placed symbol."""

    image: np.ndarray
    annotations: list

    @property
    def width(self):
        """Pixel width of the line image."""
        return self.image.shape[1]

    def annotation_frame(self):
        """Annotations as a DataFrame with columns canonical_name, kind, x, y, w, h."""
        return pd.DataFrame([vars(a) for a in self.annotations],
                            columns=["canonical_name", "kind", "x", "y", "w", "h"])

    def save(self, image_path, annotation_path):
        """Write the line as a natural-polarity PNG and its annotations as CSV.

        Args:
            image_path (Path): Target PNG file.
            annotation_path (Path): Target CSV file.
        """
        storage.write_ink_png(image_path, self.image)
        storage.write_table(annotation_path, self.annotation_frame())


# =============================================================================
# MUSICXML PARSING
# =============================================================================

def _local(tag):
    return etree.QName(tag).localname if isinstance(tag, str) else ""


def _child(element, name):
    for child in element:
        if _local(child.tag) == name:
            return child
    return None


def _children(element, name):
    return [child for child in element if _local(child.tag) == name]


def _text(element, path, default=None):
    node = element
    for name in path.split("/"):
        node = _child(node, name) if node is not None else None
    if node is None or node.text is None:
        return default
    return node.text.strip()


def _number(text, convert, element, measure=None):
    """Convert element text with int or float, naming the element when it is not a number.

    Raises:
        MalformedDocumentError: If the text does not parse.
    """
    try:
        return convert(text)
    except (TypeError, ValueError) as e:
        where = f"measure {measure}: " if measure is not None else ""
        raise MalformedDocumentError(f"{where}<{element}> holds '{text}', expected a number") from e


def _duration_class(note, divisions, number=None):
    """(duration class, dotted) from <type>/<dot>, or from <duration> as fallback."""
    kind = _text(note, "type")
    dotted = bool(_children(note, "dot"))
    if kind in DURATION_CLASSES:
        return kind, dotted
    if kind is not None:
        return None, dotted
    duration = _text(note, "duration")
    if duration is None or divisions <= 0:
        return None, dotted
    beats = _number(duration, float, "duration", number) / divisions
    for name, value in DURATION_BEATS.items():
        if math.isclose(beats, value):
            return name, False
        if math.isclose(beats, value * 1.5):
            return name, True
    return None, dotted


def parse_musicxml(document_text):
    """Parse a single-part, single-staff partwise MusicXML document.

    Args:
        document_text (str or bytes): The XML document.

    Returns:
        ScoreSpec: Events in document order. Unsupported content (chords,
        grace notes, secondary voices, unsupported durations, mid-line
        attribute changes, directions) is skipped and listed in warnings.

    Raises:
        MalformedDocumentError: If the text is not well-formed XML or not a score.
        UnsupportedStructureError: For timewise scores, several parts or several staves.
    """
    data = document_text.encode("utf-8") if isinstance(document_text, str) else document_text
    parser = etree.XMLParser(resolve_entities=False, no_network=True, remove_comments=True, recover=False)
    try:
        root = etree.fromstring(data, parser=parser)
    except etree.XMLSyntaxError as e:
        raise MalformedDocumentError(f"MusicXML is not well-formed: {e}") from e

    root_name = _local(root.tag)
    if root_name == "score-timewise":
        raise UnsupportedStructureError("Timewise MusicXML is not supported, convert to partwise")
    if root_name != "score-partwise":
        raise MalformedDocumentError(f"Expected <score-partwise>, found <{root_name}>")

    parts = _children(root, "part")
    score_parts = _children(_child(root, "part-list"), "score-part") if _child(root, "part-list") is not None else []
    if len(parts) > 1 or len(score_parts) > 1:
        raise UnsupportedStructureError(f"Only single-part scores are supported, found {max(len(parts), len(score_parts))} parts")

    score = ScoreSpec()
    warnings = []

    def warn(message):
        if message not in warnings:
            warnings.append(message)

    if not parts:
        return score

    first_attributes = True
    first_voice = None
    for measure in _children(parts[0], "measure"):
        number = measure.get("number", str(len(score.measures) + 1))
        current = Measure(number=number)
        for element in measure:
            name = _local(element.tag)
            if name == "attributes":
                staves = _text(element, "staves")
                if staves is not None and _number(staves, int, "staves", number) > 1:
                    raise UnsupportedStructureError(f"Measure {number}: {staves} staves, only one is supported")
                if first_attributes:
                    _apply_attributes(score, element, warn, number)
                    first_attributes = False
                elif len(element):
                    warn(f"measure {number}: attribute changes after the first measure are ignored")
            elif name == "note":
                event = _parse_note(element, score.divisions, number, warn)
                if event is None:
                    continue
                voice = _text(element, "voice", "1")
                if first_voice is None:
                    first_voice = voice
                if voice != first_voice:
                    warn(f"measure {number}: notes of voice {voice} skipped")
                    continue
                current.events.append(event)
            elif name in ("backup", "forward", "print", "sound"):
                continue
            else:
                warn(f"<{name}> elements skipped")
        score.measures.append(current)

    score.warnings = warnings
    for message in warnings:
        logger.warning(f"MusicXML: {message}")
    return score


def _apply_attributes(score, element, warn, number=None):
    divisions = _text(element, "divisions")
    if divisions is not None:
        score.divisions = _number(divisions, int, "divisions", number)
    fifths = _text(element, "key/fifths")
    if fifths is not None:
        score.key_fifths = max(-7, min(7, _number(fifths, int, "fifths", number)))
    time = _child(element, "time")
    if time is not None:
        beats, beat_type = _text(time, "beats"), _text(time, "beat-type")
        if beats is not None and beat_type is not None and beats.isdigit() and beat_type.isdigit():
            score.time = TimeSignature(int(beats), int(beat_type), time.get("symbol"))
        else:
            warn("compound or missing time signature skipped")
    clef = _child(element, "clef")
    if clef is not None:
        sign = _text(clef, "sign", "G").upper()
        if sign not in CLEF_CLASSES:
            warn(f"clef sign {sign} replaced by G")
            sign = "G"
        line = _number(_text(clef, "line", str(STANDARD_CLEF_LINES[sign])), int, "line", number)
        score.clef = Clef(sign, line)


def _parse_note(note, divisions, number, warn):
    if _child(note, "grace") is not None:
        warn(f"measure {number}: grace notes skipped")
        return None
    if _child(note, "cue") is not None:
        warn(f"measure {number}: cue notes skipped")
        return None
    if _child(note, "chord") is not None:
        warn(f"measure {number}: chord notes skipped")
        return None

    rest = _child(note, "rest")
    if rest is not None and rest.get("measure") == "yes" and _text(note, "type") is None:
        return RestEvent("whole")
    duration_class, dotted = _duration_class(note, divisions, number)
    if duration_class is None:
        warn(f"measure {number}: unsupported duration skipped")
        return None
    if rest is not None:
        return RestEvent(duration_class, dotted)

    pitch = _child(note, "pitch")
    if pitch is None:
        warn(f"measure {number}: unpitched note skipped")
        return None
    step = _text(pitch, "step", "").upper()
    if step not in STEPS:
        warn(f"measure {number}: note with step '{step}' skipped")
        return None
    alter = int(round(_number(_text(pitch, "alter", "0"), float, "alter", number)))
    stem = _text(note, "stem")
    accidental = _text(note, "accidental")
    if accidental is not None and accidental not in ACCIDENTAL_CLASSES:
        warn(f"measure {number}: accidental '{accidental}' skipped")
        accidental = None
    return NoteEvent(
        step=step,
        octave=_number(_text(pitch, "octave", "4"), int, "octave", number),
        alter=alter,
        duration_class=duration_class,
        stem=stem if stem in ("up", "down") else None,
        accidental=accidental,
        dotted=dotted,
    )


# =============================================================================
# LAYOUT
# =============================================================================

def diatonic_index(step, octave):
    """Steps above C0, counting only white keys."""
    return int(octave) * 7 + STEPS.index(step)


def staff_position(step, octave, clef=Clef()):
    """Staff position of a pitch: 0 on the bottom line, +1 per diatonic step."""
    clef_step, clef_octave = CLEF_PITCHES[clef.sign]
    bottom = diatonic_index(clef_step, clef_octave) - 2 * (clef.line - 1)
    return diatonic_index(step, octave) - bottom


def key_signature_positions(fifths, clef=Clef()):
    """(accidental name, staff position) pairs of a key signature."""
    offset = KEY_OFFSETS[clef.sign] + 2 * (clef.line - STANDARD_CLEF_LINES[clef.sign])
    if fifths > 0:
        names, positions = "sharp", SHARP_POSITIONS[:fifths]
    else:
        names, positions = "flat", FLAT_POSITIONS[:-fifths]
    placed = []
    for p in positions:
        p += offset
        while p > 9:
            p -= 7
        while p < -1:
            p += 7
        placed.append((names, p))
    return placed


def _key_alters(fifths):
    sharps_order, flats_order = "FCGDAEB", "BEADGCF"
    if fifths > 0:
        return {step: 1 for step in sharps_order[:fifths]}
    return {step: -1 for step in flats_order[:-fifths]}


def layout(score, geometry=StaffGeometry()):
    """Place every symbol of the score on one staff line.

    Args:
        score (ScoreSpec): Parsed score.
        geometry (StaffGeometry): Staff size, margins and spacing.

    Returns:
        list: Placements in drawing order, sorted by (x, stack). Only the two
        digits of a time signature share an x.

    Raises:
        PitchOutOfRangeError: If a note needs more than three ledger lines.

    Note:
        Stems go up for notes below the middle line and down otherwise,
        unless the note carries a stem hint. Horizontal advance is
        quarter_spacing times the beat length (x1.5 when dotted), never
        less than min_spacing. An alteration stays in force on its staff
        position until the barline, so only changes against the key or an
        earlier accidental of the measure get a sign.
    """
    space = float(geometry.staff_space)
    x = float(geometry.left_margin)
    placements = []

    def place(name, position_or_y, kind, advance, position=None, at_y=False, stack=0):
        y = position_or_y if at_y else geometry.y_of(position_or_y)
        placements.append(Placement(name, x, y, space, kind, position, stack))
        return x + advance * space

    clef = score.clef
    clef_line_position = 2 * (clef.line - 1)
    x = place(CLEF_CLASSES[clef.sign], clef_line_position, "clef", 3.0)

    for accidental, p in key_signature_positions(score.key_fifths, clef):
        x = place(ACCIDENTAL_CLASSES[accidental], p, "keysig", 1.1)
    if score.key_fifths:
        x += 0.5 * space

    time = score.time
    if time is not None:
        if time.symbol in ("common", "cut"):
            x = place("commontime" if time.symbol == "common" else "cuttime", 4, "timesig", 2.5)
        elif time.beats in TIME_DIGITS and time.beat_type in TIME_DIGITS:
            place(f"timesig{time.beats}", 6, "timesig", 0.0)
            x = place(f"timesig{time.beat_type}", 2, "timesig", 2.5, stack=1)
        else:
            score.warnings.append(f"time signature {time.beats}/{time.beat_type} has no symbols, skipped")
            logger.warning(f"Time signature {time.beats}/{time.beat_type} cannot be drawn")

    key_alters = _key_alters(score.key_fifths)
    for measure in score.measures:
        x += 0.5 * space
        # staff position -> alteration set by an accidental earlier in this measure
        in_force = {}
        for event in measure.events:
            beats = DURATION_BEATS[event.duration_class] * (1.5 if event.dotted else 1.0)
            advance = max(geometry.min_spacing, geometry.quarter_spacing * beats)
            if isinstance(event, RestEvent):
                rest_position = {"whole": 5.5, "half": 4.5}.get(event.duration_class, 4.0)
                x = place(REST_CLASSES[event.duration_class], geometry.y_of(rest_position), "rest",
                          advance, at_y=True)
                continue

            p = staff_position(event.step, event.octave, clef)
            if not LOWEST_POSITION <= p <= HIGHEST_POSITION:
                raise PitchOutOfRangeError(
                    f"{event.step}{event.octave} lies at staff position {p}, outside "
                    f"[{LOWEST_POSITION}, {HIGHEST_POSITION}] (three ledger lines)"
                )
            accidental = event.accidental
            current = in_force.get(p, key_alters.get(event.step, 0))
            if accidental is None and event.alter != current:
                accidental = ALTER_ACCIDENTALS.get(event.alter, "flat")
            if accidental is not None:
                in_force[p] = event.alter
                x = place(ACCIDENTAL_CLASSES[accidental], p, "accidental", 1.5, position=p)

            if event.duration_class == "whole":
                name = "wholenote"
            else:
                direction = event.stem or ("up" if p < 4 else "down")
                name = f"{NOTE_CLASS_STEM[event.duration_class]}{direction}"
            note_x = x
            x = place(name, p, "note", advance, position=p)
            if event.dotted:
                dot_position = p + 1 if p % 2 == 0 else p
                placements.append(Placement("dot", note_x + 1.2 * space, geometry.y_of(dot_position), space, "dot"))
        x = place("barline", 4, "barline", 1.0)
    return placements


def line_width(placements, geometry=StaffGeometry()):
    """Pixel width that fits every placement plus the right margin."""
    last = max((p.x for p in placements), default=float(geometry.left_margin))
    return int(math.ceil(last + 2 * geometry.staff_space + geometry.right_margin))


# =============================================================================
# SYMBOL BANK
# =============================================================================

@dataclass
class BankEntry:
    """One exemplar: ink-positive image, anchor (x, y) in its pixels, height in staff spaces."""

    image: np.ndarray
    anchor: tuple
    nominal_height: float


def ink_threshold(image):
    """Pixel value above which a symbol image counts as ink.

    Generated exemplars never reach exactly 0 on the background, so the
    cut-off is INK_FRACTION of the image's peak value.
    """
    peak = float(np.max(image)) if np.size(image) else 0.0
    return INK_FRACTION * peak if peak > 0 else 0.0


def ink_bbox(image, threshold=None):
    """(x0, y0, x1, y1) of ink pixels, inclusive; None if no ink.

    Args:
        image (np.ndarray): Ink-positive 2D image.
        threshold (float, optional): Explicit cut-off. Defaults to ink_threshold(image).
    """
    if threshold is None:
        threshold = ink_threshold(image)
    mask = image > threshold
    rows = np.where(mask.any(axis=1))[0]
    cols = np.where(mask.any(axis=0))[0]
    if len(rows) == 0:
        return None
    return int(cols[0]), int(rows[0]), int(cols[-1]), int(rows[-1])


def estimate_anchor(image, canonical_name):
    """Guess the anchor point of a symbol image from its ink.

    Stemmed notes anchor at the notehead end of the stem, clefs at their
    reference line, everything else at the ink center.

    Returns:
        tuple: (anchor_x, anchor_y) in pixel coordinates of the image.
    """
    image = np.asarray(image, dtype=np.float64)
    threshold = ink_threshold(image)
    box = ink_bbox(image, threshold)
    image = np.where(image > threshold, image, 0.0)
    if box is None:
        h, w = image.shape
        return (w - 1) / 2.0, (h - 1) / 2.0
    x0, y0, x1, y1 = box
    height = y1 - y0 + 1
    nominal = DEFAULT_NOMINAL_HEIGHTS.get(canonical_name, DEFAULT_NOMINAL_HEIGHT)
    if canonical_name.endswith(("noteup", "notedown")):
        head = max(1.0, height / nominal)
        band = (y1 - head + 1, y1 + 1) if canonical_name.endswith("up") else (y0, y0 + head)
        rows = image[int(band[0]):int(math.ceil(band[1])), x0:x1 + 1]
        weights = rows.sum(axis=0)
        ax = x0 + float((weights * np.arange(len(weights))).sum() / weights.sum()) if weights.sum() > 0 else (x0 + x1) / 2.0
        return ax, (band[0] + band[1] - 1) / 2.0
    if canonical_name in CLEF_ANCHOR_FRACTIONS:
        return (x0 + x1) / 2.0, y0 + CLEF_ANCHOR_FRACTIONS[canonical_name] * (height - 1)
    if canonical_name == "accidentalflat":
        return (x0 + x1) / 2.0, y0 + 0.7 * (height - 1)
    return (x0 + x1) / 2.0, (y0 + y1) / 2.0


class SymbolBank:
    """Exemplar images per symbol class, each with its anchor and nominal height.

    Attributes:
        entries (dict): canonical_name -> list of BankEntry; classes without
            images are never stored.
    """

    def __init__(self, entries=None):
        self.entries = {name: list(items) for name, items in (entries or {}).items() if items}

    def __contains__(self, name):
        """True when the bank holds at least one image of class `name`."""
        return name in self.entries

    def __len__(self):
        return sum(len(items) for items in self.entries.values())

    @property
    def classes(self):
        """Sorted names of the classes with at least one image."""
        return sorted(self.entries)

    def add(self, canonical_name, image, anchor=None, nominal_height=None):
        """Add one ink-positive exemplar.

        Args:
            canonical_name (str): Symbol class.
            image (np.ndarray): 2D ink-positive image in [0, 1].
            anchor (tuple, optional): (x, y) in image pixels. Estimated from
                the ink when omitted.
            nominal_height (float, optional): Ink height in staff spaces.
                Defaults to the class's entry in DEFAULT_NOMINAL_HEIGHTS.
        """
        image = np.asarray(image, dtype=np.float32)
        if anchor is None:
            anchor = estimate_anchor(image, canonical_name)
        if nominal_height is None:
            nominal_height = DEFAULT_NOMINAL_HEIGHTS.get(canonical_name, DEFAULT_NOMINAL_HEIGHT)
        self.entries.setdefault(canonical_name, []).append(
            BankEntry(image, (float(anchor[0]), float(anchor[1])), float(nominal_height)))

    def save(self, directory):
        """Write class_name/NNNN.png plus class_name/anchors.csv."""
        directory = Path(directory)
        for name in self.classes:
            rows = []
            for i, entry in enumerate(self.entries[name]):
                file_name = f"{i:04d}.png"
                storage.write_ink_png(directory / name / file_name, entry.image)
                rows.append({"file": file_name, "anchor_x": entry.anchor[0],
                             "anchor_y": entry.anchor[1], "nominal_height": entry.nominal_height})
            storage.write_table(directory / name / "anchors.csv", pd.DataFrame(rows))

    @staticmethod
    def load(directory):
        """Read a bank directory; classes without anchors.csv get estimated anchors.

        Raises:
            UnreadableSourceError: If the directory does not exist.
        """
        directory = Path(directory)
        if not directory.is_dir():
            raise UnreadableSourceError(f"Symbol bank directory {directory} does not exist")
        bank = SymbolBank()
        for class_dir in sorted(p for p in directory.iterdir() if p.is_dir()):
            sidecar = {}
            anchors_path = class_dir / "anchors.csv"
            if anchors_path.exists():
                for _, row in storage.read_table(anchors_path).iterrows():
                    sidecar[str(row["file"])] = row
            for path in storage.list_image_files(class_dir):
                image = storage.read_ink_image(path)
                row = sidecar.get(path.name)
                if row is not None:
                    bank.add(class_dir.name, image, (row["anchor_x"], row["anchor_y"]), row["nominal_height"])
                else:
                    bank.add(class_dir.name, image)
        logger.info(f"Loaded symbol bank {directory}: {len(bank)} images in {len(bank.classes)} classes")
        return bank


# =============================================================================
# ENGRAVING
# =============================================================================

def _blend(canvas, patch, top, left):
    """Multiply-blend an ink patch into the canvas (ink space), clipped to bounds."""
    h, w = patch.shape
    y0, x0 = max(0, top), max(0, left)
    y1, x1 = min(canvas.shape[0], top + h), min(canvas.shape[1], left + w)
    if y1 <= y0 or x1 <= x0:
        return None
    region = patch[y0 - top:y1 - top, x0 - left:x1 - left]
    canvas[y0:y1, x0:x1] = 1.0 - (1.0 - canvas[y0:y1, x0:x1]) * (1.0 - region)
    return region, y0, x0


def _prepare_background(background, height, width, rng):
    if background is None:
        return np.zeros((height, width), dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    reps = (math.ceil(height / background.shape[0]) + 1, math.ceil(width / background.shape[1]) + 1)
    tiled = np.tile(background, reps)
    top = int(rng.integers(0, background.shape[0]))
    left = int(rng.integers(0, background.shape[1]))
    return np.clip(tiled[top:top + height, left:left + width], 0.0, 1.0).copy()


def _scaled_symbol(entry, scale):
    """Crop an exemplar to its ink and resize it to nominal_height * scale pixels tall.

    Pixels at or below ink_threshold() are cleared first so a faint
    background neither widens the crop nor tints the line.
    """
    threshold = ink_threshold(entry.image)
    box = ink_bbox(entry.image, threshold)
    if box is None:
        return None
    x0, y0, x1, y1 = box
    ink = np.where(entry.image > threshold, entry.image, 0.0)
    crop = ink[y0:y1 + 1, x0:x1 + 1].astype(np.float32)
    factor = entry.nominal_height * scale / crop.shape[0]
    new_w = max(1, int(round(crop.shape[1] * factor)))
    new_h = max(1, int(round(crop.shape[0] * factor)))
    resized = np.asarray(Image.fromarray(crop).resize((new_w, new_h), Image.BILINEAR), dtype=np.float64)
    anchor = ((entry.anchor[0] - x0) * new_w / crop.shape[1], (entry.anchor[1] - y0) * new_h / crop.shape[0])
    return np.clip(resized, 0.0, 1.0), anchor


def engrave(score, bank, background=None, rng_seed=0, geometry=StaffGeometry()):
    """Render a score as one handwritten staff line.

    Args:
        score (ScoreSpec): Parsed score.
        bank (SymbolBank): Exemplars for every class the layout needs.
        background (np.ndarray, optional): Ink-positive paper texture; tiled
            when smaller than the line.
        rng_seed (int): Seed for exemplar choice and background offset.
        geometry (StaffGeometry): Raster geometry.

    Returns:
        EngravedLine: Ink-positive image and annotations, one per placement.

    Raises:
        EmptyBankError: If the bank holds no images.
        MissingSymbolClassError: If a needed class has no exemplar.
    """
    if len(bank) == 0:
        raise EmptyBankError("Symbol bank holds no images")
    placements = layout(score, geometry)
    for placement in placements:
        if placement.canonical_name not in bank:
            raise MissingSymbolClassError(f"Symbol bank has no exemplar for class '{placement.canonical_name}'")

    rng = np.random.default_rng(rng_seed)
    height, width = geometry.image_height, line_width(placements, geometry)
    canvas = _prepare_background(background, height, width, rng)

    staff_left = geometry.left_margin // 2
    staff_right = width - geometry.right_margin // 2
    for i in range(5):
        row = geometry.staff_top + i * geometry.staff_space
        canvas[row:row + geometry.line_thickness, staff_left:staff_right] = 1.0

    half_ledger = int(round(1.1 * geometry.staff_space))
    for placement in placements:
        if placement.kind != "note" or placement.position is None:
            continue
        p = placement.position
        ledgers = list(range(-2, p - 1, -2)) if p < -1 else list(range(10, p + 1, 2)) if p > 9 else []
        for ledger in ledgers:
            row = int(round(geometry.y_of(ledger)))
            cx = int(round(placement.x))
            canvas[row:row + geometry.line_thickness, max(0, cx - half_ledger):cx + half_ledger] = 1.0

    annotations = []
    for placement in placements:
        entries = bank.entries[placement.canonical_name]
        entry = entries[int(rng.integers(len(entries)))]
        scaled = _scaled_symbol(entry, placement.scale)
        if scaled is None:
            raise EmptyBankError(f"Exemplar of '{placement.canonical_name}' holds no ink")
        patch, (ax, ay) = scaled
        top = int(round(placement.y - ay))
        left = int(round(placement.x - ax))
        blended = _blend(canvas, patch, top, left)
        if blended is None:
            logger.warning(f"{placement.canonical_name} at x={placement.x:.0f} falls outside the line")
            continue
        region, y0, x0 = blended
        box = ink_bbox(region, ink_threshold(patch))
        if box is None:
            continue
        bx0, by0, bx1, by1 = box
        annotations.append(Annotation(placement.canonical_name, placement.kind,
                                      x0 + bx0, y0 + by0, bx1 - bx0 + 1, by1 - by0 + 1))

    return EngravedLine(canvas.astype(np.float32), annotations)


def load_background(path):
    """Read a natural-polarity paper texture as ink-positive floats."""
    return storage.read_ink_image(path)
