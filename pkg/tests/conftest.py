"""
================================================================================
SHARED TEST FIXTURES
================================================================================

Purpose: Vocabularies, toy glyphs, a MusicXML fixture, a tiny hand-drawn
symbol bank and one toy GAN trained once per session.
================================================================================
"""

from pathlib import Path

import numpy as np
import pytest
from PIL import Image, ImageDraw

from ml.models import ModelConfig
from ml.trainer import TrainConfig, train
from utils.engraver import SymbolBank
from utils.glyphs import toy_samples, toy_shadow_samples, toy_vocabulary
from utils.vocab import load_vocabulary

REPO_ROOT = Path(__file__).resolve().parent.parent
VOCABULARY_PATH = REPO_ROOT / "config" / "vocabulary.txt"

# Four quarter notes, then a whole-measure rest; G clef, 4/4
SIMPLE_SCORE = """<?xml version="1.0" encoding="UTF-8"?>
<!DOCTYPE score-partwise PUBLIC "-//Recordare//DTD MusicXML 3.1 Partwise//EN"
  "http://www.musicxml.org/dtds/partwise.dtd">
<score-partwise version="3.1">
  <part-list>
    <score-part id="P1"><part-name>Voice</part-name></score-part>
  </part-list>
  <part id="P1">
    <measure number="1">
      <attributes>
        <divisions>1</divisions>
        <key><fifths>0</fifths></key>
        <time><beats>4</beats><beat-type>4</beat-type></time>
        <clef><sign>G</sign><line>2</line></clef>
      </attributes>
      <note><pitch><step>E</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice><type>quarter</type></note>
      <note><pitch><step>G</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice><type>quarter</type></note>
      <note><pitch><step>B</step><octave>4</octave></pitch><duration>1</duration><voice>1</voice><type>quarter</type></note>
      <note><pitch><step>D</step><octave>5</octave></pitch><duration>1</duration><voice>1</voice><type>quarter</type></note>
    </measure>
    <measure number="2">
      <note><rest/><duration>4</duration><voice>1</voice><type>whole</type></note>
    </measure>
  </part>
</score-partwise>
"""


def score_document(measures_xml, attributes_xml=None, extra_parts=""):
    """Wrap measure content into a one-part partwise document."""
    attributes = attributes_xml if attributes_xml is not None else (
        "<attributes><divisions>1</divisions><clef><sign>G</sign><line>2</line></clef></attributes>"
    )
    body = "".join(
        f'<measure number="{i + 1}">{attributes if i == 0 else ""}{content}</measure>'
        for i, content in enumerate(measures_xml)
    )
    return (
        '<?xml version="1.0" encoding="UTF-8"?>'
        '<score-partwise version="3.1"><part-list><score-part id="P1"/></part-list>'
        f'<part id="P1">{body}</part>{extra_parts}</score-partwise>'
    )


def note_xml(step, octave, kind="quarter", alter=None, extra=""):
    alter_xml = f"<alter>{alter}</alter>" if alter is not None else ""
    return (f"<note><pitch><step>{step}</step>{alter_xml}<octave>{octave}</octave></pitch>"
            f"<duration>1</duration><voice>1</voice><type>{kind}</type>{extra}</note>")


# =============================================================================
# VOCABULARIES AND SAMPLES
# =============================================================================

@pytest.fixture(scope="session")
def vocab():
    """The shipped 49-class vocabulary with its two shadow classes."""
    return load_vocabulary(VOCABULARY_PATH)


@pytest.fixture
def toy_vocab():
    return toy_vocabulary()


@pytest.fixture
def toy_vocab_with_shadow():
    return toy_vocabulary(with_shadow=True)


@pytest.fixture
def small_toy_samples():
    return toy_samples(20, canvas=(32, 32), seed=3)


# =============================================================================
# ENGRAVING
# =============================================================================

def _draw_symbol(name, height=40):
    """A crude ink-positive stand-in glyph whose shape depends on the class family."""
    width = max(8, height // 2)
    image = Image.new("L", (width, height), 0)
    draw = ImageDraw.Draw(image)
    if name.endswith(("noteup", "notedown")):
        head = height // 4
        top = height - head if name.endswith("up") else 0
        draw.ellipse((0, top, width - 3, top + head - 1), fill=255)
        stem_x = width - 3 if name.endswith("up") else 0
        draw.line((stem_x, 0, stem_x, height - 1), fill=255, width=2)
    elif name in ("wholenote", "dot", "wholerest", "halfrest"):
        draw.ellipse((0, 0, width - 1, width - 1), fill=255)
        image = image.crop((0, 0, width, width))
    elif name == "barline":
        draw.line((width // 2, 0, width // 2, height - 1), fill=255, width=2)
    else:
        draw.rectangle((1, 1, width - 2, height - 2), outline=255, width=2)
    return np.asarray(image, dtype=np.float32) / 255.0


BANK_CLASSES = (
    "gclef", "fclef", "cclef",
    "accidentalsharp", "accidentalflat", "accidentalnatural", "accidentaldoublesharp",
    "wholenote", "halfnoteup", "halfnotedown", "quarternoteup", "quarternotedown",
    "eighthnoteup", "eighthnotedown",
    "wholerest", "halfrest", "quarterrest", "eightrest",
    "barline", "timesig2", "timesig3", "timesig4", "timesig6", "timesig8", "commontime", "cuttime",
    "dot",
)


def _on_canvas(glyph, canvas, background):
    """Center a glyph on a larger canvas whose empty pixels hold `background`, like decoder output."""
    image = np.full(canvas, background, dtype=np.float32)
    top = (canvas[0] - glyph.shape[0]) // 2
    left = (canvas[1] - glyph.shape[1]) // 2
    region = image[top:top + glyph.shape[0], left:left + glyph.shape[1]]
    image[top:top + glyph.shape[0], left:left + glyph.shape[1]] = np.maximum(region, glyph)
    return image


def make_bank(classes=BANK_CLASSES, copies=2, canvas=None, background=0.0):
    """Hand-drawn bank; with `canvas` every glyph sits on a faint generated-style background."""
    bank = SymbolBank()
    for name in classes:
        for i in range(copies):
            glyph = _draw_symbol(name, height=36 + 4 * i)
            if canvas is not None:
                glyph = _on_canvas(glyph, canvas, background)
            bank.add(name, glyph)
    return bank


@pytest.fixture
def tiny_bank():
    return make_bank()


# =============================================================================
# TRAINED TOY MODEL
# =============================================================================

@pytest.fixture(scope="session")
def trained_toy():
    """A toy GAN trained for 500 steps on circles and crosses, shared by all tests.

    Returns:
        tuple: (bundle, log, samples)
    """
    vocab = toy_vocabulary(with_shadow=True)
    samples = toy_samples(200, canvas=(32, 32), seed=0) + toy_shadow_samples(50, canvas=(32, 32), seed=1)
    config = TrainConfig(
        lr_discriminator=1e-4,
        lr_generator=1e-3,
        lr_classifier=1e-4,
        focus_classes=("cross",),
        total_steps=500,
        seed=0,
        eval_every=100,
        log_every=100,
        model=ModelConfig(canvas=(32, 32), style_dim=32, base_channels=8),
    )
    bundle, log = train(config, samples, vocab)
    return bundle, log, samples
