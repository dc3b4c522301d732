"""
================================================================================
ENGRAVER TESTS
================================================================================

Purpose: MusicXML parsing, staff layout, symbol bank persistence and line
rendering.
================================================================================
"""

import numpy as np
import pandas as pd
import pytest

from tests.conftest import SIMPLE_SCORE, make_bank, note_xml, score_document
from utils.engraver import (
    Clef,
    StaffGeometry,
    SymbolBank,
    engrave,
    estimate_anchor,
    key_signature_positions,
    layout,
    parse_musicxml,
    staff_position,
)
from utils.errors import (
    EmptyBankError,
    MalformedDocumentError,
    MissingSymbolClassError,
    PitchOutOfRangeError,
    UnreadableSourceError,
    UnsupportedStructureError,
)


def _names(placements):
    return [p.canonical_name for p in placements]


# =============================================================================
# PARSING
# =============================================================================

def test_simple_score_is_parsed():
    score = parse_musicxml(SIMPLE_SCORE)
    assert score.clef == Clef("G", 2)
    assert (score.time.beats, score.time.beat_type) == (4, 4)
    assert score.key_fifths == 0
    assert [m.number for m in score.measures] == ["1", "2"]
    assert [(e.step, e.octave) for e in score.measures[0].events] == [("E", 4), ("G", 4), ("B", 4), ("D", 5)]
    assert score.measures[1].events[0].duration_class == "whole"
    assert score.warnings == []


def test_bytes_input_is_accepted():
    assert len(parse_musicxml(SIMPLE_SCORE.encode("utf-8")).events) == 5


def test_duration_falls_back_to_divisions():
    score = parse_musicxml(score_document([
        "<note><pitch><step>C</step><octave>5</octave></pitch><duration>3</duration></note>"
    ], attributes_xml="<attributes><divisions>2</divisions></attributes>"))
    event = score.events[0]
    assert (event.duration_class, event.dotted) == ("quarter", True)


@pytest.mark.parametrize("text, error", [
    ("<score-partwise><part>", MalformedDocumentError),
    ("<opus/>", MalformedDocumentError),
    ("<score-timewise/>", UnsupportedStructureError),
])
def test_structural_errors(text, error):
    with pytest.raises(error):
        parse_musicxml(text)


def test_several_parts_are_unsupported():
    document = score_document([note_xml("C", 5)], extra_parts='<part id="P2"><measure number="1"/></part>')
    with pytest.raises(UnsupportedStructureError):
        parse_musicxml(document)


def test_several_staves_are_unsupported():
    document = score_document([note_xml("C", 5)],
                              attributes_xml="<attributes><divisions>1</divisions><staves>2</staves></attributes>")
    with pytest.raises(UnsupportedStructureError):
        parse_musicxml(document)


def test_unsupported_content_is_skipped_with_warnings():
    score = parse_musicxml(score_document([
        note_xml("C", 5) + note_xml("E", 5, extra="<chord/>") + note_xml("G", 5, extra="<grace/>"),
        note_xml("D", 5).replace("<voice>1</voice>", "<voice>2</voice>") + note_xml("F", 5, kind="16th")
        + "<direction><direction-type><words>dolce</words></direction-type></direction>",
        '<attributes><key><fifths>3</fifths></key></attributes>' + note_xml("A", 4),
    ]))
    assert [(e.step, e.octave) for e in score.events] == [("C", 5), ("A", 4)]
    assert score.key_fifths == 0
    assert len(score.warnings) == 6


@pytest.mark.parametrize("measure, attributes, element", [
    ([note_xml("E", "x")], None, "octave"),
    ([note_xml("E", 4, alter="sharp")], None, "alter"),
    ([note_xml("E", 4)], "<attributes><divisions>one</divisions></attributes>", "divisions"),
    ([note_xml("E", 4)], "<attributes><staves>two</staves></attributes>", "staves"),
    ([note_xml("E", 4)], "<attributes><key><fifths>++</fifths></key></attributes>", "fifths"),
    (["<note><pitch><step>C</step><octave>5</octave></pitch><duration>1.x</duration></note>"],
     "<attributes><divisions>2</divisions></attributes>", "duration"),
])
def test_non_numeric_values_are_malformed(measure, attributes, element):
    with pytest.raises(MalformedDocumentError, match=element):
        parse_musicxml(score_document(measure, attributes))


def test_empty_score_has_no_events():
    score = parse_musicxml('<score-partwise version="3.1"><part-list/></score-partwise>')
    assert score.measures == [] and score.events == []


# =============================================================================
# LAYOUT
# =============================================================================

@pytest.mark.parametrize("step, octave, clef, expected", [
    ("E", 4, Clef(), 0),
    ("B", 4, Clef(), 4),
    ("C", 6, Clef(), 12),
    ("G", 2, Clef("F", 4), 0),
    ("F", 3, Clef("C", 3), 0),
])
def test_staff_position(step, octave, clef, expected):
    assert staff_position(step, octave, clef) == expected


def test_key_signature_positions():
    assert key_signature_positions(2) == [("sharp", 8), ("sharp", 5)]
    assert key_signature_positions(-2) == [("flat", 4), ("flat", 7)]
    assert key_signature_positions(2, Clef("F", 4)) == [("sharp", 6), ("sharp", 3)]
    assert key_signature_positions(0) == []


def test_simple_score_layout():
    placements = layout(parse_musicxml(SIMPLE_SCORE))
    assert _names(placements) == [
        "gclef", "timesig4", "timesig4",
        "quarternoteup", "quarternoteup", "quarternotedown", "quarternotedown", "barline",
        "wholerest", "barline",
    ]
    order = [(p.x, p.stack) for p in placements]
    assert all(a < b for a, b in zip(order, order[1:]))
    events = [p.x for p in placements if p.kind in ("note", "rest", "barline")]
    assert all(a < b for a, b in zip(events, events[1:]))
    geometry = StaffGeometry()
    assert placements[3].y == geometry.y_of(0) == 84


def test_time_signature_digits_are_stacked():
    upper, lower = layout(parse_musicxml(SIMPLE_SCORE))[1:3]
    assert upper.x == lower.x
    assert (upper.stack, lower.stack) == (0, 1)
    assert upper.y < lower.y


def test_accidentals_follow_the_key():
    attributes = "<attributes><divisions>1</divisions><key><fifths>1</fifths></key></attributes>"
    score = parse_musicxml(score_document(
        [note_xml("F", 5, alter=1) + note_xml("F", 4) + note_xml("B", 4, alter=-1)], attributes))
    names = _names(layout(score))
    assert names[:2] == ["gclef", "accidentalsharp"]
    assert names[2:] == ["quarternotedown", "accidentalnatural", "quarternoteup",
                         "accidentalflat", "quarternotedown", "barline"]


def test_accidentals_last_until_the_barline():
    score = parse_musicxml(score_document([
        note_xml("F", 5, alter=1) + note_xml("F", 5, alter=1) + note_xml("F", 5) + note_xml("F", 4, alter=1),
        note_xml("F", 5, alter=1),
    ]))
    names = _names(layout(score))
    assert names[1:] == [
        "accidentalsharp", "quarternotedown", "quarternotedown",
        "accidentalnatural", "quarternotedown",
        "accidentalsharp", "quarternoteup", "barline",
        "accidentalsharp", "quarternotedown", "barline",
    ]


def test_stem_hint_and_dots():
    score = parse_musicxml(score_document([
        note_xml("C", 5, kind="half", extra="<stem>up</stem><dot/>") + note_xml("E", 4, kind="whole")
    ]))
    placements = layout(score)
    assert _names(placements)[1:] == ["halfnoteup", "dot", "wholenote", "barline"]
    note, dot = placements[1], placements[2]
    assert dot.x == pytest.approx(note.x + 12)
    assert dot.y == StaffGeometry().y_of(5)


def test_pitch_outside_three_ledger_lines():
    with pytest.raises(PitchOutOfRangeError):
        layout(parse_musicxml(score_document([note_xml("C", 3)])))


def test_common_time_symbol():
    attributes = ('<attributes><divisions>1</divisions>'
                  '<time symbol="common"><beats>4</beats><beat-type>4</beat-type></time></attributes>')
    assert "commontime" in _names(layout(parse_musicxml(score_document([note_xml("C", 5)], attributes))))


# =============================================================================
# SYMBOL BANK
# =============================================================================

def test_note_anchor_sits_on_the_notehead():
    image = np.zeros((40, 20), dtype=np.float32)
    image[30:40, 0:10] = 1.0
    image[0:40, 9:11] = 1.0
    _, ay = estimate_anchor(image, "quarternoteup")
    assert 30 <= ay <= 40
    _, ay_down = estimate_anchor(np.flipud(image), "quarternotedown")
    assert 0 <= ay_down <= 10


def test_bank_round_trip(tmp_path, tiny_bank):
    tiny_bank.save(tmp_path)
    loaded = SymbolBank.load(tmp_path)
    assert loaded.classes == tiny_bank.classes
    assert len(loaded) == len(tiny_bank)
    original = tiny_bank.entries["gclef"][0]
    restored = loaded.entries["gclef"][0]
    assert restored.anchor == pytest.approx(original.anchor)
    assert restored.nominal_height == pytest.approx(original.nominal_height)
    assert (tmp_path / "gclef" / "anchors.csv").exists()


def test_missing_bank_directory(tmp_path):
    with pytest.raises(UnreadableSourceError):
        SymbolBank.load(tmp_path / "absent")


# =============================================================================
# ENGRAVING
# =============================================================================

def test_engraving_annotates_every_symbol(tiny_bank):
    line = engrave(parse_musicxml(SIMPLE_SCORE), tiny_bank, rng_seed=0)
    frame = line.annotation_frame()
    assert line.image.shape[0] == 128
    assert len(frame) == 10
    assert frame["canonical_name"].value_counts().to_dict() == {
        "quarternoteup": 2, "quarternotedown": 2, "timesig4": 2, "barline": 2, "gclef": 1, "wholerest": 1,
    }
    assert (frame["x"] >= 0).all() and (frame["x"] + frame["w"] <= line.width).all()
    assert (frame["y"] >= 0).all() and (frame["y"] + frame["h"] <= 128).all()


def test_faint_exemplar_background_is_not_ink(tiny_bank):
    score = parse_musicxml(SIMPLE_SCORE)
    generated_style = make_bank(canvas=(64, 64), background=0.02)
    clean = engrave(score, tiny_bank, rng_seed=1)
    faint = engrave(score, generated_style, rng_seed=1)
    pd.testing.assert_frame_equal(faint.annotation_frame(), clean.annotation_frame())
    np.testing.assert_allclose(faint.image, clean.image, atol=1e-6)
    notes = faint.annotation_frame().query("kind == 'note'")
    # quarter notes are drawn 3.5 staff spaces tall
    assert notes["h"].between(33, 37).all()


def test_annotation_boxes_hold_ink():
    line = engrave(parse_musicxml(SIMPLE_SCORE), make_bank(canvas=(64, 64), background=0.02), rng_seed=2)
    for a in line.annotations:
        box = line.image[a.y:a.y + a.h, a.x:a.x + a.w]
        assert box.max() > 0.5
        assert box[0, :].max() > 0 and box[-1, :].max() > 0
        assert box[:, 0].max() > 0 and box[:, -1].max() > 0


def test_staff_lines_are_drawn(tiny_bank):
    line = engrave(parse_musicxml(SIMPLE_SCORE), tiny_bank)
    for row in (44, 54, 64, 74, 84):
        assert line.image[row, 10:line.width - 10].min() == pytest.approx(1.0)


def test_ledger_line_below_the_staff(tiny_bank):
    line = engrave(parse_musicxml(score_document([note_xml("C", 4)])), tiny_bank)
    note = next(a for a in line.annotations if a.kind == "note")
    assert line.image[94, note.x:note.x + note.w].max() == pytest.approx(1.0)


def test_engraving_is_deterministic(tiny_bank):
    score = parse_musicxml(SIMPLE_SCORE)
    first = engrave(score, tiny_bank, rng_seed=4)
    second = engrave(score, tiny_bank, rng_seed=4)
    np.testing.assert_array_equal(first.image, second.image)
    pd.testing.assert_frame_equal(first.annotation_frame(), second.annotation_frame())


def test_background_is_tiled_under_the_ink(tiny_bank):
    paper = np.full((30, 30), 0.2, dtype=np.float32)
    line = engrave(parse_musicxml(SIMPLE_SCORE), tiny_bank, background=paper)
    assert line.image[2, 2] == pytest.approx(0.2)
    assert line.image.max() <= 1.0


def test_missing_classes_and_empty_banks():
    score = parse_musicxml(SIMPLE_SCORE)
    with pytest.raises(MissingSymbolClassError):
        engrave(score, make_bank(classes=("gclef", "barline")))
    with pytest.raises(EmptyBankError):
        engrave(score, SymbolBank())


def test_saved_line_files(tmp_path, tiny_bank):
    line = engrave(parse_musicxml(SIMPLE_SCORE), tiny_bank)
    line.save(tmp_path / "line.png", tmp_path / "line.csv")
    assert list(pd.read_csv(tmp_path / "line.csv").columns) == ["canonical_name", "kind", "x", "y", "w", "h"]
    assert (tmp_path / "line.png").stat().st_size > 0
