"""
================================================================================
COMMAND-LINE TESTS
================================================================================

Purpose: Run every pipeline stage end to end on toy glyphs, with a few
training steps, and check exit codes, outputs and determinism.
================================================================================
"""

import numpy as np
import pandas as pd
import pytest

from handscore import main
from tests.conftest import SIMPLE_SCORE, make_bank
from utils import storage
from utils.dataset import load_dataset
from utils.engraver import SymbolBank
from utils.glyphs import TOY_VOCABULARY_TEXT, draw_glyph

CONFIG_TEMPLATE = """
seed = 5
output_root = "out"
vocabulary = "vocabulary.txt"

[data]
canvas = [32, 32]
threshold = 12
on_unknown = "skip"

[[data.sources]]
adapter = "folders"
path = "glyphs"
dataset_id = "toy"

[[data.sources]]
adapter = "shadow"
path = "shadow"

[train]
batch_size = 4
standard_cycle = 2
focused_cycle = 1
focus_classes = ["cross"]
total_steps = 4
eval_every = 2
eval_batch_size = 4
shadow_batch_size = 2
log_every = 2

[train.model]
style_dim = 8
base_channels = 4

[generate]
count = 2

[engrave]
scores_dir = "scores"

[evaluate]
reference_dir = "reference"
extractor = "stub"
"""


@pytest.fixture
def workspace(tmp_path):
    """A config directory with toy glyph folders, shadows, one score and reference lines."""
    (tmp_path / "vocabulary.txt").write_text(TOY_VOCABULARY_TEXT + "shadow cross\n")
    rng = np.random.default_rng(0)
    for name in ("circle", "cross"):
        for i in range(8):
            storage.write_ink_png(tmp_path / "glyphs" / name / f"{i}.png", draw_glyph(name, (32, 32), rng))
    for i in range(3):
        storage.write_ink_png(tmp_path / "shadow" / "crossbad" / f"{i}.png", draw_glyph("cross", (32, 32), rng))
    (tmp_path / "scores").mkdir()
    (tmp_path / "scores" / "simple.musicxml").write_text(SIMPLE_SCORE)
    reference = np.zeros((128, 300), dtype=np.float32)
    reference[44:85:10, :] = 1.0
    for i in range(3):
        reference[50:70, 40 + 60 * i:44 + 60 * i] = 1.0
        storage.write_ink_png(tmp_path / "reference" / f"ref{i}.png", reference)
    (tmp_path / "pipeline.toml").write_text(CONFIG_TEMPLATE)
    return tmp_path


def _run(workspace, *args):
    return main(["--config", str(workspace / "pipeline.toml"), *args])


# =============================================================================
# STAGES
# =============================================================================

def test_full_pipeline(workspace):
    out = workspace / "out"
    assert _run(workspace, "prepare-data") == 0
    samples, manifest = load_dataset(out / "data" / "dataset.joblib")
    assert manifest.counts == {"circle": 12, "cross": 12}
    assert manifest.shadow_counts == {"crossbad": 3}
    assert (out / "data" / "class_counts.html").exists()

    assert _run(workspace, "train") == 0
    log = pd.read_csv(out / "logs" / "train_log.csv")
    assert list(log["step"]) == [0, 1, 2, 3]
    assert (out / "checkpoints" / "latest.joblib").exists()
    assert (out / "reports" / "training_losses.html").exists()

    assert _run(workspace, "generate") == 0
    assert SymbolBank.load(out / "bank").classes == ["circle", "cross"]

    bank_dir = workspace / "handmade-bank"
    make_bank().save(bank_dir)
    assert _run(workspace, "engrave", "--bank", str(bank_dir)) == 0
    assert (out / "lines" / "simple.png").exists()
    assert len(pd.read_csv(out / "lines" / "simple.csv")) == 10

    assert _run(workspace, "evaluate", "--candidate", str(workspace / "reference")) == 0
    metrics = (out / "reports" / "metrics.txt").read_text()
    assert "FID" in metrics and "random-projection" in metrics


def test_resume_extends_the_log(workspace):
    assert _run(workspace, "prepare-data") == 0
    assert _run(workspace, "train") == 0
    config = (workspace / "pipeline.toml").read_text().replace("total_steps = 4", "total_steps = 6")
    (workspace / "pipeline.toml").write_text(config)
    latest = workspace / "out" / "checkpoints" / "latest.joblib"
    assert _run(workspace, "train", "--resume", str(latest)) == 0
    assert list(pd.read_csv(workspace / "out" / "logs" / "train_log.csv")["step"]) == list(range(6))


def test_same_seed_same_training_log(workspace):
    logs = []
    for root in ("run-a", "run-b"):
        assert _run(workspace, "--out", str(workspace / root), "prepare-data") == 0
        assert _run(workspace, "--out", str(workspace / root), "train") == 0
        logs.append(pd.read_csv(workspace / root / "logs" / "train_log.csv"))
    pd.testing.assert_frame_equal(logs[0], logs[1])


# =============================================================================
# EXIT STATUS
# =============================================================================

def test_missing_config_flag_exits_with_2():
    assert main(["train"]) == 2


def test_unknown_command_is_an_argument_error():
    with pytest.raises(SystemExit) as excinfo:
        main(["--config", "x.toml", "explode"])
    assert excinfo.value.code == 2


def test_pipeline_errors_exit_with_1(workspace, tmp_path):
    assert main(["--config", str(tmp_path / "absent.toml"), "train"]) == 1
    assert _run(workspace, "train") == 1
    assert _run(workspace, "engrave") == 1


def test_malformed_inputs_exit_with_1(workspace, capsys):
    bank_dir = workspace / "handmade-bank"
    make_bank().save(bank_dir)
    broken = SIMPLE_SCORE.replace("<octave>4</octave>", "<octave>four</octave>", 1)
    (workspace / "scores" / "simple.musicxml").write_text(broken)
    assert _run(workspace, "engrave", "--bank", str(bank_dir)) == 1
    assert "octave" in capsys.readouterr().err

    (workspace / "strokes").mkdir()
    (workspace / "strokes" / "0.txt").write_text("cross\n0,0;ten,10\n")
    config = (workspace / "pipeline.toml").read_text().replace('adapter = "shadow"\npath = "shadow"',
                                                               'adapter = "strokes"\npath = "strokes"')
    (workspace / "pipeline.toml").write_text(config)
    assert _run(workspace, "prepare-data") == 1
    assert "0.txt" in capsys.readouterr().err
