"""
================================================================================
CONFIG TESTS
================================================================================

Purpose: TOML loading, path resolution, overrides, environment fallbacks and
the ConfigError cases.
================================================================================
"""

import pytest

from tests.conftest import REPO_ROOT
from utils.config import INCEPTION_WEIGHTS_ENV, load_config, parse_config
from utils.errors import ConfigError

EXAMPLE_CONFIG = REPO_ROOT / "config" / "pipeline.example.toml"


def _minimal(**extra):
    raw = {"seed": 3, "vocabulary": "vocabulary.txt"}
    raw.update(extra)
    return raw


# =============================================================================
# LOADING
# =============================================================================

def test_example_config_parses():
    config = load_config(EXAMPLE_CONFIG)
    assert config.seed == 7
    assert config.train.seed == 7
    assert config.train.model.canvas == (64, 64)
    assert config.train.focus_classes == ("accidentalsharp", "gclef")
    assert config.train.weights.beta == 2.5
    assert [s.adapter for s in config.data.sources] == ["strokes", "pages", "folders", "shadow"]
    assert config.vocabulary == (REPO_ROOT / "config" / "vocabulary.txt").resolve()
    assert config.output_root == (REPO_ROOT / "out").resolve()
    assert config.engrave.geometry.staff_space == 10


def test_relative_paths_resolve_against_the_config_directory(tmp_path):
    config = parse_config(_minimal(engrave={"scores_dir": "scores"}), tmp_path)
    assert config.engrave.scores_dir == (tmp_path / "scores").resolve()
    assert config.vocabulary == (tmp_path / "vocabulary.txt").resolve()
    assert config.checkpoint_dir == config.output_root / "checkpoints"


def test_overrides_replace_document_values(tmp_path):
    config = parse_config(_minimal(), tmp_path, seed=99, output_root=tmp_path / "elsewhere")
    assert config.seed == config.train.seed == 99
    assert config.raw["seed"] == 99
    assert config.output_root == tmp_path / "elsewhere"


def test_environment_supplies_extractor_weights(tmp_path, monkeypatch):
    monkeypatch.setenv(INCEPTION_WEIGHTS_ENV, "/weights/inception.pth")
    assert str(parse_config(_minimal(), tmp_path).evaluate.weights) == "/weights/inception.pth"


# =============================================================================
# ERRORS
# =============================================================================

@pytest.mark.parametrize("raw", [
    {"vocabulary": "v.txt"},
    {"seed": "seven", "vocabulary": "v.txt"},
    {"seed": 1},
    _minimal(colour="red"),
    _minimal(train={"learning_rate": 0.1}),
    _minimal(train={"seed": 4}),
    _minimal(train={"swap_fraction": 2.0}),
    _minimal(train={"standard_cycle": 0, "focused_cycle": 0}),
    _minimal(train={"model": {"style_dim": 0}}),
    _minimal(data={"on_unknown": "ignore"}),
    _minimal(data={"sources": [{"adapter": "scanner", "path": "x"}]}),
    _minimal(data={"sources": [{"adapter": "folders"}]}),
    _minimal(engrave={"geometry": {"staff_height": 3}}),
    _minimal(evaluate="fast"),
])
def test_invalid_documents(tmp_path, raw):
    with pytest.raises(ConfigError):
        parse_config(raw, tmp_path)


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("seed = = 3\n")
    with pytest.raises(ConfigError):
        load_config(broken)


def test_require_paths_names_the_missing_key(tmp_path):
    (tmp_path / "vocabulary.txt").write_text("class dot\n")
    config = parse_config(_minimal(engrave={"scores_dir": "scores"}), tmp_path)
    with pytest.raises(ConfigError, match="engrave.scores_dir"):
        config.require_paths("engrave")
    with pytest.raises(ConfigError, match="evaluate.reference_dir"):
        config.require_paths("evaluate")
    with pytest.raises(ConfigError, match="data.sources"):
        config.require_paths("prepare-data")
    (tmp_path / "scores").mkdir()
    config.require_paths("engrave")
