"""
================================================================================
MODEL TESTS
================================================================================

Purpose: Network output shapes, deterministic generation and checkpoint
persistence of the model bundle.
================================================================================
"""

import numpy as np
import pytest

from ml.models import ModelBundle, ModelConfig
from utils.errors import BadShadowTargetError, ShapeMismatchError, VocabularyMismatchError
from utils.glyphs import toy_samples, toy_vocabulary

SMALL = ModelConfig(canvas=(32, 32), style_dim=16, base_channels=4)


@pytest.fixture
def bundle(toy_vocab_with_shadow):
    return ModelBundle(toy_vocab_with_shadow, SMALL, seed=0)


@pytest.fixture
def styles():
    return np.stack([s.image for s in toy_samples(2, canvas=(32, 32), seed=9)])


# =============================================================================
# CONFIGURATION
# =============================================================================

@pytest.mark.parametrize("canvas", [(30, 32), (8, 8), (32,)])
def test_canvas_must_be_multiple_of_16(canvas):
    with pytest.raises(ValueError):
        ModelConfig(canvas=canvas)


def test_wide_canvas_is_supported(toy_vocab):
    wide = ModelBundle(toy_vocab, ModelConfig(canvas=(32, 64), style_dim=8, base_channels=4))
    image = wide.generate(np.zeros((32, 64), dtype=np.float32), "circle")
    assert image.shape == (32, 64)


# =============================================================================
# FORWARD OPERATIONS
# =============================================================================

def test_output_shapes(bundle, styles):
    assert bundle.encode_style(styles[0]).shape == (16,)
    assert bundle.encode_style(styles).shape == (4, 16)
    assert bundle.generate(styles, "cross").shape == (4, 32, 32)
    scores = bundle.discriminate(styles)
    assert scores.shape == (4,)
    assert np.all((scores > 0) & (scores < 1))
    probabilities = bundle.classify(styles)
    assert probabilities.shape == (4, 3)
    np.testing.assert_allclose(probabilities.sum(axis=1), 1.0, atol=1e-9)


def test_generated_pixels_are_in_unit_range(bundle, styles):
    images = bundle.generate(styles, ["circle", "cross", "circle", "cross"], noise_seed=1)
    assert images.min() >= 0.0 and images.max() <= 1.0


def test_generation_is_deterministic_per_noise_seed(bundle, styles):
    first = bundle.generate(styles[0], "circle", noise_seed=3)
    again = bundle.generate(styles[0], "circle", noise_seed=3)
    other = bundle.generate(styles[0], "circle", noise_seed=4)
    np.testing.assert_array_equal(first, again)
    assert not np.array_equal(first, other)


def test_same_seed_gives_same_parameters(toy_vocab_with_shadow, styles):
    a = ModelBundle(toy_vocab_with_shadow, SMALL, seed=5)
    b = ModelBundle(toy_vocab_with_shadow, SMALL, seed=5)
    np.testing.assert_array_equal(a.generate(styles, "cross"), b.generate(styles, "cross"))


def test_generate_rejects_shadow_classes_and_bad_shapes(bundle, styles):
    with pytest.raises(BadShadowTargetError):
        bundle.generate(styles[0], "crossbad")
    with pytest.raises(ShapeMismatchError):
        bundle.generate(np.zeros((16, 16)), "cross")
    with pytest.raises(ShapeMismatchError):
        bundle.generate(styles, ["cross", "circle"])


# =============================================================================
# PERSISTENCE
# =============================================================================

def test_save_and_load_restore_outputs(tmp_path, bundle, styles, toy_vocab_with_shadow):
    bundle.step = 42
    bundle.save_model(tmp_path / "model.joblib", config_echo={"seed": 1})
    loaded = ModelBundle.load_model(tmp_path / "model.joblib", toy_vocab_with_shadow)
    assert loaded.step == 42
    assert loaded.config_echo == {"seed": 1}
    assert loaded.learning_rates == bundle.learning_rates
    np.testing.assert_array_equal(loaded.generate(styles, "circle"), bundle.generate(styles, "circle"))


def test_load_with_other_vocabulary_fails(tmp_path, bundle):
    bundle.save_model(tmp_path / "model.joblib")
    with pytest.raises(VocabularyMismatchError):
        ModelBundle.load_model(tmp_path / "model.joblib", toy_vocabulary(with_shadow=False))
