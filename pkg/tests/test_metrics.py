"""
================================================================================
METRIC TESTS
================================================================================

Purpose: Closed-form FID / KID / HWD values, line image preprocessing,
feature extractors and directory evaluation.
================================================================================
"""

import json
import math

import numpy as np
import pytest

from utils import storage
from utils.errors import (
    DimensionMismatchError,
    EmptyDirectoryError,
    EmptyImageError,
    ExtractorUnavailableError,
    TooFewSamplesError,
    ZeroVectorError,
)
from utils.metrics import (
    RandomProjectionExtractor,
    binarize,
    build_extractor,
    evaluate,
    fid,
    hwd,
    kid,
    kid_biased,
    kid_resampled,
    prepare_line_image,
)

HALF_SQRT = 1 / math.sqrt(2)


def _write_lines(directory, seed, count=3, shift=0):
    rng = np.random.default_rng(seed)
    for i in range(count):
        image = np.zeros((64, 300), dtype=np.float32)
        for row in (10, 20, 30, 40, 50):
            image[row, :] = 1.0
        for x in rng.integers(10, 280, size=12):
            image[15 + shift:45 + shift, x:x + 3] = 1.0
        storage.write_ink_png(directory / f"line{i}.png", image)
    return directory


# =============================================================================
# FID
# =============================================================================

def test_fid_of_shifted_distribution():
    a = np.array([-HALF_SQRT, HALF_SQRT])
    assert fid(a, a + 3.0) == pytest.approx(9.0, abs=1e-9)


def test_fid_of_scaled_distribution():
    a = np.array([-HALF_SQRT, HALF_SQRT])
    b = np.array([-math.sqrt(2), math.sqrt(2)])
    assert fid(a, b) == pytest.approx(1.0, abs=1e-9)


def test_fid_of_identical_sets_is_zero():
    features = np.random.default_rng(0).normal(size=(50, 8))
    assert fid(features, features) == pytest.approx(0.0, abs=1e-6)


def test_fid_with_rank_deficient_covariance():
    features = np.random.default_rng(1).normal(size=(3, 16))
    assert fid(features, features) == pytest.approx(0.0, abs=1e-6)
    assert fid(features, features + 1.0) == pytest.approx(16.0, abs=1e-6)


def test_fid_input_checks():
    with pytest.raises(DimensionMismatchError):
        fid(np.zeros((4, 2)), np.zeros((4, 3)))
    with pytest.raises(TooFewSamplesError):
        fid(np.zeros((1, 2)), np.zeros((4, 2)))


# =============================================================================
# KID AND HWD
# =============================================================================

def test_kid_of_disjoint_point_masses():
    a = np.array([[1.0, 0.0], [1.0, 0.0]])
    b = np.array([[0.0, 1.0], [0.0, 1.0]])
    assert kid(a, b) == pytest.approx(4.75)


def test_kid_is_unbiased_for_equal_distributions():
    rng = np.random.default_rng(7)
    values = [kid(rng.normal(size=(20, 16)), rng.normal(size=(20, 16))) for _ in range(300)]
    assert abs(np.mean(values)) < 0.05


def test_biased_kid_of_identical_sets_is_zero():
    features = np.random.default_rng(2).normal(size=(5, 3))
    assert kid_biased(features, features) == pytest.approx(0.0, abs=1e-12)


def test_full_size_resampling_matches_plain_kid():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(10, 4)), rng.normal(0.5, 1.0, size=(10, 4))
    mean, std = kid_resampled(a, b, n_resamples=5, subset_size=10, seed=1)
    assert mean == pytest.approx(kid(a, b), abs=1e-12)
    assert std == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(TooFewSamplesError):
        kid_resampled(a, b, subset_size=11)


@pytest.mark.parametrize("shift", [0.0, 0.3])
def test_subset_resampling_brackets_the_full_set_kid(shift):
    rng = np.random.default_rng(11)
    a, b = rng.normal(size=(128, 16)), rng.normal(shift, 1.0, size=(96, 16))
    mean, std = kid_resampled(a, b, n_resamples=50, subset_size=32, seed=4)
    standard_error = std / math.sqrt(50)
    assert std > 0
    assert abs(mean - kid(a, b)) <= 3 * standard_error


def test_hwd_of_opposite_vectors():
    v = np.array([[3.0, 4.0]])
    assert hwd(v, -v) == pytest.approx(2.0)
    assert hwd(v, 2 * v) == pytest.approx(0.0)
    with pytest.raises(ZeroVectorError):
        hwd(v, np.zeros((1, 2)))


# =============================================================================
# PREPROCESSING AND EXTRACTORS
# =============================================================================

def test_binarize():
    image = np.array([[0.1, 0.2], [0.8, 0.9]])
    np.testing.assert_array_equal(binarize(image), [[0, 0], [1, 1]])
    np.testing.assert_array_equal(binarize(np.full((3, 3), 0.5)), np.zeros((3, 3)))
    with pytest.raises(EmptyImageError):
        binarize(np.zeros((0, 0)))


def test_prepare_line_image_crops_and_pads():
    wide = np.ones((32, 1000), dtype=np.float32)
    assert prepare_line_image(wide, (64, 256)).min() == pytest.approx(1.0)
    narrow = np.ones((64, 100), dtype=np.float32)
    prepared = prepare_line_image(narrow, (64, 256))
    assert prepared.shape == (64, 256)
    assert prepared[:, :50].max() == 0.0
    assert prepared[:, 100:150].min() == pytest.approx(1.0)


def test_random_projection_is_seeded():
    images = np.random.default_rng(4).random((3, 64, 256))
    a = RandomProjectionExtractor(seed=5).extract(images)
    b = RandomProjectionExtractor(seed=5).extract(images)
    c = RandomProjectionExtractor(seed=6).extract(images)
    assert a.shape == (3, 64)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)
    with pytest.raises(ValueError):
        RandomProjectionExtractor(input_size=(30, 256))


def test_missing_weights(tmp_path):
    with pytest.raises(ExtractorUnavailableError):
        build_extractor("inception", tmp_path / "none.pth")
    with pytest.raises(ExtractorUnavailableError):
        build_extractor("torchscript", tmp_path / "none.pt")
    assert isinstance(build_extractor("inception", None, allow_stub=True), RandomProjectionExtractor)
    with pytest.raises(ValueError):
        build_extractor("vgg")


# =============================================================================
# DIRECTORY EVALUATION
# =============================================================================

def test_identical_directories_score_zero(tmp_path):
    lines = _write_lines(tmp_path / "lines", seed=0)
    report = evaluate(lines, lines, RandomProjectionExtractor(seed=0))
    assert report.fid == pytest.approx(0.0, abs=1e-6)
    assert report.kid_std is None
    assert report.hwd == pytest.approx(0.0, abs=1e-9)
    assert (report.n_candidate, report.n_reference) == (3, 3)
    assert report.style_extractor == report.extractor


def test_different_directories_and_saved_report(tmp_path):
    candidates = _write_lines(tmp_path / "candidate", seed=1, shift=10)
    references = _write_lines(tmp_path / "reference", seed=2)
    report = evaluate(candidates, references, RandomProjectionExtractor(seed=0), kid_resamples=3)
    assert report.fid > 0.0
    assert report.kid_std is not None
    report.save(tmp_path / "reports")
    saved = json.loads((tmp_path / "reports" / "metrics.json").read_text())
    assert saved["fid"] == pytest.approx(report.fid)
    assert "FID" in (tmp_path / "reports" / "metrics.txt").read_text()
    assert list(report.to_frame().columns) == ["FID", "KID", "HWD"]


def test_empty_directory(tmp_path):
    (tmp_path / "empty").mkdir()
    lines = _write_lines(tmp_path / "lines", seed=0)
    with pytest.raises(EmptyDirectoryError):
        evaluate(tmp_path / "empty", lines, RandomProjectionExtractor())
