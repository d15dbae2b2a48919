import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qppwg.conditioning import (
    AUX_CHANNELS,
    AuxFeatures,
    DilationSchedule,
    FeatureNormalizer,
    conditioning_frames,
    dilation_factors,
    interpolate_f0,
    read_features,
    round_dilations,
    round_half_away,
    scale_f0,
    upsample_to_samples,
    write_features,
)
from qppwg.errors import ConfigurationError, InvariantError, UsageError


def test_interpolation_fills_gaps_linearly_and_holds_ends():
    np.testing.assert_allclose(interpolate_f0([0, 100, 0, 200, 0]), [100, 100, 150, 200, 200])


def test_interpolation_without_voiced_frames_is_an_error():
    with pytest.raises(UsageError):
        interpolate_f0(np.zeros(5))


@settings(max_examples=60, deadline=None)
@given(st.lists(st.one_of(st.just(0.0), st.floats(50, 500)), min_size=1, max_size=40))
def test_interpolated_f0_is_positive_and_keeps_voiced_frames(raw):
    raw = np.array(raw)
    if not np.any(raw > 0):
        return
    cont = interpolate_f0(raw)
    assert np.all(cont > 0)
    np.testing.assert_array_equal(cont[raw > 0], raw[raw > 0])
    assert cont.min() >= raw[raw > 0].min() and cont.max() <= raw.max()


def test_scale_f0_rejects_nonpositive_ratio():
    np.testing.assert_allclose(scale_f0([100.0, 120.0], 0.5), [50.0, 60.0])
    with pytest.raises(UsageError):
        scale_f0([100.0], 0.0)


def test_dilation_factor_reference_values():
    # Fs / (F0 * a) at the ends of the 50-500 Hz analysis range
    np.testing.assert_allclose(dilation_factors([50.0, 500.0], 22050, 4), [110.25, 11.025])


def test_dilation_factor_requires_positive_f0():
    with pytest.raises(InvariantError):
        dilation_factors([100.0, 0.0], 22050)


def test_doubling_f0_halves_every_factor_exactly():
    f0 = np.linspace(60, 240, 50)
    np.testing.assert_array_equal(dilation_factors(scale_f0(f0, 2.0), 22050), dilation_factors(f0, 22050) / 2)


def test_rounding_is_half_away_from_zero_with_floor_one():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, 2.5, -0.5]), [1, 2, 3, -1])
    np.testing.assert_array_equal(round_dilations(np.array([0.1, 0.5, 2.5, 110.25]), 1), [1, 1, 3, 110])
    assert round_dilations(110.25, 2) == 221


@settings(max_examples=60, deadline=None)
@given(st.floats(0.01, 200), st.sampled_from([1, 2, 4, 8, 16, 512]))
def test_rounded_dilation_is_within_half_of_exact(e_t, d):
    rounded = int(round_dilations(e_t, d))
    assert rounded >= 1
    if e_t * d >= 1:
        assert abs(rounded - e_t * d) <= 0.5


def test_schedule_per_layer_dilations():
    sched = DilationSchedule.from_f0(np.full(8, 50.0), 22050, 4.0, [1, 2, 4])
    assert sched.length == 8
    np.testing.assert_array_equal(sched.for_layer(2), np.full(8, 441))
    assert sched.crop(2, 5).length == 3


def test_conditioning_frames_layout():
    feats = AuxFeatures.from_f0([0.0, 120.0, 0.0, 140.0], mcep=np.ones((4, 35)), codeap=-np.ones((4, 2)))
    frames = conditioning_frames(feats)
    assert frames.shape == (4, AUX_CHANNELS)
    np.testing.assert_allclose(frames[:, 0], [120, 120, 130, 140])
    np.testing.assert_array_equal(frames[:, 1], [0, 1, 0, 1])
    assert np.all(frames[:, 2:37] == 1) and np.all(frames[:, 37:] == -1)


def test_features_reject_uv_disagreeing_with_f0():
    with pytest.raises(ConfigurationError):
        AuxFeatures(np.array([100.0, 0.0]), np.array([1.0, 1.0]), np.zeros((2, 35)), np.zeros((2, 2)))


@pytest.mark.parametrize("shape,expected", [((3,), (330,)), ((3, 5), (5, 330)), ((2, 3, 5), (2, 5, 330))])
def test_upsampling_repeats_frames(shape, expected):
    frames = np.arange(np.prod(shape), dtype=float).reshape(shape)
    up = upsample_to_samples(frames, 110)
    assert up.shape == expected
    if len(shape) == 2:
        np.testing.assert_array_equal(up[:, 109], frames[0])
        np.testing.assert_array_equal(up[:, 110], frames[1])


def test_normalizer_standardizes_and_inverts():
    rng = np.random.default_rng(0)
    X = rng.normal(3.0, 2.0, size=(200, AUX_CHANNELS))
    X[:, 1] = 1.0
    norm = FeatureNormalizer().fit(X)
    Z = norm.transform(X)
    np.testing.assert_allclose(Z.mean(axis=0), 0, atol=1e-12)
    assert norm.scale_[1] == 1.0
    np.testing.assert_allclose(norm.inverse_transform(Z), X)
    restored = FeatureNormalizer.from_dict(json.loads(json.dumps(norm.to_dict())))
    np.testing.assert_array_equal(restored.transform(X), Z)
    assert norm.get_params() == {"min_scale": 1e-5}


def test_feature_files_round_trip_exactly(tmp_path):
    rng = np.random.default_rng(1)
    f0 = np.where(rng.random(30) < 0.3, 0.0, rng.uniform(80, 300, 30)).astype(np.float32)
    feats = AuxFeatures.from_f0(f0, mcep=rng.normal(size=(30, 35)).astype(np.float32),
                                codeap=rng.normal(size=(30, 2)).astype(np.float32))
    path = write_features(tmp_path / "a.json", feats, audio="a.wav")
    back, manifest = read_features(path)
    assert manifest["audio"] == "a.wav" and manifest["frame_count"] == 30
    for name in ("f0", "uv", "mcep", "codeap"):
        np.testing.assert_array_equal(getattr(back, name), getattr(feats, name))
    assert (tmp_path / "a.f32").stat().st_size == 30 * AUX_CHANNELS * 4


def test_truncated_feature_file_is_reported(tmp_path):
    path = write_features(tmp_path / "b.json", AuxFeatures.from_f0(np.full(4, 100.0)))
    data = tmp_path / "b.f32"
    data.write_bytes(data.read_bytes()[:-8])
    with pytest.raises(ConfigurationError, match="truncated"):
        read_features(path)
