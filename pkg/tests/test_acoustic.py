import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unipunc import acoustic as A
from unipunc.acoustic import AcousticFeatures
from unipunc.tensor import InputTooShortError


@pytest.fixture
def params(rng):
    p = {}
    A.init_acoustic(p, feat_dim=6, channels=8, d=16, kernel=15, ve_len=5, rng=rng)
    return p


class TestFeatureFile:
    def test_declared_shape(self, tmp_path):
        frames = np.arange(80, dtype=float).reshape(10, 8)
        A.write_features(tmp_path / "f.upft", AcousticFeatures(frames, 50.0))
        loaded = A.load_features(tmp_path / "f.upft")
        assert loaded.frames.shape == (10, 8)
        assert loaded.frame_rate_hz == 50.0

    def test_byte_layout(self, tmp_path):
        A.write_features(tmp_path / "f.upft", AcousticFeatures([[1.5, -2.0]], 100.0))
        raw = (tmp_path / "f.upft").read_bytes()
        assert raw[:4] == b"UPFT"
        assert struct.unpack("<IIIf", raw[4:20]) == (1, 1, 2, 100.0)
        assert struct.unpack("<2f", raw[20:]) == (1.5, -2.0)

    def test_roundtrip_bitwise(self, tmp_path, rng):
        frames = rng.normal(size=(13, 5)).astype(np.float32).astype(np.float64)
        A.write_features(tmp_path / "f.upft", AcousticFeatures(frames, 100.0))
        assert A.load_features(tmp_path / "f.upft").frames.tobytes() == frames.tobytes()

    def test_truncated_payload(self, tmp_path):
        A.write_features(tmp_path / "f.upft", AcousticFeatures(np.ones((10, 8)), 100.0))
        raw = (tmp_path / "f.upft").read_bytes()
        (tmp_path / "f.upft").write_bytes(raw[:-4])
        with pytest.raises(A.PayloadLengthError):
            A.load_features(tmp_path / "f.upft")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "f.upft").write_bytes(b"NOPE" + bytes(16))
        with pytest.raises(A.BadMagicError):
            A.load_features(tmp_path / "f.upft")

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            A.load_features(tmp_path / "nope.upft")


class TestLogmel:
    def test_silence_hits_floor(self):
        feats = A.logmel(np.zeros(4000), 16000, n_mels=20)
        np.testing.assert_array_equal(feats.frames, np.log(1e-10))

    def test_frame_count(self):
        feats = A.logmel(np.zeros(16000), 16000, n_mels=40, win_ms=25, hop_ms=10)
        assert feats.frames.shape == ((16000 - 400) // 160 + 1, 40) == (98, 40)
        assert feats.frame_rate_hz == 100.0

    def test_sine_energy_in_band(self):
        sr = 16000
        t = np.arange(sr) / sr
        feats = A.logmel(np.sin(2 * np.pi * 440 * t), sr, n_mels=40)
        n_fft = 512
        bank = A.mel_filterbank(40, n_fft, sr)
        bin_440 = int(round(440 * n_fft / sr))
        covering = np.flatnonzero(bank[:, bin_440] > 0)
        mean = feats.frames.mean(axis=0)
        off_band = np.setdiff1d(np.arange(40), np.arange(covering.min() - 2, covering.max() + 3))
        assert mean[covering].max() == mean.max()
        assert mean[covering].max() > mean[off_band].max() + 5.0

    def test_too_short(self):
        with pytest.raises(ValueError, match="window"):
            A.logmel(np.zeros(100), 16000)


class TestDownsample:
    def test_minimum_length(self, params, rng):
        out = A.downsample(AcousticFeatures(rng.normal(size=(85, 6)), 100.0), params)
        assert out.shape == (1, 16)

    def test_500_frames(self, params, rng):
        assert A.downsample_length(500) == 17
        out = A.downsample(AcousticFeatures(rng.normal(size=(500, 6)), 100.0), params)
        assert out.shape == (17, 16)

    def test_too_short_recommends_minimum(self, params, rng):
        with pytest.raises(InputTooShortError, match="at least 85"):
            A.downsample(AcousticFeatures(rng.normal(size=(84, 6)), 100.0), params)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(85, 5000))
    def test_length_property(self, m):
        p = {}
        A.init_acoustic(p, 2, 3, 4, 15, 5, np.random.default_rng(0))
        out = A.downsample(AcousticFeatures(np.ones((m, 2)), 100.0), p)
        assert out.shape == ((((m - 15) // 5 + 1) - 15) // 5 + 1, 4)


class TestSubstitution:
    def test_audio_free_returns_virtual_table(self, params):
        out = A.acoustic_or_virtual(False, None, params)
        assert out is params["acoustic.virtual"]
        assert out.shape == (5, 16)

    def test_audio_path(self, params, rng):
        out = A.acoustic_or_virtual(True, AcousticFeatures(rng.normal(size=(500, 6)), 100.0), params)
        assert out.shape == (17, 16)

    def test_consistency_errors(self, params, rng):
        with pytest.raises(A.AudioConsistencyError):
            A.acoustic_or_virtual(True, None, params)
        with pytest.raises(A.AudioConsistencyError):
            A.acoustic_or_virtual(False, AcousticFeatures(rng.normal(size=(90, 6)), 100.0), params)

    def test_shared_across_samples(self, params):
        a = A.acoustic_or_virtual(False, None, params)
        b = A.acoustic_or_virtual(False, None, params)
        assert a.data.tobytes() == b.data.tobytes()
