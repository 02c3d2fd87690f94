import wave

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixsep.audio import (AudioError, FeatureMatrix, Waveform, energy, frame_count, load_features, load_wav,
                          mel_filterbank, mfcc, save_features, save_wav)


@pytest.mark.parametrize("n,expected", [(16000, 49), (399, 0), (400, 1), (719, 1), (720, 2), (0, 0)])
def test_frame_count(n, expected):
    assert frame_count(n, 400, 320) == expected


def test_frame_count_monotone():
    counts = [frame_count(n) for n in range(0, 5000, 7)]
    assert all(a <= b for a, b in zip(counts, counts[1:]))


def test_frame_rate_is_50_per_second():
    assert frame_count(16000 * 10 + 80) == 500


def test_wav_silence(tmp_path):
    save_wav(tmp_path / "s.wav", Waveform(np.zeros(16000)))
    y = load_wav(tmp_path / "s.wav")
    assert len(y) == 16000 and not y.samples.any() and y.sample_rate == 16000


def test_wav_round_trip_quantization(tmp_path, rng):
    x = rng.uniform(-0.99, 0.99, 5000)
    save_wav(tmp_path / "x.wav", Waveform(x))
    assert np.abs(load_wav(tmp_path / "x.wav").samples - x).max() <= 1 / 32768


def _write_raw(path, channels=1, width=2, frames=b"\x00\x00" * 10):
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(channels)
        wf.setsampwidth(width)
        wf.setframerate(16000)
        wf.writeframes(frames)


def test_wav_rejections(tmp_path):
    _write_raw(tmp_path / "st.wav", channels=2, frames=b"\x00\x00" * 20)
    with pytest.raises(AudioError, match="non-mono"):
        load_wav(tmp_path / "st.wav")
    _write_raw(tmp_path / "u8.wav", width=1, frames=b"\x80" * 10)
    with pytest.raises(AudioError, match="unsupported encoding"):
        load_wav(tmp_path / "u8.wav")
    _write_raw(tmp_path / "ok.wav", frames=b"\x01\x00" * 100)
    raw = (tmp_path / "ok.wav").read_bytes()
    (tmp_path / "cut.wav").write_bytes(raw[:-51])
    with pytest.raises(AudioError):
        load_wav(tmp_path / "cut.wav")


def test_waveform_validation():
    with pytest.raises(AudioError):
        Waveform(np.zeros(0))
    with pytest.raises(AudioError):
        Waveform(np.array([0.0, np.inf]))
    with pytest.raises(AudioError):
        Waveform(np.zeros(3), sample_rate=0)


def test_energy_examples():
    assert energy(np.zeros(10)) == 0.0
    assert energy(np.full(7, 0.5)) == 0.25
    t = np.arange(16000) / 16000
    assert energy(np.sin(2 * np.pi * 100 * t)) == pytest.approx(0.5, abs=1e-6)
    with pytest.raises(AudioError):
        energy(np.zeros(0))


@given(st.floats(-100, 100), st.integers(0, 2**31 - 1))
def test_energy_scales_quadratically(a, seed):
    y = np.random.default_rng(seed).standard_normal(257)
    e = energy(y)
    assert energy(a * y) == pytest.approx(a * a * e, rel=1e-9, abs=1e-300)


def mfcc_reference(x, n_mel=26, n_coef=13, window=400, hop=320, sr=16000, n_fft=512):
    """Loop-based MFCC with a hand-written DCT-II."""
    emph = np.concatenate([[0.03 * x[0]], x[1:] - 0.97 * x[:-1]])
    n = np.arange(window)
    hann = 0.5 - 0.5 * np.cos(2 * np.pi * n / (window - 1))
    fb = mel_filterbank(n_mel, n_fft, sr)
    out = []
    for t in range((len(x) - window) // hop + 1):
        frame = emph[t * hop : t * hop + window] * hann
        spec = np.abs(np.fft.rfft(frame, n_fft))
        logmel = np.log(np.maximum(fb @ spec, 1e-10))
        row = []
        for k in range(n_coef):
            c = np.sum(logmel * np.cos(np.pi * k * (2 * np.arange(n_mel) + 1) / (2 * n_mel)))
            row.append(c * np.sqrt((1 if k == 0 else 2) / n_mel))
        out.append(row)
    return np.array(out)


def test_mfcc_matches_loop_reference(rng):
    x = rng.uniform(-0.5, 0.5, 3000)
    np.testing.assert_allclose(mfcc(Waveform(x)).frames, mfcc_reference(x), atol=1e-9)


def test_mfcc_shapes_and_errors():
    f = mfcc(Waveform(np.random.default_rng(0).standard_normal(16000) * 0.1))
    assert f.frames.shape == (49, 13) and f.hop == 320 and f.window == 400
    with pytest.raises(AudioError):
        mfcc(Waveform(np.zeros(399)))
    with pytest.raises(ValueError):
        mfcc(Waveform(np.zeros(1000)), n_mel=10, n_coef=11)
    with pytest.raises(ValueError):
        mfcc(Waveform(np.zeros(1000)), window=200, hop=300)


def test_mfcc_constant_input():
    f = mfcc(Waveform(np.full(8000, 0.3))).frames
    assert f.var(axis=0).max() < 1e-10


def test_mfcc_deterministic(rng):
    y = Waveform(rng.standard_normal(4000) * 0.1)
    assert mfcc(y).frames.tobytes() == mfcc(y).frames.tobytes()


def test_mel_filterbank_shape_and_peaks():
    fb = mel_filterbank(26)
    assert fb.shape == (26, 257)
    assert np.all(fb >= 0) and np.all(fb.max(axis=1) > 0.5) and np.all(fb.max(axis=1) <= 1.0)
    assert np.all(np.diff(fb.argmax(axis=1)) >= 0)


def test_feature_dump_round_trip(tmp_path, rng):
    f = FeatureMatrix(rng.standard_normal((7, 13)))
    save_features(tmp_path / "f.bin", f)
    back = load_features(tmp_path / "f.bin")
    assert back.tobytes() == f.frames.tobytes()
    (tmp_path / "g.bin").write_bytes((tmp_path / "f.bin").read_bytes()[:-8])
    with pytest.raises(AudioError):
        load_features(tmp_path / "g.bin")


@settings(max_examples=30)
@given(st.integers(0, 3000), st.integers(1, 500), st.integers(1, 500))
def test_frame_count_formula(n, window, hop):
    expected = 0 if n < window else (n - window) // hop + 1
    assert frame_count(n, window, hop) == expected
