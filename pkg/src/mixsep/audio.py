"""WAV I/O, framing, energy and MFCC extraction."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

SAMPLE_RATE = 16000
WINDOW = 400
HOP = 320
PRE_EMPHASIS = 0.97
N_FFT = 512


class AudioError(ValueError):
    pass


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioError("waveform must be a non-empty 1-D array")
        if not np.isfinite(self.samples).all():
            raise AudioError("waveform contains non-finite samples")
        if self.sample_rate <= 0:
            raise AudioError("sample_rate must be positive")

    def __len__(self) -> int:
        return self.samples.size


@dataclass
class FeatureMatrix:
    frames: np.ndarray
    hop: int = HOP
    window: int = WINDOW

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def frame_count(n_samples: int, window: int = WINDOW, hop: int = HOP) -> int:
    if window <= 0 or hop <= 0:
        raise ValueError("window and hop must be positive")
    if n_samples < window:
        return 0
    return (n_samples - window) // hop + 1


def load_wav(path) -> Waveform:
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            n = wf.getnframes()
            raw = wf.readframes(n)
    except (wave.Error, EOFError, struct.error) as exc:
        raise AudioError(f"{path}: unreadable WAV ({exc})") from exc
    if channels != 1:
        raise AudioError(f"{path}: non-mono file ({channels} channels)")
    if width != 2:
        raise AudioError(f"{path}: unsupported encoding (sample width {width} bytes, need 16-bit PCM)")
    if len(raw) != 2 * n:
        raise AudioError(f"{path}: truncated file")
    pcm = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    return Waveform(pcm / 32768.0, rate)


def to_pcm16(samples: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767).astype("<i2")


def save_wav(path, y: Waveform) -> None:
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(y.sample_rate)
        wf.writeframes(to_pcm16(y.samples).tobytes())


def energy(y) -> float:
    """Mean square of the samples."""
    x = y.samples if isinstance(y, Waveform) else np.asarray(y, dtype=np.float64)
    if x.size == 0:
        raise AudioError("energy of an empty segment")
    return float(np.mean(x * x))


def frame_signal(x: np.ndarray, window: int, hop: int) -> np.ndarray:
    n = frame_count(x.size, window, hop)
    if n == 0:
        return np.zeros((0, window))
    return np.lib.stride_tricks.sliding_window_view(x, window)[::hop][:n]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


def mel_filterbank(n_mel: int, n_fft: int = N_FFT, sample_rate: int = SAMPLE_RATE,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular filters on the mel scale, shape (n_mel, n_fft // 2 + 1)."""
    fmax = sample_rate / 2 if fmax is None else fmax
    mels = np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mel + 2)
    hz = mel_to_hz(mels)
    bins = np.fft.rfftfreq(n_fft, 1.0 / sample_rate)
    fb = np.zeros((n_mel, bins.size))
    for m in range(n_mel):
        lo, mid, hi = hz[m], hz[m + 1], hz[m + 2]
        up = (bins - lo) / (mid - lo)
        down = (hi - bins) / (hi - mid)
        fb[m] = np.maximum(0.0, np.minimum(up, down))
    return fb


def mfcc(y: Waveform, n_mel: int = 26, n_coef: int = 13, window: int = WINDOW, hop: int = HOP) -> FeatureMatrix:
    """Pre-emphasis, Hann window, |FFT|, mel filter bank, log, DCT-II."""
    if window < hop:
        raise ValueError("window must be >= hop")
    if n_coef > n_mel:
        raise ValueError("n_coef must not exceed n_mel")
    x = y.samples
    if x.size < window:
        raise AudioError(f"signal of {x.size} samples is shorter than the {window}-sample window")
    emph = np.empty_like(x)
    emph[0] = (1.0 - PRE_EMPHASIS) * x[0]  # as if x[-1] == x[0]
    emph[1:] = x[1:] - PRE_EMPHASIS * x[:-1]
    frames = frame_signal(emph, window, hop) * np.hanning(window)
    n_fft = max(N_FFT, int(2 ** np.ceil(np.log2(window))))
    mag = np.abs(np.fft.rfft(frames, n=n_fft, axis=1))
    mel = mag @ mel_filterbank(n_mel, n_fft, y.sample_rate).T
    logmel = np.log(np.maximum(mel, 1e-10))
    coefs = dct(logmel, type=2, axis=1, norm="ortho")[:, :n_coef]
    return FeatureMatrix(coefs, hop=hop, window=window)


# ---------------------------------------------------------------------------
# feature dumps: uint64 T, uint64 D, then T*D little-endian float64 row-major


def save_features(path, feats: FeatureMatrix | np.ndarray) -> None:
    arr = feats.frames if isinstance(feats, FeatureMatrix) else np.asarray(feats)
    arr = np.ascontiguousarray(arr, dtype="<f8")
    Path(path).write_bytes(struct.pack("<QQ", *arr.shape) + arr.tobytes())


def load_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    t, d = struct.unpack_from("<QQ", buf)
    if len(buf) != 16 + 8 * t * d:
        raise AudioError(f"{path}: truncated feature file")
    return np.frombuffer(buf, dtype="<f8", offset=16).reshape(t, d).astype(np.float64)
