"""Overlapped-speech simulation with aligned multi-stream unit targets.

A primary utterance receives ``n`` extra sources (other batch utterances or
noise).  Each extra is chunked, energy-scaled relative to the primary and
shifted by a hop-aligned offset.  Target stream 0 holds the primary's units,
stream ``k`` the units of extra ``k`` (silence for noise), and the remaining
streams are all silence.  Every stream is silence-padded to the mixture's
frame count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .audio import HOP, WINDOW, Waveform, energy, frame_count

MIN_CHUNK_ENERGY = 1e-10


class MixtureError(ValueError):
    pass


def keyed_rng(seed: int, *counters: int) -> np.random.Generator:
    """Counter-based stream: the same (seed, counters) always gives the same draws."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, counters)]))


@dataclass(frozen=True)
class MixSpec:
    K: int = 2
    p_mix: float = 1.0
    p_noise: float = 0.1
    r_l_range: tuple = (0.3, 1.0)
    r_e_range: tuple = (0.1, 10.0)
    max_offset: float = 0.5
    hop: int = HOP
    window: int = WINDOW
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise MixtureError("K must be >= 1")
        if not (0.0 <= self.p_mix <= 1.0 and 0.0 <= self.p_noise <= 1.0):
            raise MixtureError("p_mix and p_noise must lie in [0, 1]")
        lo, hi = self.r_l_range
        if not 0.0 < lo <= hi <= 1.0:
            raise MixtureError("r_l_range must satisfy 0 < lo <= hi <= 1")
        lo, hi = self.r_e_range
        if not 0.0 < lo <= hi:
            raise MixtureError("r_e_range must satisfy 0 < lo <= hi")
        if self.max_offset < 0:
            raise MixtureError("max_offset must be non-negative")


@dataclass
class Source:
    samples: np.ndarray
    units: np.ndarray | None  # None for noise
    is_noise: bool
    origin: str = ""


@dataclass
class Positioned:
    """An extra source after chunk/scale/shift."""

    samples: np.ndarray
    offset: int
    units: np.ndarray | None
    is_noise: bool
    r_l: float
    r_e: float
    chunk_start: int
    gain: float
    origin: str = ""


@dataclass
class MixtureSample:
    y_mix: Waveform
    targets: np.ndarray  # (K, T) int64
    provenance: list  # per-stream: "primary" | "extra-speech" | "noise" | "silent"
    n: int
    extras: list = field(default_factory=list)
    clipped: bool = False
    primary_origin: str = ""

    def record(self) -> dict:
        return {
            "primary": self.primary_origin,
            "n": self.n,
            "streams": list(self.provenance),
            "extras": [
                {
                    "source": e.origin,
                    "is_noise": e.is_noise,
                    "r_l": e.r_l,
                    "r_e": e.r_e,
                    "o": e.offset,
                    "chunk_start": e.chunk_start,
                    "n_samples": int(e.samples.size),
                }
                for e in self.extras
            ],
            "clipped": self.clipped,
            "n_samples": len(self.y_mix),
        }


def num_extra_probs(spec: MixSpec) -> np.ndarray:
    if spec.K == 1:
        if spec.p_mix > 0:
            raise MixtureError("K=1 admits no extra sources, p_mix must be 0")
        return np.array([1.0])
    probs = np.full(spec.K, spec.p_mix / (spec.K - 1))
    probs[0] = 1.0 - spec.p_mix
    return probs


def sample_num_extra(spec: MixSpec, rng: np.random.Generator) -> int:
    return int(rng.choice(spec.K, p=num_extra_probs(spec)))


def synth_noise(kind: str, length: int, rng: np.random.Generator) -> np.ndarray:
    """Zero-mean white or pink (-3 dB/octave) noise, peak-normalised to 0.95."""
    if length <= 0:
        raise ValueError("noise length must be positive")
    white = rng.standard_normal(length)
    if kind == "white":
        x = white
    elif kind == "pink":
        spec = np.fft.rfft(white)
        f = np.arange(spec.size, dtype=np.float64)
        f[0] = 1.0
        spec = spec / np.sqrt(f)
        spec[0] = 0.0
        x = np.fft.irfft(spec, n=length)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    x = x - x.mean()
    peak = np.abs(x).max()
    return x * (0.95 / peak) if peak > 0 else x


def pick_sources(batch, primary_index: int, n: int, spec: MixSpec, rng: np.random.Generator,
                 noise_pool=None) -> list[Source]:
    """Choose ``n`` extras: noise with probability p_noise, otherwise distinct other utterances."""
    B = len(batch)
    if B < spec.K:
        raise MixtureError(f"batch of {B} utterances is smaller than K={spec.K}")
    primary = batch[primary_index]
    candidates = [i for i in range(B) if i != primary_index]
    order = rng.permutation(len(candidates))
    used = 0
    out = []
    for _ in range(n):
        if rng.random() < spec.p_noise:
            if noise_pool:
                k = int(rng.integers(len(noise_pool)))
                samples = np.asarray(noise_pool[k], dtype=np.float64)
                origin = f"noise-pool:{k}"
            else:
                kind = "white" if rng.random() < 0.5 else "pink"
                samples = synth_noise(kind, len(primary[0]), rng)
                origin = f"noise:{kind}"
            out.append(Source(samples, None, True, origin))
        else:
            idx = candidates[order[used]]
            used += 1
            item = batch[idx]
            origin = item[2] if len(item) > 2 else f"batch:{idx}"
            out.append(Source(np.asarray(item[0], dtype=np.float64), np.asarray(item[1]), False, origin))
    return out


def draw_params(spec: MixSpec, primary_len: int, rng: np.random.Generator) -> tuple[float, float, int]:
    """Sample (r_l, r_e, o): r_l uniform, r_e log-uniform, o uniform then floored to the hop."""
    r_l = float(rng.uniform(*spec.r_l_range))
    lo, hi = spec.r_e_range
    r_e = float(math.exp(rng.uniform(math.log(lo), math.log(hi))))
    o_max = spec.max_offset * primary_len
    o = int(rng.uniform(0.0, o_max) // spec.hop) * spec.hop if o_max > 0 else 0
    return r_l, r_e, o


def chunk_length(n: int, r_l: float, hop: int) -> int:
    return min(n, hop * math.ceil(math.ceil(r_l * n) / hop))


def chunk_scale_shift(extra: Source, primary: np.ndarray, r_l: float, r_e: float, o: int,
                      rng: np.random.Generator, hop: int = HOP, window: int = WINDOW,
                      chunk_start: int | None = None) -> Positioned:
    """Cut a hop-aligned chunk of ``extra``, scale it to ``r_e`` times the primary's energy, shift by ``o``."""
    if not 0.0 < r_l <= 1.0:
        raise MixtureError("r_l must lie in (0, 1]")
    if r_e <= 0:
        raise MixtureError("r_e must be positive")
    if o < 0 or o % hop:
        raise MixtureError(f"offset {o} is not a non-negative multiple of hop {hop}")
    x = extra.samples
    length = chunk_length(x.size, r_l, hop)
    n_starts = (x.size - length) // hop + 1
    e_primary = energy(primary)
    for _ in range(6):  # first draw plus up to 5 resamples
        start = hop * int(rng.integers(n_starts)) if chunk_start is None else chunk_start
        chunk = x[start : start + length]
        e_chunk = energy(chunk)
        if e_chunk >= MIN_CHUNK_ENERGY:
            break
        if chunk_start is not None:
            raise MixtureError("extra source chunk is silent")
    else:
        raise MixtureError("extra source chunk is silent after 5 resamples")
    gain = math.sqrt(r_e * e_primary / e_chunk)
    units = None
    if extra.units is not None:
        first = start // hop
        units = extra.units[first : first + frame_count(length, window, hop)]
    return Positioned(chunk * gain, o, units, extra.is_noise, r_l, r_e, start, gain, extra.origin)


def mix(primary: np.ndarray, primary_units: np.ndarray, extras: list[Positioned], K: int, sil: int,
        hop: int = HOP, window: int = WINDOW, sample_rate: int = 16000, primary_origin: str = "") -> MixtureSample:
    """Sum the sources and build the K silence-padded target streams."""
    primary = np.asarray(primary, dtype=np.float64)
    if len(extras) > K - 1:
        raise MixtureError(f"{len(extras)} extras do not fit in K={K} streams")
    if len(primary_units) != frame_count(primary.size, window, hop):
        raise MixtureError("primary units do not match its frame count")
    n_total = max([primary.size] + [e.offset + e.samples.size for e in extras])
    y = np.zeros(n_total)
    y[: primary.size] = primary  # assign rather than add so signed zeros survive
    # fixed summation order so the result does not depend on the order of extras
    for e in sorted(extras, key=lambda e: (e.offset, e.samples.size, e.samples.tobytes())):
        y[e.offset : e.offset + e.samples.size] += e.samples
    T = frame_count(n_total, window, hop)
    targets = np.full((K, T), sil, dtype=np.int64)
    targets[0, : len(primary_units)] = primary_units
    provenance = ["primary"] + ["silent"] * (K - 1)
    for k, e in enumerate(extras, start=1):
        if e.is_noise:
            provenance[k] = "noise"
            continue
        provenance[k] = "extra-speech"
        first = e.offset // hop
        targets[k, first : first + len(e.units)] = e.units
    return MixtureSample(
        y_mix=Waveform(y, sample_rate),
        targets=targets,
        provenance=provenance,
        n=len(extras),
        extras=list(extras),
        clipped=bool(np.abs(y).max() > 1.0),
        primary_origin=primary_origin,
    )


def simulate_one(batch, primary_index: int, spec: MixSpec, sil: int, rng: np.random.Generator,
                 noise_pool=None) -> MixtureSample:
    """Full recipe for one primary: draw n, pick sources, chunk/scale/shift, mix.

    ``batch`` items are ``(samples, units)`` or ``(samples, units, origin)``.
    """
    item = batch[primary_index]
    primary = np.asarray(item[0], dtype=np.float64)
    origin = item[2] if len(item) > 2 else f"batch:{primary_index}"
    n = sample_num_extra(spec, rng)
    if n and len(batch) < spec.K:
        raise MixtureError(f"batch of {len(batch)} utterances is smaller than K={spec.K}")
    sources = pick_sources(batch, primary_index, n, spec, rng, noise_pool) if n else []
    extras = []
    for src in sources:
        r_l, r_e, o = draw_params(spec, primary.size, rng)
        extras.append(chunk_scale_shift(src, primary, r_l, r_e, o, rng, spec.hop, spec.window))
    return mix(primary, np.asarray(item[1]), extras, spec.K, sil, spec.hop, spec.window,
               primary_origin=origin)


def simulate_batch(batch, spec: MixSpec, sil: int, *counters: int, noise_pool=None) -> list[MixtureSample]:
    """One mixture per batch utterance, each keyed by (spec.seed, *counters, index)."""
    return [
        simulate_one(batch, i, spec, sil, keyed_rng(spec.seed, *counters, i), noise_pool)
        for i in range(len(batch))
    ]
