"""Synthetic speech-like corpus and TSV manifests.

Utterances are word sequences from a small lexicon.  Every letter is
rendered as a short tone complex with letter-specific partials, scaled by a
per-utterance "speaker" factor; words are separated by near-silent gaps.
Per-frame ground-truth segment ids come for free.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import HOP, SAMPLE_RATE, WINDOW, Waveform, frame_count, load_wav, save_wav

LETTERS = "aeiknost"
LEXICON = ("no", "on", "tea", "sat", "kin", "nose", "east", "skit", "ink", "tone")
_PARTIALS = {  # Hz, before the speaker factor
    ch: (260.0 + 110.0 * i, 900.0 + 230.0 * ((3 * i) % 8), 2300.0 + 180.0 * ((5 * i) % 8))
    for i, ch in enumerate(LETTERS)
}
GAP_ID = len(LETTERS)


@dataclass
class Utterance:
    uid: str
    samples: np.ndarray
    transcript: str
    segments: np.ndarray  # per-frame ground-truth id (letter index, GAP_ID for gaps)
    path: str = ""


def render_letter(ch: str, n: int, speaker: float, rng: np.random.Generator, sr: int = SAMPLE_RATE) -> np.ndarray:
    t = np.arange(n) / sr
    x = np.zeros(n)
    for k, f in enumerate(_PARTIALS[ch]):
        x += (0.6 ** k) * np.sin(2 * np.pi * f * speaker * t + rng.uniform(0, 2 * np.pi))
    ramp = min(80, n // 4)
    env = np.ones(n)
    env[:ramp] = np.linspace(0.0, 1.0, ramp)
    env[n - ramp :] = np.linspace(1.0, 0.0, ramp)
    return x * env


def synth_utterance(uid: str, rng: np.random.Generator, n_words=(3, 5), letter_frames=(4, 7),
                    gap_frames=(2, 4), hop: int = HOP, window: int = WINDOW) -> Utterance:
    words = [LEXICON[i] for i in rng.integers(len(LEXICON), size=rng.integers(n_words[0], n_words[1] + 1))]
    speaker = rng.uniform(0.92, 1.08)
    gain = rng.uniform(0.25, 0.5)
    pieces, labels = [], []

    def gap():
        n = hop * int(rng.integers(gap_frames[0], gap_frames[1] + 1))
        pieces.append(0.003 * rng.standard_normal(n))
        labels.append((n, GAP_ID))

    gap()
    for word in words:
        for ch in word:
            n = hop * int(rng.integers(letter_frames[0], letter_frames[1] + 1))
            pieces.append(gain * render_letter(ch, n, speaker, rng))
            labels.append((n, LETTERS.index(ch)))
        gap()
    pieces.append(np.zeros(window - hop))  # the last hop gets a full analysis window
    samples = np.concatenate(pieces)
    bounds = np.cumsum([0] + [n for n, _ in labels])
    ids = np.array([lab for _, lab in labels])
    centres = np.arange(frame_count(samples.size, window, hop)) * hop + window // 2
    seg = ids[np.clip(np.searchsorted(bounds, centres, side="right") - 1, 0, ids.size - 1)]
    return Utterance(uid, samples, " ".join(words), seg)


def synth_corpus(n_utts: int | None = None, seconds: float | None = None, seed: int = 0,
                 prefix: str = "utt") -> list[Utterance]:
    """Either a fixed number of utterances or enough to fill ``seconds`` of audio."""
    if (n_utts is None) == (seconds is None):
        raise ValueError("give exactly one of n_utts or seconds")
    rng = np.random.default_rng(seed)
    out, total = [], 0
    while (n_utts is not None and len(out) < n_utts) or (seconds is not None and total < seconds * SAMPLE_RATE):
        u = synth_utterance(f"{prefix}{len(out):04d}", rng)
        out.append(u)
        total += u.samples.size
    return out


# ---------------------------------------------------------------------------
# manifests: TSV with header ``id  path  n_samples  transcript``

MANIFEST_FIELDS = ("id", "path", "n_samples", "transcript")


def write_manifest(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r["id"], r["path"], r["n_samples"], r.get("transcript", "")])


def read_manifest(path, verify: bool = True) -> list[dict]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader)
        if tuple(header[:3]) != MANIFEST_FIELDS[:3]:
            raise ValueError(f"{path}: bad manifest header {header}")
        rows = []
        for rec in reader:
            row = dict(zip(header, rec))
            row["n_samples"] = int(row["n_samples"])
            row.setdefault("transcript", "")
            rows.append(row)
    ids = [r["id"] for r in rows]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate utterance ids")
    if verify:
        for r in rows:
            n = len(load_wav(resolve(path, r["path"])))
            if n != r["n_samples"]:
                raise ValueError(f"{path}: {r['id']} has {n} samples on disk, manifest says {r['n_samples']}")
    return rows


def resolve(manifest_path, audio_path) -> Path:
    p = Path(audio_path)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def write_corpus(utts: list[Utterance], out_dir) -> Path:
    """WAV files plus ``manifest.tsv`` and per-frame ``segments.txt`` in ``out_dir``."""
    out = Path(out_dir)
    (out / "wav").mkdir(parents=True, exist_ok=True)
    rows = []
    with open(out / "segments.txt", "w") as seg_fh:
        for u in utts:
            rel = f"wav/{u.uid}.wav"
            save_wav(out / rel, Waveform(u.samples))
            rows.append({"id": u.uid, "path": rel, "n_samples": u.samples.size, "transcript": u.transcript})
            seg_fh.write(" ".join(map(str, u.segments)) + "\n")
    write_manifest(out / "manifest.tsv", rows)
    return out / "manifest.tsv"


def load_corpus(manifest_path) -> list[Utterance]:
    rows = read_manifest(manifest_path)
    seg_path = Path(manifest_path).parent / "segments.txt"
    segs = None
    if seg_path.exists():
        segs = [np.array(line.split(), dtype=np.int64) for line in seg_path.read_text().splitlines()]
    out = []
    for i, r in enumerate(rows):
        p = resolve(manifest_path, r["path"])
        seg = segs[i] if segs is not None else np.zeros(0, dtype=np.int64)
        out.append(Utterance(r["id"], load_wav(p).samples, r["transcript"], seg, str(p)))
    return out
