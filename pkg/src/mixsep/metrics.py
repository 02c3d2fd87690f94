"""Word error rates and frame-level diarization error rate."""

from __future__ import annotations

import itertools

import numpy as np


def edit_distance(ref: list, hyp: list) -> int:
    """Levenshtein distance with unit substitution/insertion/deletion costs."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


def wer(hyp: str, ref: str) -> float:
    ref_words = ref.split()
    return edit_distance(ref_words, hyp.split()) / max(1, len(ref_words))


def pit_wer_details(hyps, refs):
    """Best stream permutation: returns (wer, perm, per-stream errors) with ``hyps[perm[k]]`` scored against ``refs[k]``."""
    if len(hyps) != len(refs):
        raise ValueError("need as many hypothesis as reference streams")
    K = len(refs)
    ref_words = [r.split() for r in refs]
    hyp_words = [h.split() for h in hyps]
    dist = [[edit_distance(ref_words[k], hyp_words[j]) for j in range(K)] for k in range(K)]
    best = None
    for perm in itertools.permutations(range(K)):
        total = sum(dist[k][perm[k]] for k in range(K))
        if best is None or total < best[0]:
            best = (total, perm)
    total, perm = best
    n_ref = sum(len(w) for w in ref_words)
    return total / max(1, n_ref), perm, [dist[k][perm[k]] for k in range(K)]


def pit_wer(hyps, refs) -> float:
    """Total edit distance under the best stream permutation over total reference words."""
    return pit_wer_details(hyps, refs)[0]


def der_components(hyp: np.ndarray, ref: np.ndarray) -> dict:
    """Frame-level miss / false alarm / confusion counts for aligned speaker columns."""
    hyp = np.asarray(hyp, dtype=bool)
    ref = np.asarray(ref, dtype=bool)
    if hyp.shape != ref.shape:
        raise ValueError(f"hypothesis shape {hyp.shape} != reference {ref.shape}")
    n_ref = ref.sum(axis=1)
    n_hyp = hyp.sum(axis=1)
    n_correct = (ref & hyp).sum(axis=1)
    return {
        "miss": int(np.maximum(n_ref - n_hyp, 0).sum()),
        "false_alarm": int(np.maximum(n_hyp - n_ref, 0).sum()),
        "confusion": int((np.minimum(n_ref, n_hyp) - n_correct).sum()),
        "ref_speech": int(n_ref.sum()),
    }


def der_details(hyp, ref, threshold: float = 0.5) -> dict:
    """DER under the speaker permutation of ``hyp`` that minimises it; no collar."""
    hyp = np.asarray(hyp)
    if hyp.dtype != bool:
        hyp = hyp > threshold
    ref = np.asarray(ref, dtype=bool)
    if ref.sum() == 0:
        raise ValueError("reference contains no speech")
    best = None
    for perm in itertools.permutations(range(hyp.shape[1])):
        comp = der_components(hyp[:, list(perm)], ref)
        errors = comp["miss"] + comp["false_alarm"] + comp["confusion"]
        if best is None or errors < best[0]:
            best = (errors, perm, comp)
    errors, perm, comp = best
    return {**comp, "der": errors / comp["ref_speech"], "perm": list(perm)}


def der(hyp, ref, threshold: float = 0.5) -> float:
    return der_details(hyp, ref, threshold)["der"]
