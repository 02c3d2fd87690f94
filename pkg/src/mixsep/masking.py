"""Span masking of local features with a learned mask embedding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as tn


@dataclass(frozen=True)
class MaskSpec:
    span_len: int = 10
    p_start: float = 0.08
    min_masked: int = 1

    def __post_init__(self):
        if self.span_len < 1:
            raise ValueError("span_len must be >= 1")
        if not 0.0 <= self.p_start < 1.0:
            raise ValueError("p_start must lie in [0, 1)")


def sample_mask(T: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    """Boolean (T,) mask built from independent, possibly overlapping spans."""
    if T < 1:
        raise ValueError("T must be >= 1")
    masked = np.zeros(T, dtype=bool)
    n_starts = max(T - spec.span_len + 1, 0)
    if n_starts:
        starts = np.flatnonzero(rng.random(n_starts) < spec.p_start)
        for s in starts:
            masked[s : s + spec.span_len] = True
    if spec.min_masked >= 1 and masked.sum() < spec.min_masked:
        # forced fallback span, clipped at the end of the utterance
        s = int(rng.integers(T))
        masked[s : s + spec.span_len] = True
    return masked


def sample_masks(B: int, T: int, spec: MaskSpec, rng: np.random.Generator) -> np.ndarray:
    return np.stack([sample_mask(T, spec, rng) for _ in range(B)])


def apply_mask(features, mask: np.ndarray, msk_embedding) -> tn.Tensor:
    """Replace masked rows of ``features`` (..., T, d) by ``msk_embedding`` (d,)."""
    features = tn.as_tensor(features)
    msk_embedding = tn.as_tensor(msk_embedding)
    if msk_embedding.shape != (features.shape[-1],):
        raise tn.ShapeError(
            f"mask embedding has shape {msk_embedding.shape}, features have width {features.shape[-1]}"
        )
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != features.shape[:-1]:
        raise tn.ShapeError(f"mask shape {mask.shape} does not match features {features.shape[:-1]}")
    return tn.where(mask[..., None], msk_embedding, features)
