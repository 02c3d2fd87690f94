"""k-means codebooks and frame-level unit assignment.

Unit ids are ``0..C-1``; the silence token is ``C``.  ``assign_units`` never
emits it, silence only enters through mixture padding.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import FeatureMatrix


@dataclass
class Codebook:
    centroids: np.ndarray
    feature_meta: str = "mfcc"
    inertia_history: list = field(default_factory=list)

    @property
    def C(self) -> int:
        return self.centroids.shape[0]

    @property
    def sil(self) -> int:
        return self.C

    @property
    def dim(self) -> int:
        return self.centroids.shape[1]


def _sq_dists(x: np.ndarray, c: np.ndarray, chunk: int = 2048) -> np.ndarray:
    # direct differences rather than the |x|^2 - 2xc + |c|^2 expansion so exact ties stay exact
    out = np.empty((x.shape[0], c.shape[0]))
    for lo in range(0, x.shape[0], chunk):
        diff = x[lo : lo + chunk, None, :] - c[None, :, :]
        out[lo : lo + chunk] = np.einsum("tcd,tcd->tc", diff, diff)
    return out


def _as_rows(features) -> np.ndarray:
    if isinstance(features, FeatureMatrix):
        return features.frames
    return np.asarray(features, dtype=np.float64)


def kmeans_plus_plus(x: np.ndarray, C: int, rng: np.random.Generator) -> np.ndarray:
    centers = [x[rng.integers(x.shape[0])]]
    d2 = _sq_dists(x, centers[0][None])[:, 0]
    for _ in range(1, C):
        total = d2.sum()
        if total <= 0:
            raise ValueError(f"features have fewer than {C} distinct points")
        pick = rng.choice(x.shape[0], p=d2 / total)
        centers.append(x[pick])
        d2 = np.minimum(d2, _sq_dists(x, x[pick][None])[:, 0])
    return np.array(centers)


def kmeans_fit(features, C: int, seed: int = 0, max_iter: int = 100, feature_meta: str = "mfcc") -> Codebook:
    x = _as_rows(features)
    if C < 2:
        raise ValueError("need at least 2 clusters")
    if x.shape[0] < C:
        raise ValueError(f"{x.shape[0]} frames is fewer than {C} clusters")
    if np.all(x == x[0]):
        raise ValueError("all feature rows are identical")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plus_plus(x, C, rng)
    history = []
    assign = None
    for _ in range(max_iter):
        d2 = _sq_dists(x, centroids)
        new_assign = d2.argmin(axis=1)
        point_d2 = d2[np.arange(x.shape[0]), new_assign]
        history.append(float(point_d2.sum()))
        if assign is not None and np.array_equal(new_assign, assign):
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=C)
        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, x)
        empty = np.flatnonzero(counts == 0)
        centroids = np.where(counts[:, None] > 0, sums / np.maximum(counts, 1)[:, None], centroids)
        taken = set()
        for k in empty:
            # reseed an empty cluster on the worst-fit point
            order = np.argsort(-point_d2, kind="stable")
            far = next(i for i in order if i not in taken)
            taken.add(far)
            centroids[k] = x[far]
            point_d2[far] = 0.0
    return Codebook(centroids, feature_meta, history)


def assign_units(features, codebook: Codebook) -> np.ndarray:
    """Nearest centroid per frame; ties go to the lowest index."""
    x = _as_rows(features)
    if x.ndim != 2 or x.shape[1] != codebook.dim:
        raise ValueError(f"feature dim {x.shape[-1]} does not match codebook dim {codebook.dim}")
    return _sq_dists(x, codebook.centroids).argmin(axis=1).astype(np.int64)


def inertia(features, codebook: Codebook) -> float:
    x = _as_rows(features)
    return float(_sq_dists(x, codebook.centroids).min(axis=1).sum())


def extract_layer_features(model_params, cfg, samples: np.ndarray, layer: int) -> FeatureMatrix:
    """Unmasked layer-``layer`` (1-based) outputs of the encoder for one waveform."""
    from .model import encode_layers

    if not 1 <= layer <= cfg.L:
        raise ValueError(f"layer {layer} outside 1..{cfg.L}")
    layers = encode_layers(model_params, cfg, np.asarray(samples)[None, :])
    return FeatureMatrix(layers[layer - 1][0].copy(), hop=cfg.hop, window=cfg.receptive_field)


def cluster_purity(units: np.ndarray, truth: np.ndarray) -> float:
    """Fraction of frames whose unit's majority ground-truth class matches their own."""
    units = np.asarray(units)
    truth = np.asarray(truth)
    hits = 0
    for u in np.unique(units):
        sel = truth[units == u]
        hits += np.bincount(sel).max()
    return hits / units.size


# ---------------------------------------------------------------------------
# file formats


def save_codebook(path, cb: Codebook) -> None:
    """uint64 C, uint64 D, then C*D little-endian float64 row-major."""
    arr = np.ascontiguousarray(cb.centroids, dtype="<f8")
    Path(path).write_bytes(struct.pack("<QQ", *arr.shape) + arr.tobytes())


def load_codebook(path, feature_meta: str = "mfcc") -> Codebook:
    buf = Path(path).read_bytes()
    c, d = struct.unpack_from("<QQ", buf)
    if len(buf) != 16 + 8 * c * d:
        raise ValueError(f"{path}: truncated codebook")
    return Codebook(np.frombuffer(buf, dtype="<f8", offset=16).reshape(c, d).astype(np.float64), feature_meta)


def write_units(path, rows) -> None:
    with open(path, "w") as fh:
        for row in rows:
            fh.write(" ".join(str(int(u)) for u in row) + "\n")


def read_units(path) -> list[np.ndarray]:
    with open(path) as fh:
        return [np.array(line.split(), dtype=np.int64) for line in fh.read().splitlines()]
