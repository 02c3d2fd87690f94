"""Downstream heads: PIT-CTC fine-tuning, CTC decoding and the diarization probe."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as tn
from .model import (ModelConfig, context_names, contextual_encode, encode_layers, frozen, head_names,
                    init_heads, local_encode, project_heads)
from .objectives import BLANK, CHAR_VOCAB, batch_pit_ctc_loss, decode_ids, pit_bce_loss
from .optim import ParamStore, adam_step

CTC_PREFIX = "ctc"


# ---------------------------------------------------------------------------
# multi-speaker ASR


def attach_ctc_heads(params: ParamStore, cfg: ModelConfig, seed: int = 0) -> ParamStore:
    """Copy of the pretrained store with the unit heads swapped for fresh character heads."""
    out = ParamStore()
    for name, t in params.items():
        if not name.startswith("head"):
            out.add(name, t.data.copy())
    init_heads(out, cfg, CHAR_VOCAB, np.random.default_rng(seed), prefix=CTC_PREFIX)
    return out


def finetune_names(cfg: ModelConfig) -> list[str]:
    """Everything except the local feature extractor and the unused mask embedding."""
    return context_names(cfg) + head_names(cfg, CTC_PREFIX)


def asr_forward(params, cfg: ModelConfig, y: np.ndarray) -> tn.Tensor:
    """Unmasked forward with the local extractor treated as constant: (B, K, T, 29)."""
    x = local_encode(frozen(params), cfg, y)
    layers = contextual_encode(params, cfg, x)
    return project_heads(params, cfg, layers[-1], prefix=CTC_PREFIX)


def finetune_step(params: ParamStore, cfg: ModelConfig, y: np.ndarray, transcripts, lr: float) -> float:
    """One PIT-CTC update.  ``transcripts`` is B lists of K id sequences."""
    if f"{CTC_PREFIX}0.w" not in params:
        raise KeyError("character heads are not attached")
    log_posts = asr_forward(params, cfg, y)
    loss, _ = batch_pit_ctc_loss(log_posts, transcripts)
    names = finetune_names(cfg)
    grads = tn.backward(loss, params.subset(names))
    adam_step(params, grads, lr, names=names)
    return loss.item()


def greedy_ctc_decode(log_post) -> str:
    """Frame argmax, collapse repeats, drop blanks."""
    lp = log_post.data if isinstance(log_post, tn.Tensor) else np.asarray(log_post)
    best = lp.argmax(axis=-1)
    ids = [int(k) for i, k in enumerate(best) if k != BLANK and (i == 0 or k != best[i - 1])]
    return decode_ids(ids)


def prefix_beam_decode(log_post, beam: int = 8) -> str:
    """LM-free CTC prefix beam search."""
    if not 1 <= beam <= 16:
        raise ValueError("beam width must lie in 1..16")
    lp = log_post.data if isinstance(log_post, tn.Tensor) else np.asarray(log_post)
    ninf = -math.inf
    beams = {(): (0.0, ninf)}  # prefix -> (log p ending in blank, log p ending in symbol)
    for t in range(lp.shape[0]):
        row = lp[t]
        nxt: dict[tuple, list] = {}

        def acc(prefix, pb, pnb):
            cur = nxt.setdefault(prefix, [ninf, ninf])
            cur[0] = np.logaddexp(cur[0], pb)
            cur[1] = np.logaddexp(cur[1], pnb)

        for prefix, (pb, pnb) in beams.items():
            total = np.logaddexp(pb, pnb)
            acc(prefix, total + row[BLANK], ninf)
            for k in range(1, lp.shape[1]):
                p = row[k]
                if prefix and prefix[-1] == k:
                    acc(prefix, ninf, pnb + p)
                    acc(prefix + (k,), ninf, pb + p)
                else:
                    acc(prefix + (k,), ninf, total + p)
        ranked = sorted(nxt.items(), key=lambda kv: -np.logaddexp(*kv[1]))
        beams = {k: tuple(v) for k, v in ranked[:beam]}
    best = max(beams.items(), key=lambda kv: np.logaddexp(*kv[1]))[0]
    return decode_ids(best)


# ---------------------------------------------------------------------------
# diarization probe


@dataclass(frozen=True)
class DiarProbeConfig:
    n_layers: int
    d: int
    recurrent_width: int = 64
    n_speakers: int = 2


def init_probe(cfg: DiarProbeConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    H = cfg.recurrent_width
    store = ParamStore()
    store.add("layer_logits", np.zeros(cfg.n_layers))
    store.add("lstm.wx", rng.normal(0.0, 1.0 / math.sqrt(cfg.d), (cfg.d, 4 * H)))
    store.add("lstm.wh", rng.normal(0.0, 1.0 / math.sqrt(H), (H, 4 * H)))
    bias = np.zeros(4 * H)
    bias[H : 2 * H] = 1.0  # forget gate
    store.add("lstm.b", bias)
    store.add("out.w", rng.normal(0.0, 1.0 / math.sqrt(H), (H, cfg.n_speakers)))
    store.add("out.b", np.zeros(cfg.n_speakers))
    return store


def layer_weights(probe) -> np.ndarray:
    return tn.softmax(probe["layer_logits"]).data


def weighted_layers(layer_feats, probe) -> tn.Tensor:
    """Softmax-weighted sum over the leading layer axis of (L, ..., d) features."""
    feats = tn.stack(layer_feats) if isinstance(layer_feats, (list, tuple)) else tn.as_tensor(layer_feats)
    w = tn.softmax(probe["layer_logits"])
    if w.shape[0] != feats.shape[0]:
        raise tn.ShapeError(f"probe expects {w.shape[0]} layers, got {feats.shape[0]}")
    flat = tn.reshape(feats, (feats.shape[0], -1))
    mixed = tn.matmul(tn.reshape(w, (1, -1)), flat)
    return tn.reshape(mixed, feats.shape[1:])


def lstm(x: tn.Tensor, probe) -> tn.Tensor:
    """Single-layer LSTM over (B, T, d) -> (B, T, H)."""
    B, T, _ = x.shape
    H = probe["lstm.wh"].shape[0]
    gates_x = tn.add(tn.matmul(x, probe["lstm.wx"]), probe["lstm.b"])
    h = tn.Tensor(np.zeros((B, H)))
    c = tn.Tensor(np.zeros((B, H)))
    outs = []
    for t in range(T):
        g = tn.add(gates_x[:, t], tn.matmul(h, probe["lstm.wh"]))
        i = tn.sigmoid(g[:, :H])
        f = tn.sigmoid(g[:, H : 2 * H])
        o = tn.sigmoid(g[:, 2 * H : 3 * H])
        u = tn.tanh(g[:, 3 * H :])
        c = tn.add(tn.mul(f, c), tn.mul(i, u))
        h = tn.mul(o, tn.tanh(c))
        outs.append(h)
    return tn.stack(outs, axis=1)


def diar_probe_forward(layer_feats, probe) -> tn.Tensor:
    """(L, B, T, d) or (L, T, d) layer outputs -> activity probabilities (B, T, S) or (T, S).

    ``layer_feats`` is an array, a Tensor, or a list of per-layer Tensors.
    """
    feats = tn.stack(layer_feats) if isinstance(layer_feats, (list, tuple)) else tn.as_tensor(layer_feats)
    single = feats.ndim == 3
    if single:
        feats = tn.reshape(feats, (feats.shape[0], 1) + feats.shape[1:])
    x = weighted_layers(feats, probe)
    h = lstm(x, probe)
    p = tn.sigmoid(tn.linear(h, probe["out.w"], probe["out.b"]))
    return p[0] if single else p


def probe_features(params, cfg: ModelConfig, y: np.ndarray) -> np.ndarray:
    """Frozen, unmasked encoder layers as an (L, B, T, d) array."""
    return np.stack(encode_layers(params, cfg, y))


def probe_loss(probe, feats: np.ndarray, refs: np.ndarray):
    """Mean PIT-BCE over a batch; ``feats`` (L, B, T, d), ``refs`` (B, T, S)."""
    probs = diar_probe_forward(feats, probe)
    B = refs.shape[0]
    terms, perms = [], []
    for b in range(B):
        loss, a, _ = pit_bce_loss(probs[b], refs[b])
        terms.append(loss)
        perms.append(a)
    return tn.scale(tn.sum(tn.stack(terms)), 1.0 / B), perms, probs.data


def probe_step(probe: ParamStore, feats: np.ndarray, refs: np.ndarray, lr: float) -> float:
    loss, _, _ = probe_loss(probe, feats, refs)
    adam_step(probe, tn.backward(loss, probe), lr)
    return loss.item()


def activity_from_targets(targets: np.ndarray, sil: int) -> np.ndarray:
    """(K, T) unit streams -> (T, K) boolean activity: active iff not silence."""
    return (np.asarray(targets) != sil).T
