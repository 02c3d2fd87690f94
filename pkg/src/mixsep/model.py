"""Encoder: strided conv front end, pre-LN transformer, and K prediction heads.

All functions take a :class:`~mixsep.optim.ParamStore` plus a
:class:`ModelConfig` and operate on equal-length batches ``(B, n_samples)``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import tensor as tn
from .audio import frame_count
from .masking import apply_mask
from .optim import ParamStore

DEFAULT_CONV = ((32, 10, 5), (32, 7, 4), (32, 7, 4), (32, 2, 2), (32, 2, 2))


@dataclass(frozen=True)
class ModelConfig:
    conv_spec: tuple = DEFAULT_CONV
    d: int = 64
    L: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    K: int = 2
    vocab: int = 51  # C + 1 (units + silence)
    max_frames: int = 512

    def __post_init__(self):
        object.__setattr__(self, "conv_spec", tuple(tuple(int(v) for v in c) for c in self.conv_spec))
        if self.d % self.n_heads:
            raise ValueError("d must be divisible by n_heads")
        if self.K < 1 or self.L < 1:
            raise ValueError("K and L must be >= 1")

    @property
    def hop(self) -> int:
        return math.prod(c[2] for c in self.conv_spec)

    @property
    def receptive_field(self) -> int:
        rf, jump = 1, 1
        for _, k, s in self.conv_spec:
            rf += (k - 1) * jump
            jump *= s
        return rf

    def n_frames(self, n_samples: int) -> int:
        return frame_count(n_samples, self.receptive_field, self.hop)

    def to_json(self) -> str:
        return json.dumps(asdict(self))

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        return cls(**json.loads(text))


# paper-scale reference points, for documentation only
BASE_LIKE = dict(d=768, L=12, n_heads=12, ffn_mult=4, K=5, vocab=501)
LARGE_LIKE = dict(d=1024, L=24, n_heads=16, ffn_mult=4, K=3, vocab=501)


@dataclass
class EncoderOutput:
    local: tn.Tensor  # (B, T, d), before masking
    layers: list  # L tensors (B, T, d)
    log_posts: tn.Tensor  # (B, K, T, vocab)
    attention: list = field(default_factory=list)


def local_names(cfg: ModelConfig) -> list[str]:
    names = []
    for i in range(len(cfg.conv_spec)):
        names += [f"conv{i}.w", f"conv{i}.b"]
    return names + ["local_ln.g", "local_ln.b", "local_proj.w", "local_proj.b"]


def context_names(cfg: ModelConfig) -> list[str]:
    names = ["pos"]
    for layer in range(cfg.L):
        p = f"layer{layer}."
        names += [p + n for n in ("ln1.g", "ln1.b", "wqkv", "bqkv", "wo", "bo",
                                  "ln2.g", "ln2.b", "w1", "b1", "w2", "b2")]
    return names + ["final_ln.g", "final_ln.b"]


def head_names(cfg: ModelConfig, prefix: str = "head") -> list[str]:
    return [f"{prefix}{j}.{n}" for j in range(cfg.K) for n in ("w", "b")]


def init_heads(store: ParamStore, cfg: ModelConfig, vocab: int, rng: np.random.Generator,
               prefix: str = "head", std: float = 0.02) -> None:
    for j in range(cfg.K):
        store.add(f"{prefix}{j}.w", rng.normal(0.0, std, (cfg.d, vocab)))
        store.add(f"{prefix}{j}.b", np.zeros(vocab))


def sinusoid_table(n: int, d: int) -> np.ndarray:
    """Sine/cosine table used as the starting point of the learned positions."""
    pos = np.arange(n)[:, None]
    freq = np.exp(-math.log(10000.0) * (np.arange(0, d, 2) / d))
    table = np.zeros((n, d))
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq[: d // 2])
    return table


def init_params(cfg: ModelConfig, seed: int = 0) -> ParamStore:
    rng = np.random.default_rng(seed)
    store = ParamStore()
    cin = 1
    for i, (cout, k, _) in enumerate(cfg.conv_spec):
        store.add(f"conv{i}.w", rng.normal(0.0, math.sqrt(2.0 / (cin * k)), (cout, cin, k)))
        store.add(f"conv{i}.b", np.zeros(cout))
        cin = cout
    d = cfg.d
    store.add("local_ln.g", np.ones(cin))
    store.add("local_ln.b", np.zeros(cin))
    store.add("local_proj.w", rng.normal(0.0, 1.0 / math.sqrt(cin), (cin, d)))
    store.add("local_proj.b", np.zeros(d))
    store.add("mask_emb", rng.uniform(0.0, 1.0, d))
    store.add("pos", sinusoid_table(cfg.max_frames, d))
    h = cfg.ffn_mult * d
    for layer in range(cfg.L):
        p = f"layer{layer}."
        store.add(p + "ln1.g", np.ones(d))
        store.add(p + "ln1.b", np.zeros(d))
        store.add(p + "wqkv", rng.normal(0.0, 1.0 / math.sqrt(d), (d, 3 * d)))
        store.add(p + "bqkv", np.zeros(3 * d))
        store.add(p + "wo", rng.normal(0.0, 1.0 / math.sqrt(d) / math.sqrt(2 * cfg.L), (d, d)))
        store.add(p + "bo", np.zeros(d))
        store.add(p + "ln2.g", np.ones(d))
        store.add(p + "ln2.b", np.zeros(d))
        store.add(p + "w1", rng.normal(0.0, 1.0 / math.sqrt(d), (d, h)))
        store.add(p + "b1", np.zeros(h))
        store.add(p + "w2", rng.normal(0.0, 1.0 / math.sqrt(h) / math.sqrt(2 * cfg.L), (h, d)))
        store.add(p + "b2", np.zeros(d))
    store.add("final_ln.g", np.ones(d))
    store.add("final_ln.b", np.zeros(d))
    init_heads(store, cfg, cfg.vocab, rng)
    return store


def _standardize(y: np.ndarray) -> np.ndarray:
    mu = y.mean(axis=-1, keepdims=True)
    sd = y.std(axis=-1, keepdims=True)
    return (y - mu) / np.maximum(sd, 1e-5)


def local_encode(params, cfg: ModelConfig, y: np.ndarray) -> tn.Tensor:
    """Waveforms (B, n) -> local features (B, T, d)."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if y.shape[1] < cfg.receptive_field:
        raise ValueError(f"input of {y.shape[1]} samples is shorter than the receptive field {cfg.receptive_field}")
    h = tn.Tensor(_standardize(y)[:, None, :])
    for i, (_, _, stride) in enumerate(cfg.conv_spec):
        h = tn.gelu(tn.conv1d(h, params[f"conv{i}.w"], params[f"conv{i}.b"], stride))
    h = tn.swapaxes(h, 1, 2)
    h = tn.layer_norm(h, params["local_ln.g"], params["local_ln.b"])
    return tn.linear(h, params["local_proj.w"], params["local_proj.b"])


def _attention(x: tn.Tensor, params, prefix: str, n_heads: int):
    B, T, d = x.shape
    dh = d // n_heads
    qkv = tn.linear(x, params[prefix + "wqkv"], params[prefix + "bqkv"])
    qkv = tn.transpose(tn.reshape(qkv, (B, T, 3, n_heads, dh)), (2, 0, 3, 1, 4))  # 3, B, H, T, dh
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = tn.scale(tn.matmul(q, tn.swapaxes(k, -1, -2)), 1.0 / math.sqrt(dh))
    attn = tn.softmax(scores, axis=-1)
    ctx = tn.matmul(attn, v)  # B, H, T, dh
    ctx = tn.reshape(tn.transpose(ctx, (0, 2, 1, 3)), (B, T, d))
    return tn.linear(ctx, params[prefix + "wo"], params[prefix + "bo"]), attn


def contextual_encode(params, cfg: ModelConfig, x, keep_attention: bool = False):
    """Local features (B, T, d) -> list of L layer outputs (and attention maps if requested)."""
    x = tn.as_tensor(x)
    if x.shape[-1] != cfg.d:
        raise tn.ShapeError(f"feature width {x.shape[-1]} != model width {cfg.d}")
    T = x.shape[1]
    if T > cfg.max_frames:
        raise ValueError(f"{T} frames exceeds max_frames={cfg.max_frames}")
    h = tn.add(x, params["pos"][:T])
    layers, maps = [], []
    for layer in range(cfg.L):
        p = f"layer{layer}."
        a, attn = _attention(tn.layer_norm(h, params[p + "ln1.g"], params[p + "ln1.b"]), params, p, cfg.n_heads)
        h = tn.add(h, a)
        f = tn.gelu(tn.linear(tn.layer_norm(h, params[p + "ln2.g"], params[p + "ln2.b"]), params[p + "w1"], params[p + "b1"]))
        h = tn.add(h, tn.linear(f, params[p + "w2"], params[p + "b2"]))
        layers.append(h)
        if keep_attention:
            maps.append(attn.data)
    return (layers, maps) if keep_attention else layers


def project_heads(params, cfg: ModelConfig, c_last, prefix: str = "head") -> tn.Tensor:
    """Final layer (B, T, d) -> K log-posterior streams stacked as (B, K, T, vocab)."""
    h = tn.layer_norm(tn.as_tensor(c_last), params["final_ln.g"], params["final_ln.b"])
    outs = [tn.log_softmax(tn.linear(h, params[f"{prefix}{j}.w"], params[f"{prefix}{j}.b"]), axis=-1)
            for j in range(cfg.K)]
    return tn.stack(outs, axis=1)


def forward_pretrain(params, cfg: ModelConfig, y: np.ndarray, mask: np.ndarray | None,
                     keep_attention: bool = False) -> EncoderOutput:
    """local_encode -> apply_mask -> contextual_encode -> project_heads."""
    x = local_encode(params, cfg, y)
    if mask is None:
        mask = np.zeros(x.shape[:2], dtype=bool)
    mask = np.atleast_2d(mask)
    if mask.shape != x.shape[:2]:
        raise tn.ShapeError(f"mask shape {mask.shape} != frames {x.shape[:2]}")
    masked = apply_mask(x, mask, params["mask_emb"])
    if keep_attention:
        layers, maps = contextual_encode(params, cfg, masked, keep_attention=True)
    else:
        layers, maps = contextual_encode(params, cfg, masked), []
    return EncoderOutput(x, layers, project_heads(params, cfg, layers[-1]), maps)


class _Frozen:
    """Parameter view whose tensors do not require gradients."""

    def __init__(self, params):
        self._params = params

    def __getitem__(self, name):
        return tn.Tensor(self._params[name].data)


def frozen(params) -> _Frozen:
    return _Frozen(params)


def encode_layers(params, cfg: ModelConfig, y: np.ndarray) -> list[np.ndarray]:
    """Unmasked per-layer outputs as plain arrays, no graph kept."""
    view = frozen(params)
    layers = contextual_encode(view, cfg, local_encode(view, cfg, y))
    return [h.data for h in layers]
