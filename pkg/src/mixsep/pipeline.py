"""Run configuration and the training / evaluation stages.

Every random draw is keyed by ``(seed, purpose, step, index)`` so a run is
bitwise reproducible and a resumed run continues exactly where the
uninterrupted one would have.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import tensor as tn
from .audio import HOP, WINDOW, frame_count, load_wav, mfcc
from .corpus import read_manifest, resolve
from .labels import assign_units, extract_layer_features, kmeans_fit, read_units
from .masking import MaskSpec, sample_mask
from .mixing import (MixSpec, MixtureSample, Source, chunk_scale_shift, draw_params, keyed_rng, mix,
                     simulate_batch)
from .model import ModelConfig, forward_pretrain, init_params, local_names
from .objectives import CHAR_VOCAB, encode_text, masked_accuracy, masked_pss_loss
from .optim import LrSchedule, ParamStore, adam_step, lr_at
from .probes import (DiarProbeConfig, activity_from_targets, asr_forward, attach_ctc_heads, finetune_step,
                     diar_probe_forward, greedy_ctc_decode, init_probe, probe_features, probe_step)
from .metrics import der_details, pit_wer_details, wer

# rng purposes
_BATCH, _MIX, _MASK, _CROP, _DEV = 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _conv_to_str(spec) -> str:
    return ",".join(":".join(str(v) for v in layer) for layer in spec)


def _conv_from_str(text: str) -> tuple:
    return tuple(tuple(int(v) for v in layer.split(":")) for layer in text.split(","))


@dataclass
class RunConfig:
    stage: str = "pretrain"
    seed: int = 0
    # data
    manifest: str = ""
    units: str = ""
    dev_manifest: str = ""
    C: int = 50
    # mixing
    K: int = 2
    p_mix: float = 1.0
    p_noise: float = 0.1
    r_l_lo: float = 0.3
    r_l_hi: float = 1.0
    r_e_lo: float = 0.1
    r_e_hi: float = 10.0
    max_offset: float = 0.5
    # masking
    span_len: int = 10
    p_start: float = 0.08
    # model
    conv_spec: str = _conv_to_str(((32, 10, 5), (32, 7, 4), (32, 7, 4), (32, 2, 2), (32, 2, 2)))
    d: int = 64
    L: int = 4
    n_heads: int = 4
    ffn_mult: int = 4
    max_frames: int = 512
    sil_weight: float = 1.0
    # optimisation
    peak_lr: float = 2e-3
    warmup_steps: int = 50
    total_steps: int = 500
    batch_seconds: float = 8.0
    crop_frames: int = 200
    # downstream
    ft_peak_lr: float = 1e-3
    ft_warmup_steps: int = 20
    ft_total_steps: int = 200
    ft_max_offset: float = 0.0
    n_speakers: int = 2
    recurrent_width: int = 64
    probe_lr: float = 1e-2
    probe_steps: int = 100
    # bookkeeping
    log_every: int = 10
    ckpt_every: int = 0
    out: str = ""

    @property
    def mix_spec(self) -> MixSpec:
        return MixSpec(K=self.K, p_mix=self.p_mix, p_noise=self.p_noise, r_l_range=(self.r_l_lo, self.r_l_hi),
                       r_e_range=(self.r_e_lo, self.r_e_hi), max_offset=self.max_offset, seed=self.seed)

    @property
    def mask_spec(self) -> MaskSpec:
        return MaskSpec(span_len=self.span_len, p_start=self.p_start)

    @property
    def model_config(self) -> ModelConfig:
        return ModelConfig(conv_spec=_conv_from_str(self.conv_spec), d=self.d, L=self.L, n_heads=self.n_heads,
                           ffn_mult=self.ffn_mult, K=self.K, vocab=self.C + 1, max_frames=self.max_frames)

    @property
    def schedule(self) -> LrSchedule:
        return LrSchedule(self.peak_lr, self.warmup_steps, self.total_steps)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


CONFIG_KEYS = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _coerce(key: str, value: str):
    kind = CONFIG_KEYS[key]
    if kind in ("int", int):
        return int(value)
    if kind in ("float", float):
        return float(value)
    return value


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{k}={getattr(cfg, k)}\n" for k in CONFIG_KEYS)


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    """Flat ``key=value`` lines; ``#`` comments and blank lines ignored, unknown keys rejected."""
    values = {}
    for n, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"line {n}: unknown key {key!r}")
        try:
            values[key] = _coerce(key, value)
        except ValueError as exc:
            raise ConfigError(f"line {n}: bad value for {key}: {value!r}") from exc
    return dataclasses.replace(base or RunConfig(), **values)


def load_config(path) -> RunConfig:
    return parse_config(Path(path).read_text())


# ---------------------------------------------------------------------------
# data


@dataclass
class Item:
    uid: str
    samples: np.ndarray
    units: np.ndarray
    transcript: str = ""
    segments: np.ndarray | None = None

    def as_source(self):
        return (self.samples, self.units, self.uid)


def mfcc_features(samples: np.ndarray) -> np.ndarray:
    from .audio import Waveform

    return mfcc(Waveform(samples)).frames


def build_labels(utts, C: int, seed: int = 0, params: ParamStore | None = None, model_cfg: ModelConfig | None = None,
                 layer: int | None = None):
    """Fit a codebook and assign units per utterance (MFCC, or a model layer when ``params`` is given)."""
    if params is None:
        feats = [mfcc_features(u.samples) for u in utts]
        meta = "mfcc"
    else:
        layer = layer or math.ceil(2 * model_cfg.L / 3)
        feats = [extract_layer_features(params, model_cfg, u.samples, layer).frames for u in utts]
        meta = f"model-layer-{layer}"
    cb = kmeans_fit(np.concatenate(feats), C, seed=seed, feature_meta=meta)
    return cb, [assign_units(f, cb) for f in feats]


def make_items(utts, units) -> list[Item]:
    items = []
    for u, z in zip(utts, units):
        if len(z) != frame_count(u.samples.size):
            raise ValueError(f"{u.uid}: {len(z)} units for {frame_count(u.samples.size)} frames")
        items.append(Item(u.uid, u.samples, np.asarray(z), u.transcript, u.segments))
    return items


def sample_batch(items: list[Item], cfg: RunConfig, step: int) -> list[Item]:
    """Utterances drawn without replacement until ``batch_seconds`` is filled (at least K)."""
    rng = keyed_rng(cfg.seed, _BATCH, step)
    order = rng.permutation(len(items))
    budget = cfg.batch_seconds * 16000
    out, total = [], 0
    for i in order:
        n = items[i].samples.size
        if len(out) >= cfg.K and total + n > budget:
            break
        out.append(items[i])
        total += n
    if len(out) < cfg.K:
        raise ValueError(f"corpus has fewer than K={cfg.K} utterances")
    return out


def crop_mixtures(mixtures: list[MixtureSample], max_frames: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """Hop-aligned random crops to a common length: waveforms (B, n) and targets (B, K, T)."""
    T = min(min(m.targets.shape[1] for m in mixtures), max_frames)
    n = HOP * (T - 1) + WINDOW
    ys, zs = [], []
    for m in mixtures:
        start = int(rng.integers(m.targets.shape[1] - T + 1))
        ys.append(m.y_mix.samples[start * HOP : start * HOP + n])
        zs.append(m.targets[:, start : start + T])
    return np.stack(ys), np.stack(zs)


@dataclass
class PretrainBatch:
    y: np.ndarray
    targets: np.ndarray
    masks: np.ndarray
    mixtures: list


def pretrain_batch(items: list[Item], cfg: RunConfig, step: int, sil: int) -> PretrainBatch:
    batch = sample_batch(items, cfg, step)
    mixtures = simulate_batch([it.as_source() for it in batch], cfg.mix_spec, sil, _MIX, step)
    y, z = crop_mixtures(mixtures, cfg.crop_frames, keyed_rng(cfg.seed, _CROP, step))
    mrng = keyed_rng(cfg.seed, _MASK, step)
    masks = np.stack([sample_mask(z.shape[2], cfg.mask_spec, mrng) for _ in range(len(batch))])
    return PretrainBatch(y, z, masks, mixtures)


# ---------------------------------------------------------------------------
# pre-training


@dataclass
class StepLog:
    step: int
    loss: float
    accuracy: float
    lr: float
    perms: list = field(default_factory=list)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def pretrain_loss(params, mcfg: ModelConfig, batch: PretrainBatch, sil: int, sil_weight: float = 1.0):
    out = forward_pretrain(params, mcfg, batch.y, batch.masks)
    if out.log_posts.shape[2] != batch.targets.shape[2]:
        raise ValueError("encoder frames and target frames disagree")
    loss, assignments, _ = masked_pss_loss(out.log_posts, batch.targets, batch.masks, sil=sil, sil_weight=sil_weight)
    return loss, assignments, out


def pretrain(items: list[Item], cfg: RunConfig, params: ParamStore | None = None, start_step: int = 0,
             steps: int | None = None, on_step: Callable[[StepLog], None] | None = None,
             on_checkpoint: Callable[[int, ParamStore], None] | None = None) -> tuple[ParamStore, list[StepLog]]:
    """Masked pseudo source separation training with on-the-fly mixing."""
    mcfg = cfg.model_config
    sil = cfg.C
    params = params if params is not None else init_params(mcfg, cfg.seed)
    sched = cfg.schedule
    end = cfg.total_steps if steps is None else min(cfg.total_steps, start_step + steps)
    logs = []
    for step in range(start_step, end):
        batch = pretrain_batch(items, cfg, step, sil)
        lr = lr_at(sched, step + 1)
        try:
            loss, assignments, out = pretrain_loss(params, mcfg, batch, sil, cfg.sil_weight)
        except tn.NonFiniteError as exc:
            raise tn.NonFiniteError(
                f"step {step}: {exc}; batch provenance: {json.dumps([m.record() for m in batch.mixtures])}"
            ) from exc
        grads = tn.backward(loss, params)
        acc = masked_accuracy(out.log_posts.data, batch.targets, batch.masks, assignments)
        adam_step(params, grads, lr)
        log = StepLog(step, loss.item(), acc, lr, [list(a.perm) for a in assignments])
        logs.append(log)
        if on_step:
            on_step(log)
        if on_checkpoint and cfg.ckpt_every and (step + 1) % cfg.ckpt_every == 0:
            on_checkpoint(step + 1, params)
    return params, logs


def masked_unit_accuracy(params, items: list[Item], cfg: RunConfig, n_batches: int = 10, offset: int = 10**6) -> float:
    """Masked-frame accuracy under PIT on freshly simulated training mixtures."""
    mcfg = cfg.model_config
    hits = total = 0.0
    view = _no_grad(params)
    for k in range(n_batches):
        batch = pretrain_batch(items, cfg, offset + k, cfg.C)
        out = forward_pretrain(view, mcfg, batch.y, batch.masks)
        _, assignments, _ = masked_pss_loss(out.log_posts, batch.targets, batch.masks)
        n = batch.masks.sum() * mcfg.K
        hits += masked_accuracy(out.log_posts.data, batch.targets, batch.masks, assignments) * n
        total += n
    return hits / total


def _no_grad(params):
    from .model import frozen

    return frozen(params)


# ---------------------------------------------------------------------------
# fine-tuning and probing data: full utterances overlapped ("max mode" when max_offset=0)


@dataclass
class LabeledMixture:
    y: np.ndarray
    transcripts: list
    activity: np.ndarray  # (T, K) bool
    record: dict


FT_ENERGY_RANGE = (0.5, 2.0)


def labeled_mixture(items: list[Item], cfg: RunConfig, index: int, n_speakers: int, counter: int = _DEV) -> LabeledMixture:
    """Full utterances overlapped with exactly ``n_speakers - 1`` speech extras (r_l = 1, no noise)."""
    spec = MixSpec(K=max(n_speakers, 2), p_mix=1.0, p_noise=0.0, r_l_range=(1.0, 1.0), r_e_range=FT_ENERGY_RANGE,
                   max_offset=cfg.ft_max_offset, seed=cfg.seed)
    rng = keyed_rng(cfg.seed, counter, index)
    pick = rng.choice(len(items), size=n_speakers, replace=False)
    primary = items[pick[0]]
    extras = []
    for i in pick[1:]:
        _, r_e, o = draw_params(spec, primary.samples.size, rng)
        src = Source(items[i].samples, items[i].units, False, items[i].uid)
        extras.append(chunk_scale_shift(src, primary.samples, 1.0, r_e, o, rng))
    m = mix(primary.samples, primary.units, extras, n_speakers, cfg.C, primary_origin=primary.uid)
    transcripts = [items[i].transcript for i in pick]
    return LabeledMixture(m.y_mix.samples, transcripts, activity_from_targets(m.targets, cfg.C), m.record())


def pad_batch(ys: list[np.ndarray]) -> np.ndarray:
    n = max(y.size for y in ys)
    out = np.zeros((len(ys), n))
    for b, y in enumerate(ys):
        out[b, : y.size] = y
    return out


def ft_batch(items: list[Item], cfg: RunConfig, step: int, batch_size: int = 4):
    mixes = [labeled_mixture(items, cfg, step * batch_size + b, 2, counter=_BATCH + 100) for b in range(batch_size)]
    y = pad_batch([m.y for m in mixes])
    transcripts = [[encode_text(t) for t in m.transcripts] for m in mixes]
    return y, transcripts, mixes


def finetune(params: ParamStore, cfg: RunConfig, items: list[Item], steps: int | None = None,
             on_step: Callable[[int, float], None] | None = None, batch_size: int = 4,
             epoch_steps: int = 0, on_epoch: Callable[[int, ParamStore], None] | None = None
             ) -> tuple[ParamStore, list[float]]:
    """PIT-CTC fine-tuning on 2-speaker full-utterance mixtures; local extractor frozen.

    ``on_epoch(epoch, params)`` runs after every ``epoch_steps`` updates.
    """
    mcfg = cfg.model_config
    if "ctc0.w" not in params:
        if any(n.startswith("ctc") for n in params.names()):
            raise ValueError("checkpoint has character heads for a different K")
        params = attach_ctc_heads(params, mcfg, cfg.seed)
    elif params["ctc0.w"].shape[1] != CHAR_VOCAB:
        raise ValueError(f"checkpoint heads have {params['ctc0.w'].shape[1]} outputs, expected {CHAR_VOCAB}")
    steps = cfg.ft_total_steps if steps is None else steps
    sched = LrSchedule(cfg.ft_peak_lr, min(cfg.ft_warmup_steps, steps - 1), steps)
    local = {n: params[n].data.copy() for n in local_names(mcfg)}
    losses = []
    for step in range(steps):
        y, transcripts, _ = ft_batch(items, cfg, step, batch_size)
        loss = finetune_step(params, mcfg, y, transcripts, lr_at(sched, step + 1))
        if any(not np.array_equal(local[n], params[n].data) for n in local):
            raise AssertionError(f"step {step}: local extractor changed during fine-tuning")
        losses.append(loss)
        if on_step:
            on_step(step, loss)
        if on_epoch and epoch_steps and ((step + 1) % epoch_steps == 0 or step + 1 == steps):
            on_epoch((step + 1 + epoch_steps - 1) // epoch_steps, params)
    return params, losses


def frozen_f_delta(before: ParamStore, after: ParamStore, cfg: ModelConfig) -> float:
    return max(float(np.abs(before[n].data - after[n].data).max()) for n in local_names(cfg))


def probe_batch(items, cfg: RunConfig, step: int, batch_size: int, n_speakers: int, counter: int):
    mixes = [labeled_mixture(items, cfg, step * batch_size + b, n_speakers, counter=counter) for b in range(batch_size)]
    y = pad_batch([m.y for m in mixes])
    T = frame_count(y.shape[1])
    refs = np.zeros((batch_size, T, n_speakers), dtype=bool)
    for b, m in enumerate(mixes):
        refs[b, : m.activity.shape[0]] = m.activity
    return y, refs, mixes


def train_probe(params: ParamStore, cfg: RunConfig, items: list[Item], steps: int | None = None,
                batch_size: int = 4) -> tuple[ParamStore, list[float]]:
    """Diarization probe on frozen encoder layers."""
    mcfg = cfg.model_config
    probe = init_probe(DiarProbeConfig(mcfg.L, mcfg.d, cfg.recurrent_width, cfg.n_speakers), cfg.seed)
    losses = []
    for step in range(cfg.probe_steps if steps is None else steps):
        y, refs, _ = probe_batch(items, cfg, step, batch_size, cfg.n_speakers, _BATCH + 200)
        feats = probe_features(params, mcfg, y)
        losses.append(probe_step(probe, feats, refs, cfg.probe_lr))
    return probe, losses


# ---------------------------------------------------------------------------
# evaluation


def eval_msasr(params, cfg: RunConfig, items: list[Item], n: int = 20, n_speakers: int = 2):
    mcfg = cfg.model_config
    view = _no_grad(params)
    rows = []
    for i in range(n):
        m = labeled_mixture(items, cfg, i, n_speakers)
        lp = asr_forward(view, mcfg, m.y[None]).data[0]
        hyps = [greedy_ctc_decode(lp[j]) for j in range(lp.shape[0])]
        score, perm, errs = pit_wer_details(hyps, m.transcripts)
        rows.append({"id": i, "refs": m.transcripts, "hyps": hyps, "pit_wer": score, "perm": list(perm),
                     "errors": errs, "ref_words": [len(t.split()) for t in m.transcripts]})
    total_err = sum(sum(r["errors"]) for r in rows)
    total_ref = sum(sum(r["ref_words"]) for r in rows)
    return rows, {"task": "msasr", "n": n, "pit_wer": total_err / max(1, total_ref)}


def eval_asr(params, cfg: RunConfig, items: list[Item], n: int = 20):
    """Single-speaker input through the K-stream model: best single stream against the one reference."""
    mcfg = cfg.model_config
    view = _no_grad(params)
    rows = []
    for i, it in enumerate(items[:n]):
        lp = asr_forward(view, mcfg, it.samples[None]).data[0]
        hyps = [greedy_ctc_decode(lp[j]) for j in range(lp.shape[0])]
        # the other streams should be empty; score them as insertions against empty references
        score, perm, errs = pit_wer_details(hyps, [it.transcript] + [""] * (len(hyps) - 1))
        rows.append({"id": it.uid, "ref": it.transcript, "hyps": hyps, "wer": wer(hyps[perm[0]], it.transcript),
                     "pit_wer": score, "errors": errs, "ref_words": len(it.transcript.split())})
    total_err = sum(sum(r["errors"]) for r in rows)
    total_ref = sum(r["ref_words"] for r in rows)
    return rows, {"task": "asr", "n": len(rows), "wer": total_err / max(1, total_ref)}


def eval_sd(params, probe, cfg: RunConfig, items: list[Item], n: int = 20):
    mcfg = cfg.model_config
    rows = []
    agg = {"miss": 0, "false_alarm": 0, "confusion": 0, "ref_speech": 0}
    for i in range(n):
        m = labeled_mixture(items, cfg, i, cfg.n_speakers)
        feats = probe_features(params, mcfg, m.y[None])
        probs = diar_probe_forward(feats, probe).data[0]
        d = der_details(probs, m.activity)
        rows.append({"id": i, **d})
        for k in agg:
            agg[k] += d[k]
    der = (agg["miss"] + agg["false_alarm"] + agg["confusion"]) / max(1, agg["ref_speech"])
    return rows, {"task": "sd", "n": n, **agg, "der": der}


# ---------------------------------------------------------------------------
# manifests, materialized mixtures and the (K, p_mix) grid


def items_from_manifest(manifest, units_path: str | None = None) -> list[Item]:
    """Utterances of a manifest paired with their unit lines.

    Without a unit file every frame gets unit 0; fine-tuning, probing and
    evaluation only use the units to mark where each source is present.
    """
    rows = read_manifest(manifest)
    units = read_units(units_path) if units_path else None
    if units is not None and len(units) != len(rows):
        raise ValueError(f"{units_path}: {len(units)} unit lines for {len(rows)} manifest rows")
    items = []
    for i, r in enumerate(rows):
        samples = load_wav(resolve(manifest, r["path"])).samples
        z = units[i] if units is not None else np.zeros(frame_count(samples.size), dtype=np.int64)
        if len(z) != frame_count(samples.size):
            raise ValueError(f"{r['id']}: {len(z)} units for {frame_count(samples.size)} frames")
        items.append(Item(r["id"], samples, z, r.get("transcript", "")))
    return items


def simulate_corpus(items: list[Item], cfg: RunConfig, count: int):
    """The first ``count`` mixtures that pre-training would draw, before cropping.

    Uses the same keyed streams as ``pretrain_batch`` so a materialized corpus
    agrees bitwise with on-the-fly mixing.
    """
    out, step = [], 0
    while len(out) < count:
        batch = sample_batch(items, cfg, step)
        out.extend(simulate_batch([it.as_source() for it in batch], cfg.mix_spec, cfg.C, _MIX, step))
        step += 1
    return out[:count]


def mixture_summary(mixtures: list[MixtureSample], K: int) -> dict:
    hist = np.bincount([m.n for m in mixtures], minlength=K)
    n_extras = sum(m.n for m in mixtures)
    n_noise = sum(e.is_noise for m in mixtures for e in m.extras)
    return {
        "count": len(mixtures),
        "n_histogram": hist.tolist(),
        "n_fraction": (hist / max(1, len(mixtures))).tolist(),
        "noise_fraction": n_noise / n_extras if n_extras else 0.0,
        "clipping_rate": sum(m.clipped for m in mixtures) / max(1, len(mixtures)),
    }


def ablation_grid(items: list[Item], cfg: RunConfig, Ks, p_mixes, steps: int | None = None) -> list[dict]:
    """One pre-training run per (K, p_mix) cell; one summary row per cell."""
    rows = []
    for K in Ks:
        for p_mix in p_mixes:
            if K == 1 and p_mix > 0:
                continue
            cell = cfg.replace(K=K, p_mix=p_mix)
            params, logs = pretrain(items, cell, steps=steps)
            rows.append({"K": K, "p_mix": p_mix, "steps": len(logs), "final_loss": logs[-1].loss,
                         "masked_accuracy": masked_unit_accuracy(params, items, cell)})
    return rows


# ---------------------------------------------------------------------------
# end-to-end gradient checks on a tiny model

GRADCHECK_MODEL = ModelConfig(conv_spec=((4, 10, 5), (4, 7, 4), (4, 7, 4), (4, 2, 2), (4, 2, 2)), d=16, L=2,
                              n_heads=2, ffn_mult=1, K=2, vocab=6, max_frames=8)


def gradcheck_losses(seed: int = 0, epsilon: float = 1e-5, n_coords: int = 50) -> dict:
    """Max relative finite-difference error of each exported loss, backpropagated through the whole model."""
    from .gradcheck import finite_diff_check
    from .model import contextual_encode, local_encode, project_heads
    from .objectives import batch_pit_ctc_loss, pit_bce_loss

    mcfg = GRADCHECK_MODEL
    rng = np.random.default_rng(seed)
    B, T = 2, 8
    y = rng.standard_normal((B, HOP * (T - 1) + WINDOW))
    out = {}

    params = init_params(mcfg, seed)
    masks = rng.random((B, T)) < 0.5
    masks[:, 0] = True
    targets = rng.integers(0, mcfg.vocab, size=(B, mcfg.K, T))

    def pss():
        lp = forward_pretrain(params, mcfg, y, masks).log_posts
        return masked_pss_loss(lp, targets, masks)[0]

    out["masked_pss_loss"] = {"n_params": params.n_values(),
                              "max_rel_error": finite_diff_check(pss, params, epsilon, n_coords, seed)}

    ctc_params = attach_ctc_heads(params, mcfg, seed)
    transcripts = [[[1, 2], [3]], [[4], []]]

    def ctc():
        x = local_encode(ctc_params, mcfg, y)
        lp = project_heads(ctc_params, mcfg, contextual_encode(ctc_params, mcfg, x)[-1], prefix="ctc")
        return batch_pit_ctc_loss(lp, transcripts)[0]

    names = [n for n in ctc_params.names() if n != "mask_emb"]
    out["pit_ctc_loss"] = {"n_params": sum(ctc_params[n].data.size for n in names),
                           "max_rel_error": finite_diff_check(ctc, ctc_params, epsilon, n_coords, seed, names=names)}

    probe = init_probe(DiarProbeConfig(mcfg.L, mcfg.d, recurrent_width=4, n_speakers=2), seed)
    joint = ParamStore()
    for n in local_names(mcfg) + [k for k in params.names() if k.startswith(("pos", "layer"))]:
        joint.add(n, params[n].data.copy())
    for n in probe.names():
        joint.add("probe." + n, probe[n].data.copy())
    view = {n[len("probe."):]: joint[n] for n in joint.names() if n.startswith("probe.")}
    ref = rng.random((T, 2)) < 0.5

    def bce():
        x = local_encode(joint, mcfg, y[:1])
        layers = contextual_encode(joint, mcfg, x)
        return pit_bce_loss(diar_probe_forward(layers, view)[0], ref)[0]

    out["pit_bce_loss"] = {"n_params": joint.n_values(),
                           "max_rel_error": finite_diff_check(bce, joint, epsilon, n_coords, seed)}
    return out
