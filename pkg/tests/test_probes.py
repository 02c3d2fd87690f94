import itertools

import numpy as np
import pytest
from scipy.special import expit

from mixsep import tensor as tn
from mixsep.audio import frame_count
from mixsep.gradcheck import finite_diff_check
from mixsep.mixing import MixSpec, simulate_one
from mixsep.model import ModelConfig, init_params, local_names
from mixsep.objectives import BLANK, CHAR_VOCAB, encode_text
from mixsep.probes import (DiarProbeConfig, activity_from_targets, asr_forward, attach_ctc_heads,
                           diar_probe_forward, finetune_step, greedy_ctc_decode, init_probe, layer_weights,
                           prefix_beam_decode, probe_features, probe_loss, probe_step, weighted_layers)

TINY = ModelConfig(conv_spec=((4, 10, 5), (4, 7, 4), (4, 7, 4), (4, 2, 2), (4, 2, 2)),
                   d=16, L=2, n_heads=2, ffn_mult=1, K=2, vocab=6, max_frames=64)


def onehot_frames(ids, V=CHAR_VOCAB):
    lp = np.full((len(ids), V), -20.0)
    lp[np.arange(len(ids)), ids] = 0.0
    return lp


def test_greedy_examples():
    a, b = encode_text("ab")
    assert greedy_ctc_decode(onehot_frames([BLANK] * 5)) == ""
    assert greedy_ctc_decode(onehot_frames([a, a, BLANK, b])) == "ab"
    assert greedy_ctc_decode(onehot_frames([a, BLANK, a])) == "aa"


def test_greedy_exhaustive_roundtrip():
    letters = encode_text("abc")
    for n in range(6):
        for s in itertools.product(letters, repeat=n):
            frames = []
            for k in s:
                if frames and frames[-1] == k:
                    frames.append(BLANK)
                frames += [k, k]
            frames.append(BLANK)
            text = "".join("abc"[letters.index(k)] for k in s)
            assert greedy_ctc_decode(onehot_frames(frames)) == text


def test_prefix_beam(rng):
    a, b = encode_text("ab")
    assert prefix_beam_decode(onehot_frames([a, BLANK, a, b]), beam=4) == "aab"
    with pytest.raises(ValueError):
        prefix_beam_decode(onehot_frames([a]), beam=17)
    # two frames where the summed prefix probability beats the single best path
    p = np.log(np.array([[0.4, 0.35, 0.25], [0.4, 0.35, 0.25]]))
    assert greedy_ctc_decode(np.pad(p, ((0, 0), (0, CHAR_VOCAB - 3)), constant_values=-50)) == ""
    assert prefix_beam_decode(np.pad(p, ((0, 0), (0, CHAR_VOCAB - 3)), constant_values=-50), beam=8) == "a"


def test_layer_weights_and_onehot(rng):
    cfg = DiarProbeConfig(n_layers=3, d=4, recurrent_width=5)
    probe = init_probe(cfg)
    np.testing.assert_allclose(layer_weights(probe), 1 / 3)
    assert layer_weights(probe).sum() == pytest.approx(1.0)
    feats = rng.normal(size=(3, 7, 4))
    probe["layer_logits"].data[:] = [-1e3, 0.0, -1e3]
    np.testing.assert_allclose(weighted_layers(feats, probe).data, feats[1], atol=1e-9)
    with pytest.raises(tn.ShapeError):
        weighted_layers(feats[:2], probe)


def lstm_oracle(x, wx, wh, b):
    T = x.shape[0]
    H = wh.shape[0]
    h, c = np.zeros(H), np.zeros(H)
    out = []
    for t in range(T):
        g = x[t] @ wx + h @ wh + b
        i, f, o, u = expit(g[:H]), expit(g[H:2 * H]), expit(g[2 * H:3 * H]), np.tanh(g[3 * H:])
        c = f * c + i * u
        h = o * np.tanh(c)
        out.append(h)
    return np.array(out)


def test_probe_forward_matches_oracle(rng):
    cfg = DiarProbeConfig(n_layers=2, d=4, recurrent_width=3, n_speakers=2)
    probe = init_probe(cfg, seed=2)
    probe["layer_logits"].data[:] = [0.3, -0.2]
    feats = rng.normal(size=(2, 6, 4))
    w = np.exp([0.3, -0.2]) / np.exp([0.3, -0.2]).sum()
    x = w[0] * feats[0] + w[1] * feats[1]
    h = lstm_oracle(x, probe["lstm.wx"].data, probe["lstm.wh"].data, probe["lstm.b"].data)
    expected = expit(h @ probe["out.w"].data + probe["out.b"].data)
    np.testing.assert_allclose(diar_probe_forward(feats, probe).data, expected, atol=1e-12)


def test_probe_gradcheck(rng):
    cfg = DiarProbeConfig(n_layers=3, d=4, recurrent_width=3, n_speakers=2)
    probe = init_probe(cfg, seed=1)
    feats = rng.normal(size=(3, 1, 8, 4))
    refs = (rng.random((1, 8, 2)) < 0.5).astype(float)
    err = finite_diff_check(lambda: probe_loss(probe, feats, refs)[0], probe, names=["layer_logits"], n_coords=3)
    assert err < 1e-4
    assert finite_diff_check(lambda: probe_loss(probe, feats, refs)[0], probe, n_coords=40) < 1e-4


def test_probe_training_leaves_encoder_untouched(rng):
    params = init_params(TINY, 0)
    before = {n: t.data.copy() for n, t in params.items()}
    y = rng.normal(size=(2, 3200))
    feats = probe_features(params, TINY, y)
    assert feats.shape == (2, 2, frame_count(3200), 16)
    probe = init_probe(DiarProbeConfig(n_layers=2, d=16, recurrent_width=4))
    refs = (rng.random((2, frame_count(3200), 2)) < 0.5).astype(float)
    losses = [probe_step(probe, feats, refs, 1e-2) for _ in range(30)]
    assert losses[-1] < losses[0]
    for n, t in params.items():
        assert t.data.tobytes() == before[n].tobytes()


def test_activity_matches_mixture_targets(rng):
    sil = 16
    batch = [(rng.uniform(-0.3, 0.3, 6400), rng.integers(0, sil, frame_count(6400))) for _ in range(3)]
    m = simulate_one(batch, 0, MixSpec(K=3, p_mix=1.0, p_noise=0.0), sil, rng)
    act = activity_from_targets(m.targets, sil)
    assert act.shape == (m.targets.shape[1], 3)
    assert np.array_equal(act, (m.targets != sil).T)
    for k, e in enumerate(m.extras, start=1):
        lead = e.offset // 320
        assert not act[:lead, k].any() and act[lead, k]


def test_finetune_freezes_local_extractor(rng):
    params = attach_ctc_heads(init_params(TINY, 0), TINY, seed=1)
    assert "head0.w" not in params and params["ctc0.w"].shape == (16, CHAR_VOCAB)
    before = {n: params[n].data.copy() for n in local_names(TINY)}
    ctx_before = params["layer0.wqkv"].data.copy()
    y = rng.normal(size=(1, 6400))
    loss = finetune_step(params, TINY, y, [[encode_text("ab"), encode_text("c")]], 1e-3)
    assert np.isfinite(loss)
    for n in local_names(TINY):
        assert np.abs(params[n].data - before[n]).max() == 0.0
    assert not np.array_equal(params["layer0.wqkv"].data, ctx_before)
    lp = asr_forward(params, TINY, y).data
    assert lp.shape == (1, 2, frame_count(6400), CHAR_VOCAB)
    np.testing.assert_allclose(np.logaddexp.reduce(lp, axis=-1), 0.0, atol=1e-9)


def test_finetune_without_heads_errors(rng):
    with pytest.raises(KeyError):
        finetune_step(init_params(TINY, 0), TINY, rng.normal(size=(1, 3200)), [[[1], [2]]], 1e-3)
