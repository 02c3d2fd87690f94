import numpy as np
import pytest

from mixsep import tensor as tn
from mixsep.masking import MaskSpec, apply_mask, sample_mask, sample_masks


def test_forced_span_when_no_start_drawn():
    rng = np.random.default_rng(0)
    for T in (3, 10, 50):
        m = sample_mask(T, MaskSpec(span_len=10, p_start=0.0), rng)
        runs = np.flatnonzero(np.diff(np.concatenate([[0], m.astype(int), [0]])))
        assert len(runs) == 2
        # clipped at the end, so the run can be shorter than span_len
        assert 1 <= m.sum() <= min(10, T)


def test_forced_span_full_length_when_it_fits():
    rng = np.random.default_rng(1)
    lengths = [sample_mask(40, MaskSpec(p_start=0.0), rng).sum() for _ in range(200)]
    assert max(lengths) == 10 and min(lengths) >= 1


def test_single_span_covers_short_utterance():
    m = sample_mask(10, MaskSpec(span_len=10, p_start=0.999999), np.random.default_rng(0))
    assert m.all()


def test_coverage_matches_closed_form():
    rng = np.random.default_rng(5)
    spec = MaskSpec()
    masks = np.stack([sample_mask(1000, spec, rng) for _ in range(10000)])
    # frames at least span_len - 1 away from the start see all 10 possible covering starts
    frac = masks[:, 9 : 1000 - 9].mean()
    assert abs(frac - (1 - 0.92**10)) < 0.01


def test_every_masked_frame_inside_a_span():
    rng = np.random.default_rng(2)
    for _ in range(50):
        m = sample_mask(120, MaskSpec(span_len=7, p_start=0.05), rng)
        runs = np.flatnonzero(np.diff(np.concatenate([[0], m.astype(int), [0]]))).reshape(-1, 2)
        assert all(e - s >= 7 or e == 120 for s, e in runs)


def test_determinism_and_spec_validation():
    a = sample_masks(4, 77, MaskSpec(), np.random.default_rng(9))
    b = sample_masks(4, 77, MaskSpec(), np.random.default_rng(9))
    assert a.shape == (4, 77) and a.dtype == bool and np.array_equal(a, b)
    with pytest.raises(ValueError):
        MaskSpec(span_len=0)
    with pytest.raises(ValueError):
        MaskSpec(p_start=1.0)
    with pytest.raises(ValueError):
        sample_mask(0, MaskSpec(), np.random.default_rng(0))


def test_apply_mask_replaces_rows(rng):
    x = rng.standard_normal((5, 3))
    emb = rng.standard_normal(3)
    np.testing.assert_array_equal(apply_mask(x, np.zeros(5, bool), emb).data, x)
    np.testing.assert_array_equal(apply_mask(x, np.ones(5, bool), emb).data, np.tile(emb, (5, 1)))
    m = np.array([0, 1, 0, 0, 1], bool)
    out = apply_mask(x, m, emb).data
    np.testing.assert_array_equal(out[m], np.tile(emb, (2, 1)))
    np.testing.assert_array_equal(out[~m], x[~m])
    assert out.shape == x.shape


def test_apply_mask_errors(rng):
    with pytest.raises(tn.ShapeError):
        apply_mask(rng.standard_normal((5, 3)), np.zeros(5, bool), np.zeros(4))
    with pytest.raises(tn.ShapeError):
        apply_mask(rng.standard_normal((5, 3)), np.zeros(4, bool), np.zeros(3))


def test_embedding_gradient_is_sum_over_masked_rows(rng):
    x = tn.Tensor(rng.standard_normal((3, 2)), requires_grad=True)
    emb = tn.Tensor(rng.standard_normal(2), requires_grad=True)
    w = rng.standard_normal((3, 2))
    m = np.array([True, False, True])
    gx, gemb = tn.grad(tn.sum(tn.mul(tn.square(apply_mask(x, m, emb)), w)), [x, emb])
    row_grads = 2 * np.where(m[:, None], emb.data, x.data) * w
    np.testing.assert_allclose(gemb, row_grads[m].sum(0), atol=1e-12)
    np.testing.assert_array_equal(gx[m], 0.0)
    # finite differences on the embedding
    eps = 1e-6
    for j in range(2):
        e = emb.data.copy()
        e[j] += eps
        hi = np.sum(np.where(m[:, None], e, x.data) ** 2 * w)
        e[j] -= 2 * eps
        lo = np.sum(np.where(m[:, None], e, x.data) ** 2 * w)
        assert gemb[j] == pytest.approx((hi - lo) / (2 * eps), rel=1e-6)
