import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mixsep.metrics import der, der_details, edit_distance, pit_wer, pit_wer_details, wer

words = st.lists(st.sampled_from(["a", "b", "c", "d"]), max_size=6).map(" ".join)


def lev_oracle(r, h):
    """Recursive edit distance, memoised."""
    from functools import lru_cache

    @lru_cache(None)
    def d(i, j):
        if i == 0 or j == 0:
            return i + j
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (r[i - 1] != h[j - 1]))

    return d(len(r), len(h))


def test_wer_examples():
    assert wer("a b c", "a b c") == 0.0
    assert wer("a x c", "a b c") == pytest.approx(1 / 3)
    assert wer("", "a") == 1.0
    assert wer("a b", "") == 2.0  # insertions against an empty reference


@settings(max_examples=100, deadline=None)
@given(words, words)
def test_edit_distance_oracle(r, h):
    assert edit_distance(r.split(), h.split()) == lev_oracle(tuple(r.split()), tuple(h.split()))


def test_pit_wer_examples():
    assert pit_wer(["c", "a b"], ["a b", "c"]) == 0.0
    assert pit_wer(["x y", "a b"], ["a b", "x y"]) == 0.0
    _, perm, per = pit_wer_details(["c", "a b"], ["a b", "c"])
    assert perm == (1, 0) and per == [0, 0]


@settings(max_examples=100, deadline=None)
@given(words, words, words, words)
def test_pit_wer_two_perm_oracle(h1, h2, r1, r2):
    n = max(1, len(r1.split()) + len(r2.split()))
    ident = (lev_oracle(tuple(r1.split()), tuple(h1.split())) + lev_oracle(tuple(r2.split()), tuple(h2.split()))) / n
    swap = (lev_oracle(tuple(r1.split()), tuple(h2.split())) + lev_oracle(tuple(r2.split()), tuple(h1.split()))) / n
    assert pit_wer([h1, h2], [r1, r2]) == pytest.approx(min(ident, swap))
    assert pit_wer([h1, h2], [r1, r2]) <= ident + 1e-12


def test_der_hand_tally():
    ref = np.zeros((4, 2), bool)
    ref[[0, 1], 0] = True
    ref[2, 1] = True
    hyp = np.zeros((4, 2), bool)
    hyp[0, 0] = True
    hyp[2, 1] = True
    d = der_details(hyp, ref)
    assert (d["miss"], d["false_alarm"], d["confusion"], d["ref_speech"]) == (1, 0, 0, 3)
    assert d["der"] == pytest.approx(1 / 3)


def test_der_edge_cases(rng):
    ref = rng.random((30, 3)) < 0.5
    ref[0, 0] = True
    assert der(ref, ref) == 0.0
    assert der(ref[:, [2, 0, 1]], ref) == 0.0
    assert der(np.zeros_like(ref), ref) == 1.0
    assert der(np.ones((30, 3)), ref) >= 0.0
    assert der(ref.astype(float) * 0.9, ref) == 0.0  # thresholded at 0.5
    with pytest.raises(ValueError):
        der(ref, np.zeros_like(ref))


def test_der_false_alarm_can_exceed_one():
    ref = np.zeros((10, 2), bool)
    ref[0, 0] = True
    assert der(np.ones((10, 2), bool), ref) == pytest.approx(19.0)


def test_der_confusion_counted():
    ref = np.array([[1, 0, 0], [0, 1, 0]], bool)
    hyp = np.array([[1, 0, 0], [0, 0, 1]], bool)
    # with three speakers the min-DER permutation can absorb one mismatch
    assert der(hyp, ref) == 0.0
    ref2 = np.array([[1, 0], [0, 1], [1, 0]], bool)
    hyp2 = np.array([[1, 0], [1, 0], [0, 1]], bool)

    def tally(h, r):
        errs = 0
        for t in range(len(r)):
            nr, nh, nc = r[t].sum(), h[t].sum(), (r[t] & h[t]).sum()
            errs += max(nr - nh, 0) + max(nh - nr, 0) + min(nr, nh) - nc
        return errs

    best = min(tally(hyp2[:, list(p)], ref2) for p in itertools.permutations(range(2)))
    d = der_details(hyp2, ref2)
    assert best == 1 and d["confusion"] == 1 and d["perm"] == [1, 0]
    assert d["der"] == pytest.approx(1 / 3)
