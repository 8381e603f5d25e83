import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from alarmdet.temporal import (PosteriorTrack, combine_schemes, eer_threshold, enforce_spacing, frames_to_periods,
                               local_maxima, majority_smooth, period_probability, periods_to_frames, pick_periods,
                               runs)


def direct_period_probability(d, l_sig, l_sil):
    out = []
    for t in range(len(d) - l_sig - l_sil + 1):
        s = sum(d[i] for i in range(t, t + l_sig))
        s += sum(-d[i] for i in range(t + l_sig, t + l_sig + l_sil))
        out.append(s)
    return np.array(out)


def test_period_probability_matches_direct_sum():
    rng = np.random.default_rng(1)
    for _ in range(200):
        n = int(rng.integers(1, 40))
        ls, lq = int(rng.integers(1, 8)), int(rng.integers(0, 8))
        d = rng.normal(scale=5, size=n)
        got = period_probability(d, ls, lq).values
        ref = direct_period_probability(d, ls, lq)
        assert got.shape == ref.shape
        assert np.allclose(got, ref, atol=1e-9, rtol=0)


def test_period_probability_ideal_track():
    l_sig, l_sil = 4, 6
    d = -np.ones(40)
    d[10:14] = 1.0
    pp = period_probability(d, l_sig, l_sil).values
    assert pp[10] == l_sig + l_sil
    assert pp[11] == l_sig + l_sil - 2
    assert int(np.argmax(pp)) == 10


def test_period_probability_cancels_and_swaps():
    assert np.all(period_probability(np.zeros(20), 3, 4).values == 0)
    rng = np.random.default_rng(0)
    la, lna = np.log(rng.uniform(0.01, 1, 30)), np.log(rng.uniform(0.01, 1, 30))
    a = period_probability(PosteriorTrack(la, lna, 0.04), 3, 5).values
    b = period_probability(PosteriorTrack(lna, la, 0.04), 3, 5).values
    assert np.array_equal(a, -b)


def test_period_probability_short_track():
    assert period_probability(np.ones(5), 3, 3).values.size == 0


def test_posterior_track_from_loglik_normalises():
    t = PosteriorTrack.from_loglik([-3.0, 10.0], [-1.0, -50.0], 0.04)
    assert np.allclose(np.exp(t.log_pa) + np.exp(t.log_pna), 1.0)
    assert t.contrast == pytest.approx([-2.0, 60.0])


def brute_spacing(pos, h, dist):
    order = sorted(range(len(pos)), key=lambda i: (-h[i], pos[i]))
    kept = []
    for i in order:
        if all(abs(pos[i] - pos[k]) >= dist for k in kept):
            kept.append(i)
    return sorted(kept, key=lambda i: pos[i])


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 60), st.integers(0, 5)), max_size=20), st.floats(0.5, 10))
def test_enforce_spacing_matches_brute_force(items, dist):
    pos = [p for p, _ in items]
    h = [float(v) for _, v in items]
    got = enforce_spacing(pos, h, dist).tolist()
    assert got == brute_spacing(pos, h, dist)


def test_local_maxima_plateau_and_edges():
    x = np.array([3, 1, 2, 2, 1, 0, 4])
    assert local_maxima(x).tolist() == [0, 2, 6]
    assert local_maxima(np.ones(5)).size == 0
    assert local_maxima(np.array([1.0])).size == 0


def test_pick_periods_threshold_and_spacing():
    v = np.zeros(50)
    v[[5, 7, 30]] = [3.0, 5.0, 4.0]
    frames, heights = pick_periods(v, 3.5, period_frames=10)
    assert frames.tolist() == [7, 30]
    assert heights.tolist() == [5.0, 4.0]


def test_majority_smooth():
    x = np.array([0, 0, 1, 0, 0, 1, 1, 1, 0, 1, 1], bool)
    y = majority_smooth(x, 3)
    assert y.tolist() == [0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1]
    # even windows grow by one
    assert np.array_equal(majority_smooth(x, 2), y)
    with pytest.raises(ValueError):
        majority_smooth(x, 0)


def test_frames_periods_round_trip():
    labels = np.zeros(40, bool)
    labels[[2, 3, 4, 20, 21]] = True
    assert runs(labels) == [(2, 5), (20, 22)]
    onsets = frames_to_periods(labels, 0.5, offset_s=0.1)
    assert onsets.tolist() == [1.1, 10.1]
    # second run is too close for a 20 s period
    assert frames_to_periods(labels, 0.5, period_s=20.0).tolist() == [1.0]
    back = periods_to_frames([2, 38], 3, 40)
    assert np.flatnonzero(back).tolist() == [2, 3, 4, 38, 39]


def test_combine_schemes_keeps_confirmed_runs():
    labels = np.zeros(30, bool)
    labels[5:9] = True
    labels[20:23] = True
    out, kept = combine_schemes(labels, [4, 15], l_sig_frames=4)
    assert np.flatnonzero(out).tolist() == [5, 6, 7, 8]
    assert kept.tolist() == [4]
    assert not np.any(out & ~labels)


def test_eer_threshold_separable():
    s = np.array([0.1, 0.2, 0.3, 0.7, 0.8])
    y = np.array([0, 0, 0, 1, 1], bool)
    thr, eer = eer_threshold(s, y)
    assert eer == 0.0 and 0.3 < thr < 0.7


def test_eer_threshold_degenerate():
    with pytest.raises(ValueError):
        eer_threshold([0.1, 0.2], [True, True])
    with pytest.raises(ValueError):
        eer_threshold([0.1, 0.2], [False, False])
    # constant scores: MR and FAR cannot both be small
    thr, eer = eer_threshold(np.zeros(4), np.array([0, 0, 1, 1], bool))
    assert eer == pytest.approx(0.5)


def test_eer_threshold_balances_rates():
    rng = np.random.default_rng(3)
    s = np.concatenate([rng.normal(0, 1, 500), rng.normal(2, 1, 500)])
    y = np.r_[np.zeros(500, bool), np.ones(500, bool)]
    thr, eer = eer_threshold(s, y)
    mr = np.mean(s[y] <= thr)
    far = np.mean(s[~y] > thr)
    assert abs(mr - far) <= 0.01
    assert eer == pytest.approx((mr + far) / 2)
