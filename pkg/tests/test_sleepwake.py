import numpy as np
import pytest

from cogwear.errors import DataError, FitError
from cogwear.sleepwake import (
    SLEEP,
    UNKNOWN,
    WAKE,
    HmmModel,
    decode_states,
    decode_values,
    extract_sleep_windows,
    fit_gaussian_hmm,
    fit_hmm,
    path_loglik,
    sleep_metrics,
)
from conftest import make_series


def simulate_two_state(rng, n, means=(0.5, 3.0), sd=0.4, stay=0.95):
    states = np.empty(n, dtype=np.int8)
    states[0] = rng.integers(0, 2)
    flips = rng.random(n) >= stay
    for t in range(1, n):
        states[t] = 1 - states[t - 1] if flips[t] else states[t - 1]
    obs = np.where(states == 0, means[0], means[1]) + rng.normal(0, sd, n)
    return obs, states


def test_em_recovers_known_parameters(rng):
    obs, _ = simulate_two_state(rng, 6000)
    model = fit_gaussian_hmm(obs)
    assert abs(model.means[0] - 0.5) < 0.2
    assert abs(model.means[1] - 3.0) < 0.2
    assert np.allclose(model.transition.sum(axis=1), 1.0, atol=1e-9)


def test_decode_accuracy(rng):
    obs, truth = simulate_two_state(rng, 6000)
    model = fit_gaussian_hmm(obs)
    decoded = decode_values(model, obs)
    assert (decoded == truth).mean() >= 0.95


def test_constant_series_error():
    with pytest.raises(DataError):
        fit_gaussian_hmm(np.full(100, 2.5))


def test_low_mean_state_is_sleep(rng):
    obs, _ = simulate_two_state(rng, 3000)
    model = fit_gaussian_hmm(obs)
    assert model.means[0] < model.means[1]
    assert model.sleep_state == 0


def test_em_loglik_nondecreasing(rng):
    for _ in range(5):
        obs, _ = simulate_two_state(rng, 2000, means=(0.2, 1.8), sd=0.6)
        model = fit_gaussian_hmm(obs)
        diffs = np.diff(model.loglik_trace)
        assert np.all(diffs >= -1e-8)


def test_viterbi_beats_random_paths(rng):
    obs, _ = simulate_two_state(rng, 300)
    model = fit_gaussian_hmm(obs)
    best = path_loglik(model, obs, decode_values(model, obs))
    for _ in range(1000):
        random_path = rng.integers(0, 2, size=len(obs)).astype(np.int8)
        assert best >= path_loglik(model, obs, random_path)


def test_relabel_swap_leaves_decoding_unchanged(rng):
    obs, _ = simulate_two_state(rng, 2000)
    model = fit_gaussian_hmm(obs)
    order = np.array([1, 0])
    swapped = HmmModel(
        means=model.means[order],
        variances=model.variances[order],
        transition=model.transition[np.ix_(order, order)],
        initial=model.initial[order],
        loglik_trace=model.loglik_trace,
    )
    assert swapped.sleep_state == 1
    assert np.array_equal(decode_values(model, obs), decode_values(swapped, obs))


def test_fit_hmm_requires_three_valid_days():
    series = make_series(np.random.default_rng(0).random(1440))  # one day only
    with pytest.raises(FitError):
        fit_hmm(series)


def test_single_minute_strong_sleep_emission():
    model = HmmModel(
        means=np.array([0.0, 5.0]),
        variances=np.array([0.1, 0.1]),
        transition=np.array([[0.9, 0.1], [0.1, 0.9]]),
        initial=np.array([0.5, 0.5]),
        loglik_trace=np.array([0.0]),
    )
    assert decode_values(model, np.array([0.05]))[0] == 0


def test_all_nonwear_day_decodes_unknown(rng):
    obs, _ = simulate_two_state(rng, 4 * 1440, means=(0.7, 3.0))
    mims = np.expm1(np.clip(obs, 0, None))
    wear = np.ones(len(mims), dtype=bool)
    wear[1440:2880] = False  # second day off-wrist; three valid days remain
    series = make_series(mims, wear=wear)
    model = fit_hmm(series)
    states = decode_states(model, series)
    assert np.all(states[1440:2880] == UNKNOWN)
    assert np.all(states[:1440] != UNKNOWN)


def _series_with_states(segments, start="2011-01-03T12:00"):
    """Build a series plus a hand-written state array from (state, minutes) runs."""
    states = np.concatenate([np.full(m, s, dtype=np.int8) for s, m in segments])
    mims = np.where(states == SLEEP, 1.0, 30.0)
    series = make_series(mims, start=start)
    return series, states


def test_single_uninterrupted_window():
    # wake 12:00-23:00, sleep 23:00-07:00, wake 07:00-12:00
    series, states = _series_with_states(
        [(WAKE, 11 * 60), (SLEEP, 8 * 60), (WAKE, 5 * 60)]
    )
    windows = extract_sleep_windows(states, series)
    assert len(windows) == 1
    w = windows[0]
    assert str(w.onset) == "2011-01-03T23:00"
    assert str(w.offset) == "2011-01-04T07:00"
    assert w.minutes_asleep == 480
    assert w.window_minutes == 480


def test_gap_under_an_hour_merges():
    # sleep 23:00-03:00, wake 03:00-03:30, sleep 03:30-07:00
    series, states = _series_with_states([
        (WAKE, 11 * 60),
        (SLEEP, 4 * 60),
        (WAKE, 30),
        (SLEEP, 3 * 60 + 30),
        (WAKE, 5 * 60),
    ])
    windows = extract_sleep_windows(states, series)
    assert len(windows) == 1
    w = windows[0]
    assert str(w.onset) == "2011-01-03T23:00"
    assert str(w.offset) == "2011-01-04T07:00"
    assert w.minutes_asleep == 450
    assert w.window_minutes == 480


def test_gap_over_an_hour_does_not_merge():
    series, states = _series_with_states([
        (WAKE, 11 * 60),
        (SLEEP, 4 * 60),     # 23:00-03:00, 240 asleep
        (WAKE, 61),
        (SLEEP, 3 * 60),     # 04:01-07:01, 180 asleep
        (WAKE, 5 * 60 - 61),
    ])
    windows = extract_sleep_windows(states, series)
    assert len(windows) == 1
    assert windows[0].minutes_asleep == 240  # larger run wins


def test_short_bouts_yield_no_window():
    # 20-minute naps separated by 90-minute stretches awake
    segments = [(WAKE, 11 * 60)]
    for _ in range(5):
        segments += [(SLEEP, 20), (WAKE, 90)]
    segments += [(WAKE, 3 * 60)]
    series, states = _series_with_states(segments)
    assert extract_sleep_windows(states, series) == []


def test_efficiency_ratio():
    series, states = _series_with_states([
        (WAKE, 11 * 60),
        (SLEEP, 3 * 60),
        (WAKE, 24),
        (SLEEP, 4 * 60 + 36),  # 456 asleep in a 480-minute span
        (WAKE, 5 * 60),
    ])
    windows = extract_sleep_windows(states, series)
    metrics = sleep_metrics(windows)
    assert metrics.efficiency_mean == pytest.approx(0.95)
    assert metrics.duration_mean == pytest.approx(456 / 60)


def test_onset_circular_mean_across_midnight():
    # onsets at 23:00 and 01:00 on consecutive nights average to midnight
    series, states = _series_with_states(
        [(WAKE, 11 * 60), (SLEEP, 8 * 60), (WAKE, 5 * 60)]        # night 1: 23:00
        + [(WAKE, 13 * 60), (SLEEP, 7 * 60), (WAKE, 4 * 60)]      # night 2: 01:00
    )
    metrics = sleep_metrics(extract_sleep_windows(states, series))
    distance = min(metrics.onset_cmean, 24 - metrics.onset_cmean)
    assert distance < 1e-9
    assert metrics.onset_csd > 0


def test_no_windows_gives_missing_metrics():
    metrics = sleep_metrics([])
    assert np.isnan(metrics.duration_mean)
    assert np.isnan(metrics.onset_cmean)


def test_efficiency_bounds_and_duration_cap(rng):
    obs, _ = simulate_two_state(rng, 5 * 1440, means=(0.7, 3.0))
    mims = np.expm1(np.clip(obs, 0, None))
    series = make_series(mims)
    model = fit_hmm(series)
    windows = extract_sleep_windows(decode_states(model, series), series)
    for w in windows:
        assert 0 < w.minutes_asleep <= w.window_minutes
        assert w.minutes_asleep / w.window_minutes <= 1.0
        assert w.minutes_asleep / 60.0 <= 24.0
