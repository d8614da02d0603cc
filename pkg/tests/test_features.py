import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cogwear import registry
from cogwear.errors import DataError
from cogwear.features import (
    classify_activity,
    extract_wearable_features,
    summarize_signal,
    top_fft_frequencies,
    vasicek_entropy,
)
from cogwear.ingest import ConventionalRecord
from cogwear.features import assemble_features
from cogwear.sleepwake import SLEEP, WAKE
from conftest import make_series


# ---------------------------------------------------------------------------
# activity categories

def _one_day_series(mims):
    return make_series(np.asarray(mims, dtype=float))


def test_cutpoint_boundaries():
    # 15.9 and 19.6 are light (closed interval); above 19.6 is MVPA
    mims = np.full(1440, 10.0)
    mims[0] = 15.9
    mims[1] = 19.6
    mims[2] = 19.61
    mims[3] = 15.89
    series = _one_day_series(mims)
    states = np.full(1440, WAKE, dtype=np.int8)
    b = classify_activity(series, states)
    assert b.light_minutes[0] == 2          # 15.9 and 19.6
    assert b.mvpa_minutes[0] == 1           # 19.61
    assert b.sedentary_minutes[0] == 1437   # 10.0 x 1436 plus 15.89


def test_sleep_and_nonwear_minutes_excluded():
    mims = np.full(1440, 30.0)
    series = make_series(mims, wear=np.r_[np.zeros(200, bool), np.ones(1240, bool)])
    states = np.full(1440, WAKE, dtype=np.int8)
    states[200:400] = SLEEP
    b = classify_activity(series, states)
    assert b.mvpa_minutes[0] == 1440 - 200 - 200


def test_days_under_wear_threshold_dropped():
    mims = np.full(2 * 1440, 5.0)
    wear = np.ones(2 * 1440, dtype=bool)
    wear[1440 + 959:] = False               # second day: 959 wear minutes
    series = make_series(mims, wear=wear)
    states = np.full(2 * 1440, WAKE, dtype=np.int8)
    b = classify_activity(series, states)
    assert len(b.dates) == 1


def test_category_counts_deterministic(rng):
    mims = rng.random(3 * 1440) * 40
    series = make_series(mims)
    states = np.full(3 * 1440, WAKE, dtype=np.int8)
    a, b = classify_activity(series, states), classify_activity(series, states)
    assert np.array_equal(a.sedentary_minutes, b.sedentary_minutes)
    assert np.array_equal(a.mvpa_minutes, b.mvpa_minutes)


# ---------------------------------------------------------------------------
# signal summaries

def test_summary_hand_values():
    s = summarize_signal(np.array([1, 2, 3, 4, 5] * 2, dtype=float))
    assert s.mean == pytest.approx(3.0)
    assert s.median == pytest.approx(3.0)
    assert s.q25 == pytest.approx(2.0)
    assert s.q75 == pytest.approx(4.0)
    assert s.min == 1.0 and s.max == 5.0


def test_summary_too_few_values_missing():
    s = summarize_signal(np.array([1.0, 2.0, 3.0, 4.0, 5.0]))
    assert all(math.isnan(v) for v in vars(s).values())


def test_summary_constant_vector():
    s = summarize_signal(np.full(50, 2.5))
    assert s.sd == 0.0
    assert math.isnan(s.skew)
    assert math.isnan(s.kurtosis)
    assert math.isnan(s.entropy)   # zero spacings would push the estimate to -inf


def test_entropy_standard_normal():
    x = np.random.default_rng(7).normal(size=10_000)
    expected = 0.5 * math.log(2 * math.pi * math.e)
    assert vasicek_entropy(x) == pytest.approx(expected, abs=0.05)


def test_skew_kurtosis_normal(rng):
    x = rng.normal(size=50_000)
    s = summarize_signal(x)
    assert s.skew == pytest.approx(0.0, abs=0.05)
    assert s.kurtosis == pytest.approx(3.0, abs=0.1)   # non-excess convention


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(min_value=-1e6, max_value=1e6), min_size=10, max_size=200))
def test_summary_order_statistics(values):
    s = summarize_signal(np.array(values))
    assert s.min <= s.q25 <= s.median <= s.q75 <= s.max


# ---------------------------------------------------------------------------
# FFT features

def test_two_tone_frequencies():
    n = 6 * 1440
    t = np.arange(n)
    x = np.sin(2 * math.pi * t / 1440) + 0.3 * np.sin(2 * math.pi * t / 720)
    fft = top_fft_frequencies(x)
    assert fft.frequencies[0] == pytest.approx(1.0)   # cycles/day
    assert fft.frequencies[1] == pytest.approx(2.0)
    assert np.all(np.diff(fft.amplitudes) <= 1e-12)


def test_pure_tone_rank_one():
    n = 4 * 1440
    x = 5.0 * np.sin(2 * math.pi * np.arange(n) / 1440)
    fft = top_fft_frequencies(x)
    assert fft.frequencies[0] == pytest.approx(1.0)


def test_amplitude_tie_breaks_to_lower_frequency():
    # an impulse has exactly flat positive-bin magnitudes, so every bin ties
    # and the ranks must come back as the 15 lowest frequencies in order
    n = 3 * 1440
    x = np.zeros(n)
    x[0] = 1.0
    fft = top_fft_frequencies(x)
    expected = (np.arange(1, 16)) * (1440 / n)
    assert np.allclose(fft.frequencies, expected)


def test_fft_bit_identical_reruns(rng):
    x = rng.random(3 * 1440)
    a = top_fft_frequencies(x)
    b = top_fft_frequencies(x)
    assert np.array_equal(a.frequencies, b.frequencies)
    assert np.array_equal(a.amplitudes, b.amplitudes)


def test_fft_too_short_error():
    with pytest.raises(DataError):
        top_fft_frequencies(np.ones(20))


def test_fft_interpolates_gaps():
    n = 3 * 1440
    x = 2.0 * np.sin(2 * math.pi * np.arange(n) / 1440)
    x[100:200] = np.nan
    fft = top_fft_frequencies(x)
    assert fft.frequencies[0] == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# assembly

def _conv(pid):
    return ConventionalRecord(pid, 70, 1, 3, 2, 5, 0, 3, 24)


def test_assemble_complete_participant(rng):
    mims = np.concatenate([
        np.r_[np.full(420, 2.0), np.full(960, 17.0), np.full(60, 2.0)]
        + rng.normal(0, 0.2, 1440).clip(-1.5)
        for _ in range(4)
    ]).clip(0)
    series = make_series(mims, pid="A", lux=rng.random(4 * 1440) * 100)
    row = extract_wearable_features(series)
    fm = assemble_features({"A": row}, [_conv("A")], ["A"])
    assert fm.columns == registry.REGISTRY
    assert fm.values.shape == (1, len(registry.REGISTRY))
    assert fm.column("age")[0] == 70.0
    assert fm.kinds["marital"] == "nominal"


def test_assemble_degenerate_activity_propagates_missing():
    series = make_series(np.full(4 * 1440, 3.0), pid="A")  # constant: no HMM fit
    row = extract_wearable_features(series)
    fm = assemble_features({"A": row}, [_conv("A")], ["A"])
    assert math.isnan(fm.column("sleep_duration_mean")[0])
    assert math.isnan(fm.column("sleep_onset_cmean")[0])
    assert fm.column("mims_mean")[0] == pytest.approx(3.0)
    assert fm.column("age")[0] == 70.0


def test_registry_candidate_sets():
    assert len(registry.REGISTRY) == len(set(registry.REGISTRY))
    assert set(registry.WEARABLE_CANDIDATES) == (
        set(registry.REGISTRY) - set(registry.CONVENTIONAL_ONLY_FEATURES)
    )
    assert set(registry.BENCHMARK_FEATURES) == {
        "age", "sex", "education", "marital", "income", "diabetic", "phq9", "adl_iadl",
    }
    combined = registry.combined_features(["mims_mean", "age"])
    assert combined == ["mims_mean", "age"] + registry.CONVENTIONAL_ONLY_FEATURES


def test_assemble_rejects_unknown_keys():
    with pytest.raises(Exception):
        assemble_features({"A": {"not_a_feature": 1.0}}, [_conv("A")], ["A"])
