import numpy as np
import pytest

from cogwear.circadian import daily_windows, spectral_strength
from cogwear.errors import DataError
from cogwear.features import extract_cohort, extract_wearable_features
from cogwear.ingest import apply_exclusions, label_outcomes, parse_epochs, parse_survey
from cogwear.learn import auc
from cogwear.simlab import (
    ClassParams,
    SimSpec,
    generate_cohort,
    generate_participant,
    oracle_features,
    write_cohort_csv,
)


def test_same_seed_bit_identical_cohort():
    spec = SimSpec(n_participants=6, days=4, prevalence=0.3, seed=42,
                   unaffected=ClassParams(noise_sd=0.3),
                   affected=ClassParams(noise_sd=0.3, score_mean=30.0))
    s1, c1, sc1, cl1 = generate_cohort(spec)
    s2, c2, sc2, cl2 = generate_cohort(spec)
    assert cl1 == cl2
    assert c1 == c2 and sc1 == sc2
    for a, b in zip(s1, s2):
        assert np.array_equal(a.mims, b.mims)
        assert np.array_equal(a.lux, b.lux)
        assert np.array_equal(a.timestamps, b.timestamps)


def test_invalid_specs_rejected():
    with pytest.raises(DataError):
        SimSpec(n_participants=1, prevalence=1.5)
    with pytest.raises(DataError):
        SimSpec(n_participants=1, days=2)
    with pytest.raises(DataError):
        SimSpec(n_participants=1, affected=ClassParams(sleep_duration_mean=25.0))
    with pytest.raises(DataError):
        SimSpec(n_participants=1, affected=ClassParams(noise_sd=-1.0))


def test_noise_free_sleep_duration_recovery():
    # zero noise, zero jitter, fixed 8 h sleep: the full extraction path must
    # hand back the generator's duration for every subject
    spec = SimSpec(n_participants=5, days=5, prevalence=0.4, seed=3)
    series, conv, scores, _ = generate_cohort(spec)
    for s in series:
        row = extract_wearable_features(s)
        assert abs(row["sleep_duration_mean"] - 8.0) <= 0.1
        assert row["sleep_efficiency_mean"] == pytest.approx(1.0)


def test_l5_jitter_separates_classes_single_feature():
    spec = SimSpec(
        n_participants=80, days=6, prevalence=0.5, seed=11,
        unaffected=ClassParams(noise_sd=0.3, l5_jitter_sd=0.0),
        affected=ClassParams(noise_sd=0.3, l5_jitter_sd=3.0, score_mean=30.0),
    )
    series, conv, scores, classes = generate_cohort(spec)
    fm = extract_cohort(series, conv, [s.participant_id for s in series], threads=1)
    feature = fm.column("l5_midpoint_csd")
    assert not np.isnan(feature).any()
    assert auc(feature, np.array(classes)) >= 0.9


def test_prevalence_binomial_label_count():
    spec = SimSpec(n_participants=1000, days=3, prevalence=0.25, seed=9,
                   affected=ClassParams(score_mean=30.0))
    _, _, scores, classes = generate_cohort(spec)
    assert 210 <= sum(classes) <= 290
    labels = label_outcomes(scores)
    poor = sum(l.poor_dsst for l in labels)
    assert 210 <= poor <= 290


def test_oracle_rect_profile_geometry():
    # classic rectangle: active 08:00-18:00 at 100, zero otherwise, i.e. a
    # 14-hour "night" starting 18:00
    spec = SimSpec(
        n_participants=1, days=4, prevalence=0.5, seed=0,
        unaffected=ClassParams(
            m10_level=100.0, l5_level=0.0, mvpa_minutes=0,
            sleep_onset_hour=18.0, sleep_duration_mean=14.0,
        ),
    )
    oracle = oracle_features(spec, affected=False)
    assert oracle["m10_midpoint_cmean"] == pytest.approx(13.0)
    assert oracle["l5_midpoint_cmean"] == pytest.approx(2.5)   # earliest all-zero window
    assert oracle["relative_amplitude_mean"] == pytest.approx(1.0)

    series, *_ = generate_participant(spec, 0)
    _, windows = daily_windows(series)
    interior = windows[1]                # day 1 has the steady-state geometry
    assert interior.m10_midpoint == pytest.approx(oracle["m10_midpoint_cmean"])
    assert interior.l5_midpoint == pytest.approx(oracle["l5_midpoint_cmean"])
    assert interior.relative_amplitude == pytest.approx(
        oracle["relative_amplitude_mean"])


def test_oracle_constant_profile_zero_ra():
    spec = SimSpec(
        n_participants=1, days=3, prevalence=0.5, seed=0,
        unaffected=ClassParams(m10_level=10.0, l5_level=10.0, mvpa_minutes=0,
                               mvpa_level=10.0),
    )
    oracle = oracle_features(spec, affected=False)
    assert oracle["relative_amplitude_mean"] == 0.0


def test_oracle_sine_spectral_strength():
    spec = SimSpec(
        n_participants=1, days=6, prevalence=0.5, seed=0, profile="sine",
        unaffected=ClassParams(m10_level=20.0, l5_level=2.0),
    )
    oracle = oracle_features(spec, affected=False)
    assert oracle["mims_strength_24h"] == pytest.approx(9.0)   # (20 - 2) / 2

    series, *_ = generate_participant(spec, 0)
    _, grid = series.minute_grid("mims")
    assert spectral_strength(grid, 24.0) == pytest.approx(9.0, rel=0.01)


def test_oracle_rejects_noisy_spec():
    spec = SimSpec(n_participants=1, days=3, prevalence=0.5,
                   unaffected=ClassParams(noise_sd=0.2))
    with pytest.raises(DataError):
        oracle_features(spec, affected=False)
    spec = SimSpec(n_participants=1, days=3, prevalence=0.5,
                   unaffected=ClassParams(l5_jitter_sd=1.0))
    with pytest.raises(DataError):
        oracle_features(spec, affected=False)


def test_emitted_csv_flows_through_ingest(tmp_path):
    spec = SimSpec(n_participants=8, days=4, prevalence=0.4, seed=5,
                   missing_rate=0.1,
                   unaffected=ClassParams(noise_sd=0.3),
                   affected=ClassParams(noise_sd=0.3, score_mean=30.0))
    epochs = tmp_path / "epochs.csv"
    survey = tmp_path / "survey.csv"
    write_cohort_csv(spec, epochs, survey)
    parsed = parse_epochs(epochs)
    conv, scores, report = parse_survey(survey)
    assert len(parsed.series) == 8
    assert parsed.report.rows_rejected == 0
    assert report.field_errors == 0
    kept = apply_exclusions(parsed.series, scores, conv)
    assert kept == sorted(s.participant_id for s in parsed.series)
