"""Seeded synthetic cohorts for desk-scale end-to-end validation.

Participants belong to one of two latent classes (the "affected" class maps
to poor cognitive scores). Each class has its own rectangular diurnal
profile: a nightly sleep block of low activity, daytime wake activity with a
fixed higher-intensity block, lux tracking the profile, and optional
Gaussian noise plus day-to-day phase jitter. A sinusoidal profile exists for
spectral-feature oracles. Closed-form expected feature values are available
for noise-free specs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import DataError
from .ingest import (
    MINUTES_PER_DAY,
    CognitiveScores,
    ConventionalRecord,
    EpochSeries,
)

BASE_DATE = np.datetime64("2011-01-03T00:00", "m")


@dataclass(frozen=True)
class ClassParams:
    """Generative parameters for one latent class."""

    m10_level: float = 17.0          # wake-time MIMS
    l5_level: float = 2.0            # sleep-time MIMS
    mvpa_level: float = 30.0         # intensity inside the daily active block
    mvpa_minutes: int = 60
    l5_jitter_sd: float = 0.0        # hours; day-to-day phase jitter of the night
    sleep_onset_hour: float = 23.0
    sleep_onset_jitter_sd: float = 0.0
    sleep_duration_mean: float = 8.0  # hours
    sleep_duration_sd: float = 0.0
    lux_day: float = 300.0
    lux_night: float = 1.0
    noise_sd: float = 0.0           # SD of log-space (multiplicative) signal noise
    age_mean: float = 70.0
    age_sd: float = 5.0
    phq9_mean: float = 3.0
    phq9_sd: float = 2.0
    adl_mean: float = 25.0
    adl_sd: float = 4.0
    score_mean: float = 80.0         # DSST scale; other tests scale down
    score_sd: float = 5.0


@dataclass(frozen=True)
class SimSpec:
    n_participants: int
    days: int = 7
    prevalence: float = 0.25
    affected: ClassParams = ClassParams(score_mean=30.0)
    unaffected: ClassParams = ClassParams()
    profile: str = "rect"            # "rect" or "sine"
    missing_rate: float = 0.0        # chance a survey covariate is blanked
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.prevalence < 1.0:
            raise DataError("prevalence must lie in (0, 1)")
        if self.days < 3:
            raise DataError("need at least 3 days per participant")
        if self.profile not in ("rect", "sine"):
            raise DataError(f"unknown profile {self.profile!r}")
        for cp in (self.affected, self.unaffected):
            if cp.sleep_duration_mean >= 24.0:
                raise DataError("sleep duration must be below 24 h")
            for name in ("l5_jitter_sd", "sleep_onset_jitter_sd",
                         "sleep_duration_sd", "noise_sd"):
                if getattr(cp, name) < 0:
                    raise DataError(f"{name} must be >= 0")


def _participant_rngs(spec: SimSpec, n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(spec.seed).spawn(n)
    return [np.random.default_rng(c) for c in children]


def _sleep_mask(spec: SimSpec, cp: ClassParams, rng: np.random.Generator) -> np.ndarray:
    # day -1 exists so the first calendar day gets its morning sleep spill
    total = spec.days * MINUTES_PER_DAY
    asleep = np.zeros(total, dtype=bool)
    for day in range(-1, spec.days):
        onset_h = (
            cp.sleep_onset_hour
            + rng.normal(0.0, cp.sleep_onset_jitter_sd)
            + rng.normal(0.0, cp.l5_jitter_sd)
        )
        duration_h = min(max(rng.normal(cp.sleep_duration_mean, cp.sleep_duration_sd), 0.5), 23.0)
        start = day * MINUTES_PER_DAY + int(round(onset_h * 60.0))
        end = start + int(round(duration_h * 60.0))
        asleep[max(start, 0):min(end, total)] = True
    return asleep


def _rect_signals(
    spec: SimSpec, cp: ClassParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    total = spec.days * MINUTES_PER_DAY
    asleep = _sleep_mask(spec, cp, rng)
    activity = np.where(asleep, cp.l5_level, cp.m10_level).astype(float)
    lux = np.where(asleep, cp.lux_night, cp.lux_day).astype(float)
    # one higher-intensity block per day, mid-morning, wake minutes only
    for day in range(spec.days):
        start = day * MINUTES_PER_DAY + 10 * 60
        block = slice(start, min(start + cp.mvpa_minutes, total))
        activity[block] = np.where(asleep[block], activity[block], cp.mvpa_level)
    return _apply_noise(activity, cp, rng), _apply_noise(lux, cp, rng)


def _apply_noise(signal: np.ndarray, cp: ClassParams, rng: np.random.Generator) -> np.ndarray:
    # multiplicative noise: wearable signals spread with level, and the
    # sleep/wake model assumes Gaussian structure on the log scale
    if cp.noise_sd <= 0:
        return signal
    noisy = np.expm1(np.log1p(signal) + rng.normal(0.0, cp.noise_sd, len(signal)))
    return np.maximum(noisy, 0.0)


def _sine_signals(
    spec: SimSpec, cp: ClassParams, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    total = spec.days * MINUTES_PER_DAY
    t = np.arange(total)
    amplitude = (cp.m10_level - cp.l5_level) / 2.0
    mid = (cp.m10_level + cp.l5_level) / 2.0
    # trough at 04:00 so the least active period sits in the night
    phase = 2.0 * math.pi * (t - 4 * 60) / MINUTES_PER_DAY - math.pi / 2.0
    activity = mid + amplitude * np.sin(phase)
    lux_amp = (cp.lux_day - cp.lux_night) / 2.0
    lux = (cp.lux_day + cp.lux_night) / 2.0 + lux_amp * np.sin(phase)
    return _apply_noise(activity, cp, rng), _apply_noise(lux, cp, rng)


def _maybe_missing(value: int, rng: np.random.Generator, rate: float) -> int | None:
    return None if rate > 0 and rng.random() < rate else value


def _survey_records(
    pid: str, cp: ClassParams, rng: np.random.Generator, missing_rate: float
) -> tuple[ConventionalRecord, CognitiveScores]:
    age = int(round(min(max(rng.normal(cp.age_mean, cp.age_sd), 60), 90)))
    conv = ConventionalRecord(
        participant_id=pid,
        age=age,
        sex=int(rng.integers(0, 2)),
        education=int(rng.integers(1, 6)),
        marital=_maybe_missing(int(rng.integers(1, 7)), rng, missing_rate),
        income=_maybe_missing(int(rng.integers(1, 13)), rng, missing_rate),
        diabetic=int(rng.random() < 0.25),
        phq9=_maybe_missing(
            int(round(min(max(rng.normal(cp.phq9_mean, cp.phq9_sd), 0), 27))),
            rng, missing_rate,
        ),
        adl_iadl=_maybe_missing(
            int(round(min(max(rng.normal(cp.adl_mean, cp.adl_sd), 20), 80))),
            rng, missing_rate,
        ),
    )
    dsst = int(round(min(max(rng.normal(cp.score_mean, cp.score_sd), 0), 133)))
    cerad = int(round(min(max(rng.normal(cp.score_mean * 0.3, cp.score_sd * 0.3), 0), 40)))
    aft = int(round(min(max(rng.normal(cp.score_mean * 0.25, cp.score_sd * 0.25), 0), 60)))
    scores = CognitiveScores(participant_id=pid, cerad_wl=cerad, aft=aft, dsst=dsst)
    return conv, scores


def generate_participant(
    spec: SimSpec, index: int, rng: np.random.Generator | None = None
) -> tuple[EpochSeries, ConventionalRecord, CognitiveScores, bool]:
    """One participant's epoch series, survey records, and latent class flag."""
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(index + 1)[index])
    affected = bool(rng.random() < spec.prevalence)
    cp = spec.affected if affected else spec.unaffected
    make = _rect_signals if spec.profile == "rect" else _sine_signals
    activity, lux = make(spec, cp, rng)
    total = spec.days * MINUTES_PER_DAY
    pid = f"S{index:05d}"
    series = EpochSeries(
        participant_id=pid,
        timestamps=BASE_DATE + np.arange(total).astype("timedelta64[m]"),
        mims=activity,
        lux=lux,
        wear=np.ones(total, dtype=bool),
        valid_days=spec.days,
    )
    conv, scores = _survey_records(pid, cp, rng, spec.missing_rate)
    return series, conv, scores, affected


def generate_cohort(
    spec: SimSpec,
) -> tuple[list[EpochSeries], list[ConventionalRecord], list[CognitiveScores], list[bool]]:
    """Full cohort; identical spec (and seed) reproduces it bit for bit."""
    rngs = _participant_rngs(spec, spec.n_participants)
    series, conv, scores, classes = [], [], [], []
    for i in range(spec.n_participants):
        s, c, sc, affected = generate_participant(spec, i, rngs[i])
        series.append(s)
        conv.append(c)
        scores.append(sc)
        classes.append(affected)
    return series, conv, scores, classes


def write_cohort_csv(spec: SimSpec, epochs_path, survey_path) -> list[bool]:
    """Emit the cohort through the production CSV schemas; returns class flags."""
    from .ingest import write_epochs, write_survey

    series, conv, scores, classes = generate_cohort(spec)
    write_epochs(series, epochs_path)
    write_survey(conv, scores, survey_path)
    return classes


def _require_noise_free(cp: ClassParams) -> None:
    if any(
        getattr(cp, name) > 0
        for name in ("noise_sd", "l5_jitter_sd", "sleep_onset_jitter_sd", "sleep_duration_sd")
    ):
        raise DataError("oracle features are defined only for noise-free specs")


def oracle_features(spec: SimSpec, affected: bool) -> dict[str, float]:
    """Closed-form expected features from the generator's geometry (noise-free only).

    L5/M10 placement is brute-forced over the deterministic day profile with
    plain loops, independent of the production sliding-window code.
    """
    cp = spec.affected if affected else spec.unaffected
    _require_noise_free(cp)

    if spec.profile == "sine":
        return {
            "mims_strength_24h": (cp.m10_level - cp.l5_level) / 2.0,
            "lux_strength_24h": (cp.lux_day - cp.lux_night) / 2.0,
            "relative_amplitude_mean": _oracle_ra_sine(cp),
        }

    # deterministic day profile, day >= 1 so the sleep block wraps in
    rng = np.random.default_rng(0)
    activity, _ = _rect_signals(replace(spec, days=max(spec.days, 2)), cp, rng)
    day = activity[MINUTES_PER_DAY:2 * MINUTES_PER_DAY]

    def window_mean(start: int, width: int) -> float:
        return float(np.mean(day[start:start + width]))

    l5_best, l5_start = math.inf, 0
    m10_best, m10_start = -math.inf, 0
    for s in range(MINUTES_PER_DAY - 300 + 1):
        m = window_mean(s, 300)
        if m < l5_best:
            l5_best, l5_start = m, s
    for s in range(MINUTES_PER_DAY - 600 + 1):
        m = window_mean(s, 600)
        if m > m10_best:
            m10_best, m10_start = m, s

    denom = m10_best + l5_best
    return {
        "sleep_duration_mean": cp.sleep_duration_mean,
        "sleep_efficiency_mean": 1.0,
        "sleep_onset_cmean": cp.sleep_onset_hour % 24.0,
        "sleep_offset_cmean": (cp.sleep_onset_hour + cp.sleep_duration_mean) % 24.0,
        "l5_midpoint_cmean": (l5_start + 150) / 60.0 % 24.0,
        "m10_midpoint_cmean": (m10_start + 300) / 60.0 % 24.0,
        "l5_activity_mean": l5_best,
        "m10_activity_mean": m10_best,
        "relative_amplitude_mean": (m10_best - l5_best) / denom if denom > 0 else 0.0,
    }


def _oracle_ra_sine(cp: ClassParams) -> float:
    # mean of a sinusoid over a window of half-width w around its extremum:
    # mid +/- amplitude * sinc-style factor sin(pi w / 720) / (pi w / 720)
    amplitude = (cp.m10_level - cp.l5_level) / 2.0
    mid = (cp.m10_level + cp.l5_level) / 2.0

    def window_extreme(width: float, high: bool) -> float:
        half = math.pi * width / 2.0 / (MINUTES_PER_DAY / 2.0)
        factor = math.sin(half) / half
        return mid + (amplitude if high else -amplitude) * factor

    m10 = window_extreme(600.0, True)
    l5 = window_extreme(300.0, False)
    return (m10 - l5) / (m10 + l5)
