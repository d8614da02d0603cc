"""Per-participant feature extraction and assembly of the feature matrix.

Combines activity-intensity breakdowns, distributional summaries of the raw
signals, dominant FFT frequencies, sleep metrics, and the circadian summary
into the registry-defined column set, then appends survey covariates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import registry
from .circadian import circadian_summary, daily_windows
from .errors import DataError, FitError, SchemaError
from .ingest import (
    MINUTES_PER_DAY,
    WEAR_MINUTES_PER_VALID_DAY,
    ConventionalRecord,
    EpochSeries,
)
from .matrix import FeatureMatrix
from .sleepwake import (
    UNKNOWN,
    WAKE,
    decode_states,
    extract_sleep_windows,
    fit_hmm,
    sleep_metrics,
)

log = logging.getLogger(__name__)

# MIMS cutpoints for older adults: below the range is sedentary, the closed
# interval is light, above it is moderate-to-vigorous
LIGHT_MIMS_MIN = 15.9
LIGHT_MIMS_MAX = 19.6


@dataclass(frozen=True)
class ActivityBreakdown:
    """Minutes per intensity category on each qualifying wear day."""

    dates: np.ndarray
    sedentary_minutes: np.ndarray
    light_minutes: np.ndarray
    mvpa_minutes: np.ndarray


def classify_activity(series: EpochSeries, states: np.ndarray) -> ActivityBreakdown:
    """Count sedentary/light/MVPA minutes over wear, non-sleep epochs.

    Only days with at least 960 wear minutes contribute, so partial first and
    last recording days do not drag the per-day averages down.
    """
    days = series.timestamps.astype("datetime64[D]")
    eligible = series.wear & (states == WAKE)
    mims = series.mims
    sedentary = eligible & (mims < LIGHT_MIMS_MIN)
    light = eligible & (mims >= LIGHT_MIMS_MIN) & (mims <= LIGHT_MIMS_MAX)
    mvpa = eligible & (mims > LIGHT_MIMS_MAX)

    dates, keep_sed, keep_light, keep_mvpa = [], [], [], []
    for day in np.unique(days):
        in_day = days == day
        if int((series.wear & in_day).sum()) < WEAR_MINUTES_PER_VALID_DAY:
            continue
        dates.append(day)
        keep_sed.append(int((sedentary & in_day).sum()))
        keep_light.append(int((light & in_day).sum()))
        keep_mvpa.append(int((mvpa & in_day).sum()))
    return ActivityBreakdown(
        dates=np.array(dates, dtype="datetime64[D]"),
        sedentary_minutes=np.array(keep_sed, dtype=float),
        light_minutes=np.array(keep_light, dtype=float),
        mvpa_minutes=np.array(keep_mvpa, dtype=float),
    )


@dataclass(frozen=True)
class SignalSummary:
    mean: float
    median: float
    sd: float
    max: float
    min: float
    q25: float
    q75: float
    skew: float
    kurtosis: float
    entropy: float


_NAN_SUMMARY = SignalSummary(*([math.nan] * 10))

MIN_SUMMARY_VALUES = 10


def vasicek_entropy(values: np.ndarray) -> float:
    """Differential entropy via the m-spacing estimator, m = floor(sqrt(n)).

    Samples with heavy ties produce zero spacings and an undefined estimate;
    those come back NaN rather than -inf.
    """
    x = np.sort(np.asarray(values, dtype=float))
    n = len(x)
    m = int(math.floor(math.sqrt(n)))
    if m < 1 or n < 2 * m:
        return math.nan
    upper = x[np.minimum(np.arange(n) + m, n - 1)]
    lower = x[np.maximum(np.arange(n) - m, 0)]
    spacings = (upper - lower) * (n / (2.0 * m))
    if np.any(spacings <= 0):
        return math.nan
    return float(np.mean(np.log(spacings)))


def summarize_signal(values: np.ndarray) -> SignalSummary:
    """Distributional summary of a raw signal (all wear minutes pooled).

    SD uses the n-1 denominator; skewness and kurtosis are the standardized
    third and fourth central moments (kurtosis is not excess-adjusted).
    """
    x = np.asarray(values, dtype=float)
    x = x[~np.isnan(x)]
    if x.size < MIN_SUMMARY_VALUES:
        return _NAN_SUMMARY
    m2 = float(np.mean((x - x.mean()) ** 2))
    if m2 > 0:
        m3 = float(np.mean((x - x.mean()) ** 3))
        m4 = float(np.mean((x - x.mean()) ** 4))
        skew = m3 / m2**1.5
        kurt = m4 / m2**2
    else:
        skew = kurt = math.nan
    return SignalSummary(
        mean=float(x.mean()),
        median=float(np.median(x)),
        sd=float(x.std(ddof=1)),
        max=float(x.max()),
        min=float(x.min()),
        q25=float(np.quantile(x, 0.25)),
        q75=float(np.quantile(x, 0.75)),
        skew=skew,
        kurtosis=kurt,
        entropy=vasicek_entropy(x),
    )


@dataclass(frozen=True)
class FftFrequencies:
    """Frequencies (cycles/day) of the largest-amplitude DFT bins, rank order."""

    frequencies: np.ndarray
    amplitudes: np.ndarray


def top_fft_frequencies(
    grid_values: np.ndarray, n_frequencies: int = registry.N_FFT_FEATURES
) -> FftFrequencies:
    """Dominant positive-frequency DFT bins of a minute-grid signal.

    Gaps are linearly interpolated and the mean removed. Amplitude ties break
    toward the lower frequency. DC is excluded.
    """
    x = fill_gaps_then_center(grid_values)
    n = len(x)
    spectrum = np.abs(np.fft.rfft(x))[1:]   # drop DC
    if len(spectrum) < n_frequencies:
        raise DataError(
            f"series has {len(spectrum)} positive bins, needs {n_frequencies}"
        )
    order = np.argsort(-spectrum, kind="stable")[:n_frequencies]
    bins = order + 1
    freqs_cpd = bins * (MINUTES_PER_DAY / n)
    return FftFrequencies(frequencies=freqs_cpd.astype(float), amplitudes=spectrum[order])


def fill_gaps_then_center(grid_values: np.ndarray) -> np.ndarray:
    from .circadian import fill_gaps_linear

    x = fill_gaps_linear(np.asarray(grid_values, dtype=float))
    return x - x.mean()


def _mean_sd(arr: np.ndarray) -> tuple[float, float]:
    if arr.size == 0:
        return math.nan, math.nan
    return (
        float(arr.mean()),
        float(arr.std(ddof=1)) if arr.size > 1 else math.nan,
    )


def extract_wearable_features(series: EpochSeries) -> dict[str, float]:
    """All wearable-derived registry features for one participant.

    A failed HMM fit (degenerate activity) leaves the sleep- and
    state-dependent features missing but still produces signal summaries and
    spectral features.
    """
    out: dict[str, float] = {}

    try:
        model = fit_hmm(series)
        states = decode_states(model, series)
    except (DataError, FitError) as exc:
        log.warning("%s: HMM unavailable (%s)", series.participant_id, exc)
        model = None
        states = np.full(series.n_records, UNKNOWN, dtype=np.int8)

    windows = extract_sleep_windows(states, series) if model is not None else []
    sm = sleep_metrics(windows)
    out.update({
        "sleep_onset_cmean": sm.onset_cmean,
        "sleep_onset_csd": sm.onset_csd,
        "sleep_offset_cmean": sm.offset_cmean,
        "sleep_offset_csd": sm.offset_csd,
        "sleep_duration_mean": sm.duration_mean,
        "sleep_duration_sd": sm.duration_sd,
        "sleep_efficiency_mean": sm.efficiency_mean,
        "sleep_efficiency_sd": sm.efficiency_sd,
    })

    if model is not None:
        breakdown = classify_activity(series, states)
        sed = _mean_sd(breakdown.sedentary_minutes)
        light = _mean_sd(breakdown.light_minutes)
        mvpa = _mean_sd(breakdown.mvpa_minutes)
    else:
        sed = light = mvpa = (math.nan, math.nan)
    out.update({
        "sedentary_min_mean": sed[0], "sedentary_min_sd": sed[1],
        "light_min_mean": light[0], "light_min_sd": light[1],
        "mvpa_min_mean": mvpa[0], "mvpa_min_sd": mvpa[1],
    })

    for signal in ("mims", "lux"):
        stats = summarize_signal(series.signal(signal)[series.wear])
        for key, value in asdict(stats).items():
            out[f"{signal}_{key}"] = value

    for signal in ("mims", "lux"):
        _, grid = series.minute_grid(signal)
        try:
            fft = top_fft_frequencies(grid)
            freqs = fft.frequencies
        except DataError:
            freqs = np.full(registry.N_FFT_FEATURES, math.nan)
        for r in range(registry.N_FFT_FEATURES):
            out[f"{signal}_fft_freq_{r + 1}"] = float(freqs[r])

    _, day_windows = daily_windows(series)
    summary = circadian_summary(series, day_windows, windows)
    out.update(asdict(summary))
    return out


def _extract_one(series: EpochSeries) -> tuple[str, dict[str, float]]:
    return series.participant_id, extract_wearable_features(series)


def extract_cohort(
    series_list: list[EpochSeries],
    conv: list[ConventionalRecord],
    cohort_ids: list[str],
    threads: int | None = 1,
) -> FeatureMatrix:
    """Feature matrix for a cohort; extraction runs per participant in parallel."""
    from .parallel import run_parallel

    wanted = set(cohort_ids)
    todo = [s for s in series_list if s.participant_id in wanted]
    rows = dict(run_parallel(_extract_one, todo, threads))
    return assemble_features(rows, conv, cohort_ids)


def _conv_value(value: int | None) -> float:
    return math.nan if value is None else float(value)


def assemble_features(
    wearable_rows: dict[str, dict[str, float]],
    conv: list[ConventionalRecord],
    cohort_ids: list[str],
) -> FeatureMatrix:
    """Merge wearable feature rows with survey covariates into the registry matrix."""
    conv_by_id = {c.participant_id: c for c in conv}
    missing = [pid for pid in cohort_ids if pid not in wearable_rows or pid not in conv_by_id]
    if missing:
        raise DataError(f"cohort ids without data: {missing[:5]}")

    values = np.full((len(cohort_ids), len(registry.REGISTRY)), np.nan)
    col_index = {name: j for j, name in enumerate(registry.REGISTRY)}
    for i, pid in enumerate(cohort_ids):
        row = wearable_rows[pid]
        extra = set(row) - set(col_index)
        if extra or len(row) != len(registry.WEARABLE_FEATURES):
            raise SchemaError(
                f"{pid}: wearable feature keys do not match the registry "
                f"(unexpected: {sorted(extra)[:3]})"
            )
        for name, value in row.items():
            values[i, col_index[name]] = value
        c = conv_by_id[pid]
        values[i, col_index["age"]] = _conv_value(c.age)
        values[i, col_index["sex"]] = _conv_value(c.sex)
        values[i, col_index["education"]] = _conv_value(c.education)
        values[i, col_index["marital"]] = _conv_value(c.marital)
        values[i, col_index["income"]] = _conv_value(c.income)
        values[i, col_index["diabetic"]] = _conv_value(c.diabetic)
        values[i, col_index["phq9"]] = _conv_value(c.phq9)
        values[i, col_index["adl_iadl"]] = _conv_value(c.adl_iadl)

    fm = FeatureMatrix(
        ids=list(cohort_ids),
        columns=list(registry.REGISTRY),
        values=values,
        kinds=dict(registry.COLUMN_KINDS),
        categories={k: dict(v) for k, v in registry.COLUMN_CATEGORIES.items()},
    )
    if len(fm.columns) != len(registry.REGISTRY):
        raise SchemaError("assembled matrix width does not match the registry")
    return fm
