"""Circular statistics and nonparametric circadian rhythm metrics.

Covers circular mean/SD on clock hours, daily least-active-5h (L5) and
most-active-10h (M10) window detection with relative amplitude, intradaily
variability, interdaily stability, and fixed-period FFT signal strengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import DataError
from .ingest import MINUTES_PER_DAY, EpochSeries

if TYPE_CHECKING:
    from .sleepwake import SleepWindow

HOURS_PER_DAY = 24.0
L5_MINUTES = 300
M10_MINUTES = 600
MIN_DAY_COVERAGE = 0.8
MIN_MINUTES_PER_HOUR = 30

# resultant length below this is treated as total dispersion: the circular
# mean is undefined and the SD saturates at the sentinel value
_DEGENERATE_RESULTANT = 1e-12
MAX_DISPERSION_SD = HOURS_PER_DAY / (2 * math.pi) * math.sqrt(-2 * math.log(_DEGENERATE_RESULTANT))


def circular_mean_sd(hours) -> tuple[float, float]:
    """Circular mean and SD of clock-hour values, both in hours.

    Hours map to angles with period 24. When the unit vectors cancel
    (antipodal data) the mean is NaN and the SD is MAX_DISPERSION_SD.
    """
    hours = np.asarray(hours, dtype=float)
    if hours.size == 0:
        raise DataError("circular_mean_sd: empty sample")
    theta = hours * (2 * math.pi / HOURS_PER_DAY)
    c = float(np.mean(np.cos(theta)))
    s = float(np.mean(np.sin(theta)))
    resultant = math.hypot(c, s)
    if resultant < _DEGENERATE_RESULTANT:
        return math.nan, MAX_DISPERSION_SD
    mean = math.atan2(s, c) * (HOURS_PER_DAY / (2 * math.pi)) % HOURS_PER_DAY
    if mean >= HOURS_PER_DAY:   # float wrap of values just below 0
        mean = 0.0
    sd = HOURS_PER_DAY / (2 * math.pi) * math.sqrt(-2 * math.log(min(resultant, 1.0)))
    return mean, max(sd, 0.0)


@dataclass(frozen=True)
class DayWindows:
    """L5/M10 placement for one calendar day (minutes index the day)."""

    l5_start: int
    l5_midpoint: float
    l5_activity: float
    m10_start: int
    m10_midpoint: float
    m10_activity: float
    relative_amplitude: float


def _sliding_means(values: np.ndarray, width: int) -> np.ndarray:
    """Mean of non-missing minutes per window; NaN where a window is empty."""
    filled = np.nan_to_num(values, nan=0.0)
    present = (~np.isnan(values)).astype(float)
    csum = np.concatenate(([0.0], np.cumsum(filled)))
    ccnt = np.concatenate(([0.0], np.cumsum(present)))
    sums = csum[width:] - csum[:-width]
    counts = ccnt[width:] - ccnt[:-width]
    with np.errstate(invalid="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1.0), np.nan)
    return means


def find_l5_m10(day_activity: np.ndarray) -> DayWindows | None:
    """Locate the day's L5 and M10 windows on a 1440-minute activity vector.

    Windows stay inside the calendar day (no midnight wrap; a cross-midnight
    low period splits across days, a documented limitation). Window score is
    the mean over non-missing minutes; ties go to the earliest start. Days
    with under 80% coverage are skipped.
    """
    day_activity = np.asarray(day_activity, dtype=float)
    if day_activity.shape != (MINUTES_PER_DAY,):
        raise ValueError("expected a 1440-minute vector")
    present = ~np.isnan(day_activity)
    if present.sum() < MIN_DAY_COVERAGE * MINUTES_PER_DAY:
        return None
    l5_means = _sliding_means(day_activity, L5_MINUTES)
    m10_means = _sliding_means(day_activity, M10_MINUTES)
    if np.all(np.isnan(l5_means)) or np.all(np.isnan(m10_means)):
        return None
    l5_start = int(np.nanargmin(l5_means))
    m10_start = int(np.nanargmax(m10_means))
    l5_act = float(l5_means[l5_start])
    m10_act = float(m10_means[m10_start])
    denom = m10_act + l5_act
    ra = (m10_act - l5_act) / denom if denom > 0 else 0.0
    return DayWindows(
        l5_start=l5_start,
        l5_midpoint=(l5_start + L5_MINUTES / 2) / 60.0 % HOURS_PER_DAY,
        l5_activity=l5_act,
        m10_start=m10_start,
        m10_midpoint=(m10_start + M10_MINUTES / 2) / 60.0 % HOURS_PER_DAY,
        m10_activity=m10_act,
        relative_amplitude=float(ra),
    )


def hourly_means(day_minutes: np.ndarray) -> np.ndarray:
    """24 hourly means from one day's minutes; hours with < 30 valid minutes are NaN."""
    m = np.asarray(day_minutes, dtype=float).reshape(24, 60)
    counts = (~np.isnan(m)).sum(axis=1)
    sums = np.nansum(m, axis=1)
    return np.where(
        counts >= MIN_MINUTES_PER_HOUR, sums / np.maximum(counts, 1), np.nan
    )


def intradaily_variability(hourly: np.ndarray) -> float:
    """Normalized mean-squared successive difference of one day's hourly means.

    IV = N * sum((x_i - x_{i-1})^2) / ((N-1) * sum((x_i - xbar)^2)) with
    differences taken between adjacent non-missing hours. NaN when fewer than
    two hours are available or the day has zero variance.
    """
    hourly = np.asarray(hourly, dtype=float)
    valid = ~np.isnan(hourly)
    n = int(valid.sum())
    if n < 2:
        return math.nan
    x = hourly[valid]
    dev2 = float(np.sum((x - x.mean()) ** 2))
    if dev2 == 0.0:
        return math.nan
    pair = valid[1:] & valid[:-1]
    diffs = hourly[1:][pair] - hourly[:-1][pair]
    return n * float(np.sum(diffs**2)) / ((n - 1) * dev2)


def interdaily_stability(hourly_matrix: np.ndarray) -> float:
    """Ratio of hour-of-day variance to total variance over a D x 24 matrix.

    1 means every day repeats the same 24-hour profile; NaN when total
    variance is zero.
    """
    m = np.asarray(hourly_matrix, dtype=float)
    if m.ndim != 2 or m.shape[1] != 24:
        raise ValueError("expected a D x 24 matrix of hourly means")
    valid = ~np.isnan(m)
    n = int(valid.sum())
    if n < 2:
        return math.nan
    xbar = float(np.nanmean(m))
    total = float(np.nansum((m - xbar) ** 2))
    if total == 0.0:
        return math.nan
    hour_has_data = valid.any(axis=0)
    hour_means = np.nanmean(m[:, hour_has_data], axis=0)
    p = int(hour_has_data.sum())
    return n * float(np.sum((hour_means - xbar) ** 2)) / (p * total)


def fill_gaps_linear(values: np.ndarray) -> np.ndarray:
    """Linear interpolation over NaN runs; edge gaps take the nearest value."""
    values = np.asarray(values, dtype=float)
    present = ~np.isnan(values)
    if not present.any():
        raise DataError("cannot interpolate an all-missing series")
    if present.all():
        return values.copy()
    idx = np.arange(len(values))
    return np.interp(idx, idx[present], values[present])


def spectral_strength(values: np.ndarray, period_hours: float) -> float:
    """DFT amplitude (2|X_k|/N) at the bin nearest to the target period.

    Missing minutes are interpolated and the mean removed first. Intended for
    multi-day minute series; raises if the series is shorter than one period.
    """
    period_minutes = period_hours * 60.0
    values = np.asarray(values, dtype=float)
    n = len(values)
    if n < period_minutes:
        raise DataError(f"series shorter than one {period_hours} h period")
    x = fill_gaps_linear(values)
    x = x - x.mean()
    spectrum = np.fft.rfft(x)
    k = int(round(n / period_minutes))
    k = min(max(k, 1), len(spectrum) - 1)
    return 2.0 * float(np.abs(spectrum[k])) / n


FIXED_PERIODS_HOURS = (24.0, 12.0, 8.0)


@dataclass(frozen=True)
class CircadianSummary:
    l5_midpoint_cmean: float
    l5_midpoint_csd: float
    m10_midpoint_cmean: float
    m10_midpoint_csd: float
    l5_activity_mean: float
    l5_activity_sd: float
    m10_activity_mean: float
    m10_activity_sd: float
    l5_lux_mean: float
    l5_lux_sd: float
    m10_lux_mean: float
    m10_lux_sd: float
    relative_amplitude_mean: float
    relative_amplitude_sd: float
    intradaily_variability_mean: float
    intradaily_variability_sd: float
    interdaily_stability: float
    mims_strength_24h: float
    mims_strength_12h: float
    mims_strength_8h: float
    lux_strength_24h: float
    lux_strength_12h: float
    lux_strength_8h: float
    lux_sleep_mean: float
    lux_sleep_sd: float
    lux_nonsleep_mean: float
    lux_nonsleep_sd: float


def _mean_sd(values: list[float] | np.ndarray) -> tuple[float, float]:
    arr = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if arr.size == 0:
        return math.nan, math.nan
    mean = float(arr.mean())
    sd = float(arr.std(ddof=1)) if arr.size > 1 else math.nan
    return mean, sd


def _window_mean(day_vector: np.ndarray, start: int, width: int) -> float:
    w = day_vector[start:start + width]
    if np.all(np.isnan(w)):
        return math.nan
    return float(np.nanmean(w))


def daily_windows(series: EpochSeries) -> tuple[np.ndarray, list[DayWindows | None]]:
    """find_l5_m10 applied to every calendar day of the series."""
    dates, act = series.day_grids("mims")
    return dates, [find_l5_m10(act[d]) for d in range(len(dates))]


def circadian_summary(
    series: EpochSeries,
    windows_by_day: list[DayWindows | None],
    sleep_windows: list[SleepWindow],
) -> CircadianSummary:
    """Aggregate daily circadian metrics into per-participant features."""
    dates, act = series.day_grids("mims")
    _, lux = series.day_grids("lux")
    if len(windows_by_day) != len(dates):
        raise ValueError("windows_by_day must align with the series' calendar days")

    l5_mids, m10_mids = [], []
    l5_acts, m10_acts, l5_luxes, m10_luxes, ras = [], [], [], [], []
    for d, w in enumerate(windows_by_day):
        if w is None:
            continue
        l5_mids.append(w.l5_midpoint)
        m10_mids.append(w.m10_midpoint)
        l5_acts.append(w.l5_activity)
        m10_acts.append(w.m10_activity)
        ras.append(w.relative_amplitude)
        l5_luxes.append(_window_mean(lux[d], w.l5_start, L5_MINUTES))
        m10_luxes.append(_window_mean(lux[d], w.m10_start, M10_MINUTES))

    if l5_mids:
        l5_cmean, l5_csd = circular_mean_sd(l5_mids)
        m10_cmean, m10_csd = circular_mean_sd(m10_mids)
    else:
        l5_cmean = l5_csd = m10_cmean = m10_csd = math.nan

    hourly = np.array([hourly_means(act[d]) for d in range(len(dates))])
    ivs = [intradaily_variability(hourly[d]) for d in range(len(dates))]
    is_value = interdaily_stability(hourly) if len(dates) >= 3 else math.nan

    strengths = {}
    for signal in ("mims", "lux"):
        _, grid = series.minute_grid(signal)
        for period in FIXED_PERIODS_HOURS:
            key = f"{signal}_strength_{int(period)}h"
            try:
                strengths[key] = spectral_strength(grid, period)
            except DataError:
                strengths[key] = math.nan

    lux_sleep, lux_nonsleep = _lux_by_sleep(series, sleep_windows)

    la_mean, la_sd = _mean_sd(l5_acts)
    ma_mean, ma_sd = _mean_sd(m10_acts)
    ll_mean, ll_sd = _mean_sd(l5_luxes)
    ml_mean, ml_sd = _mean_sd(m10_luxes)
    ra_mean, ra_sd = _mean_sd(ras)
    iv_mean, iv_sd = _mean_sd(ivs)
    ls_mean, ls_sd = _mean_sd(lux_sleep) if lux_sleep.size else (math.nan, math.nan)
    ln_mean, ln_sd = _mean_sd(lux_nonsleep) if lux_nonsleep.size else (math.nan, math.nan)

    return CircadianSummary(
        l5_midpoint_cmean=l5_cmean,
        l5_midpoint_csd=l5_csd,
        m10_midpoint_cmean=m10_cmean,
        m10_midpoint_csd=m10_csd,
        l5_activity_mean=la_mean,
        l5_activity_sd=la_sd,
        m10_activity_mean=ma_mean,
        m10_activity_sd=ma_sd,
        l5_lux_mean=ll_mean,
        l5_lux_sd=ll_sd,
        m10_lux_mean=ml_mean,
        m10_lux_sd=ml_sd,
        relative_amplitude_mean=ra_mean,
        relative_amplitude_sd=ra_sd,
        intradaily_variability_mean=iv_mean,
        intradaily_variability_sd=iv_sd,
        interdaily_stability=is_value,
        lux_sleep_mean=ls_mean,
        lux_sleep_sd=ls_sd,
        lux_nonsleep_mean=ln_mean,
        lux_nonsleep_sd=ln_sd,
        **strengths,
    )


def _lux_by_sleep(
    series: EpochSeries, sleep_windows: list[SleepWindow]
) -> tuple[np.ndarray, np.ndarray]:
    """Wear-minute lux values split into inside / outside the main sleep windows."""
    in_sleep = np.zeros(series.n_records, dtype=bool)
    for w in sleep_windows:
        in_sleep |= (series.timestamps >= w.onset) & (series.timestamps < w.offset)
    wear = series.wear
    return series.lux[wear & in_sleep], series.lux[wear & ~in_sleep]
