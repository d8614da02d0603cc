"""Epoch and survey ingestion, exclusion criteria, and outcome labels.

Input schemas (exact headers):

* epoch CSV:  ``participant_id,timestamp,mims,lux,wear``
  with timestamp formatted ``YYYY-MM-DDTHH:MM`` and wear in {0,1}.
* survey CSV: ``participant_id,age,sex,education,marital,income,diabetic,phq9,adl_iadl,cerad_wl,aft,dsst``
  with the empty string as the missing-value token. "Refused" / "don't know"
  survey codes must already be mapped to empty by the upstream adapter
  (see README, "NHANES adapter contract").

Epoch series are array-backed; per-row dataclass objects exist only for
iteration convenience since a cohort can hold tens of millions of epochs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import IO, Iterator

import numpy as np
import pandas as pd

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

EPOCH_HEADER = ["participant_id", "timestamp", "mims", "lux", "wear"]
SURVEY_HEADER = [
    "participant_id", "age", "sex", "education", "marital", "income",
    "diabetic", "phq9", "adl_iadl", "cerad_wl", "aft", "dsst",
]
TIMESTAMP_FORMAT = "%Y-%m-%dT%H:%M"

MINUTES_PER_DAY = 1440
WEAR_MINUTES_PER_VALID_DAY = 960   # 16 h of wear makes a day count


@dataclass(frozen=True)
class EpochRecord:
    participant_id: str
    timestamp: datetime
    mims: float
    lux: float
    wear: bool


@dataclass(frozen=True)
class EpochSeries:
    """One participant's minute-level record, time-sorted.

    ``timestamps`` is datetime64[m]; gaps between contiguous blocks are
    allowed, duplicates and unordered rows are not.
    """

    participant_id: str
    timestamps: np.ndarray
    mims: np.ndarray
    lux: np.ndarray
    wear: np.ndarray
    valid_days: int

    @property
    def n_records(self) -> int:
        return len(self.timestamps)

    def iter_records(self) -> Iterator[EpochRecord]:
        for i in range(self.n_records):
            yield EpochRecord(
                self.participant_id,
                self.timestamps[i].astype("datetime64[m]").item(),
                float(self.mims[i]),
                float(self.lux[i]),
                bool(self.wear[i]),
            )

    def signal(self, name: str) -> np.ndarray:
        if name == "mims":
            return self.mims
        if name == "lux":
            return self.lux
        raise ValueError(f"unknown signal {name!r}")

    def minute_grid(self, name: str) -> tuple[np.datetime64, np.ndarray]:
        """Signal resampled onto the full minute grid from first to last epoch.

        Non-wear and unrecorded minutes are NaN.
        """
        start = self.timestamps[0]
        n = int((self.timestamps[-1] - start) / np.timedelta64(1, "m")) + 1
        grid = np.full(n, np.nan)
        idx = ((self.timestamps - start) / np.timedelta64(1, "m")).astype(np.int64)
        vals = self.signal(name).astype(np.float64, copy=True)
        vals[~self.wear] = np.nan
        grid[idx] = vals
        return start, grid

    def day_grids(self, name: str) -> tuple[np.ndarray, np.ndarray]:
        """(D,) calendar dates and (D, 1440) per-day signal matrices, NaN-padded."""
        days = self.timestamps.astype("datetime64[D]")
        dates = np.unique(days)
        minute_of_day = ((self.timestamps - days) / np.timedelta64(1, "m")).astype(np.int64)
        day_index = np.searchsorted(dates, days)
        mat = np.full((len(dates), MINUTES_PER_DAY), np.nan)
        vals = self.signal(name).astype(np.float64, copy=True)
        vals[~self.wear] = np.nan
        mat[day_index, minute_of_day] = vals
        return dates, mat


@dataclass(frozen=True)
class ConventionalRecord:
    """Survey covariates; None marks a missing field."""

    participant_id: str
    age: int | None
    sex: int | None            # 0 = female, 1 = male
    education: int | None      # ordinal 1-5
    marital: int | None        # nominal 1-6
    income: int | None         # ordinal 1-12
    diabetic: int | None       # 0/1
    phq9: int | None           # 0-27
    adl_iadl: int | None       # 20-80


@dataclass(frozen=True)
class CognitiveScores:
    participant_id: str
    cerad_wl: int | None       # 0-40
    aft: int | None
    dsst: int | None           # 0-133

    @property
    def complete(self) -> bool:
        return self.cerad_wl is not None and self.aft is not None and self.dsst is not None


@dataclass(frozen=True)
class OutcomeLabels:
    participant_id: str
    poor_dsst: bool
    poor_cerad: bool
    poor_aft: bool
    cutoff_dsst: float
    cutoff_cerad: float
    cutoff_aft: float


@dataclass
class ParseReport:
    rows_total: int = 0
    rows_rejected: int = 0
    duplicates_dropped: int = 0
    field_errors: int = 0


@dataclass
class ParseResult:
    series: list[EpochSeries]
    report: ParseReport


def _count_valid_days(days: np.ndarray, wear: np.ndarray) -> int:
    if not wear.any():
        return 0
    _, counts = np.unique(days[wear], return_counts=True)
    return int((counts >= WEAR_MINUTES_PER_VALID_DAY).sum())


def parse_epochs(source: str | Path | IO[str]) -> ParseResult:
    """Parse an epoch CSV into one time-sorted series per participant.

    Rows with unparseable fields, negative mims/lux, or a wear flag outside
    {0,1} are rejected and counted. Duplicate (participant, timestamp) rows
    keep the first occurrence. A wrong header is fatal.
    """
    df = pd.read_csv(source, dtype=str, keep_default_na=False)
    if list(df.columns) != EPOCH_HEADER:
        raise SchemaError(f"epoch header {list(df.columns)} != {EPOCH_HEADER}")
    report = ParseReport(rows_total=len(df))
    ts = pd.to_datetime(df["timestamp"], format=TIMESTAMP_FORMAT, errors="coerce")
    mims = pd.to_numeric(df["mims"], errors="coerce")
    lux = pd.to_numeric(df["lux"], errors="coerce")
    wear = pd.to_numeric(df["wear"], errors="coerce")
    ok = (
        ts.notna()
        & (df["participant_id"] != "")
        & mims.notna() & (mims >= 0)
        & lux.notna() & (lux >= 0)
        & wear.isin([0, 1])
    )
    report.rows_rejected = int((~ok).sum())

    frame = pd.DataFrame({
        "pid": df["participant_id"][ok],
        "ts": ts[ok].to_numpy().astype("datetime64[m]"),
        "mims": mims[ok].to_numpy(),
        "lux": lux[ok].to_numpy(),
        "wear": wear[ok].to_numpy().astype(bool),
    })
    # keep='first' follows input order, then sort by time within participant
    before = len(frame)
    frame = frame.drop_duplicates(subset=["pid", "ts"], keep="first")
    report.duplicates_dropped = before - len(frame)
    frame = frame.sort_values(["pid", "ts"], kind="mergesort")

    series = []
    for pid, grp in frame.groupby("pid", sort=True):
        times = grp["ts"].to_numpy().astype("datetime64[m]")
        wear_arr = grp["wear"].to_numpy()
        series.append(
            EpochSeries(
                participant_id=str(pid),
                timestamps=times,
                mims=grp["mims"].to_numpy(),
                lux=grp["lux"].to_numpy(),
                wear=wear_arr,
                valid_days=_count_valid_days(times.astype("datetime64[D]"), wear_arr),
            )
        )
    if report.rows_rejected or report.duplicates_dropped:
        log.info(
            "parse_epochs: %d rows rejected, %d duplicates dropped",
            report.rows_rejected, report.duplicates_dropped,
        )
    return ParseResult(series=series, report=report)


def write_epochs(series_list: list[EpochSeries], dest: str | Path | IO[str]) -> None:
    """Serialize series back to the epoch CSV schema (round-trips with parse_epochs)."""
    frames = []
    for s in series_list:
        frames.append(pd.DataFrame({
            "participant_id": s.participant_id,
            "timestamp": pd.Series(s.timestamps).dt.strftime(TIMESTAMP_FORMAT),
            "mims": s.mims,
            "lux": s.lux,
            "wear": s.wear.astype(int),
        }))
    out = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=EPOCH_HEADER)
    out.to_csv(dest, index=False)


def _parse_int(raw: str, lo: int, hi: int, report: ParseReport) -> int | None:
    if raw == "":
        return None
    try:
        v = int(float(raw))
    except ValueError:
        report.field_errors += 1
        return None
    if not lo <= v <= hi:
        report.field_errors += 1
        return None
    return v


_SEX_CODES = {"female": 0, "male": 1}


def parse_survey(
    source: str | Path | IO[str],
) -> tuple[list[ConventionalRecord], list[CognitiveScores], ParseReport]:
    """Parse the survey CSV into covariate records and cognitive scores.

    Out-of-range values count as field errors and become missing; the row is
    kept. Participant ids must be unique.
    """
    df = pd.read_csv(source, dtype=str, keep_default_na=False)
    if list(df.columns) != SURVEY_HEADER:
        raise SchemaError(f"survey header {list(df.columns)} != {SURVEY_HEADER}")
    report = ParseReport(rows_total=len(df))
    if df["participant_id"].duplicated().any():
        raise SchemaError("duplicate participant_id in survey file")

    conv, scores = [], []
    for row in df.itertuples(index=False):
        pid = row.participant_id
        sex_raw = row.sex.strip().lower()
        sex = _SEX_CODES.get(sex_raw)
        if sex_raw and sex is None:
            report.field_errors += 1
        conv.append(ConventionalRecord(
            participant_id=pid,
            age=_parse_int(row.age, 0, 130, report),
            sex=sex,
            education=_parse_int(row.education, 1, 5, report),
            marital=_parse_int(row.marital, 1, 6, report),
            income=_parse_int(row.income, 1, 12, report),
            diabetic=_parse_int(row.diabetic, 0, 1, report),
            phq9=_parse_int(row.phq9, 0, 27, report),
            adl_iadl=_parse_int(row.adl_iadl, 20, 80, report),
        ))
        scores.append(CognitiveScores(
            participant_id=pid,
            cerad_wl=_parse_int(row.cerad_wl, 0, 40, report),
            aft=_parse_int(row.aft, 0, 10_000, report),
            dsst=_parse_int(row.dsst, 0, 133, report),
        ))
    return conv, scores, report


def write_survey(
    conv: list[ConventionalRecord],
    scores: list[CognitiveScores],
    dest: str | Path | IO[str],
) -> None:
    by_id = {s.participant_id: s for s in scores}

    def fmt(v) -> str:
        return "" if v is None else str(v)

    rows = []
    for c in conv:
        s = by_id[c.participant_id]
        rows.append({
            "participant_id": c.participant_id,
            "age": fmt(c.age),
            "sex": "" if c.sex is None else ("male" if c.sex else "female"),
            "education": fmt(c.education),
            "marital": fmt(c.marital),
            "income": fmt(c.income),
            "diabetic": fmt(c.diabetic),
            "phq9": fmt(c.phq9),
            "adl_iadl": fmt(c.adl_iadl),
            "cerad_wl": fmt(s.cerad_wl),
            "aft": fmt(s.aft),
            "dsst": fmt(s.dsst),
        })
    pd.DataFrame(rows, columns=SURVEY_HEADER).to_csv(dest, index=False)


MIN_AGE = 60
MIN_VALID_DAYS = 3


def apply_exclusions(
    series: list[EpochSeries],
    scores: list[CognitiveScores],
    conv: list[ConventionalRecord],
) -> list[str]:
    """Retained participant ids: age >= 60, >= 3 valid wear days, all tests done.

    Returned sorted by id so downstream row order is reproducible.
    """
    days_by_id = {s.participant_id: s.valid_days for s in series}
    conv_by_id = {c.participant_id: c for c in conv}
    retained = []
    for sc in scores:
        pid = sc.participant_id
        if pid not in days_by_id:
            log.info("excluding %s: no device data", pid)
            continue
        c = conv_by_id.get(pid)
        if c is None or c.age is None or c.age < MIN_AGE:
            continue
        if days_by_id[pid] < MIN_VALID_DAYS:
            continue
        if not sc.complete:
            continue
        retained.append(pid)
    return sorted(retained)


POOR_QUANTILE = 0.25


def label_outcomes(scores: list[CognitiveScores]) -> list[OutcomeLabels]:
    """Poor-cognition labels: score strictly below the cohort 25th quantile.

    Quantiles use linear interpolation between order statistics. Call after
    apply_exclusions so cutoffs come from the analysis cohort only.
    """
    if not scores:
        raise DataError("cannot label an empty cohort")
    if any(not s.complete for s in scores):
        raise DataError("label_outcomes requires complete cognitive scores")
    dsst = np.array([s.dsst for s in scores], dtype=float)
    cerad = np.array([s.cerad_wl for s in scores], dtype=float)
    aft = np.array([s.aft for s in scores], dtype=float)
    cut_dsst = float(np.quantile(dsst, POOR_QUANTILE))
    cut_cerad = float(np.quantile(cerad, POOR_QUANTILE))
    cut_aft = float(np.quantile(aft, POOR_QUANTILE))
    return [
        OutcomeLabels(
            participant_id=s.participant_id,
            poor_dsst=bool(d < cut_dsst),
            poor_cerad=bool(c < cut_cerad),
            poor_aft=bool(a < cut_aft),
            cutoff_dsst=cut_dsst,
            cutoff_cerad=cut_cerad,
            cutoff_aft=cut_aft,
        )
        for s, d, c, a in zip(scores, dsst, cerad, aft)
    ]
