"""Nearest-donor imputation over z-standardized shared columns.

Distances between a target row and each donor use only the columns observed
in both, z-scored by donor-pool statistics. Each missing cell is filled from
the nearest donor that observes that column (value copied verbatim, so
ordinal and nominal codes stay valid). Fallbacks: a target row sharing no
columns with any donor takes column medians; a column absent from every
donor fills with 0 in z-space, i.e. the donor mean, with a warning.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ..matrix import FeatureMatrix

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ImputerConfig:
    k: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _zscore(values: np.ndarray, mean: np.ndarray, sd: np.ndarray) -> np.ndarray:
    z = (values - mean) / sd
    z[np.isnan(values)] = 0.0
    return z


def knn_impute(
    train: FeatureMatrix,
    target: FeatureMatrix,
    config: ImputerConfig = ImputerConfig(),
) -> FeatureMatrix:
    """Return a copy of ``target`` with missing cells filled from ``train`` donors.

    Non-missing cells are never altered. With k > 1, numeric cells take the
    mean over the k nearest eligible donors; nominal cells always copy the
    single nearest donor so codes stay valid.
    """
    if not set(target.columns) <= set(train.columns):
        raise ValueError("target columns must be a subset of train columns")
    donor = train.select_columns(target.columns)

    dvals = donor.values
    tvals = target.values.copy()
    t_missing = np.isnan(tvals)
    if not t_missing.any():
        return FeatureMatrix(
            ids=list(target.ids), columns=list(target.columns),
            values=tvals, kinds=dict(target.kinds),
            categories={k: dict(v) for k, v in target.categories.items()},
        )

    d_present = ~np.isnan(dvals)
    counts = d_present.sum(axis=0)
    col_mean = np.where(
        counts > 0,
        np.where(d_present, np.nan_to_num(dvals), 0.0).sum(axis=0) / np.maximum(counts, 1),
        0.0,
    )
    sq = np.where(d_present, np.nan_to_num(dvals - col_mean), 0.0) ** 2
    col_sd = np.where(
        counts > 1, np.sqrt(sq.sum(axis=0) / np.maximum(counts - 1, 1)), 1.0
    )
    col_sd = np.where(col_sd == 0.0, 1.0, col_sd)
    col_median = np.array([
        float(np.median(dvals[d_present[:, j], j])) if d_present[:, j].any() else np.nan
        for j in range(dvals.shape[1])
    ])

    zd = _zscore(dvals, col_mean, col_sd)
    zt = _zscore(target.values, col_mean, col_sd)
    t_present = ~t_missing

    # squared distance over shared columns via masked matrix products
    tp = t_present.astype(float)
    dp = d_present.astype(float)
    shared = tp @ dp.T
    d2 = (
        (zt**2 * tp) @ dp.T
        - 2.0 * (zt * tp) @ (zd * dp).T
        + tp @ (zd**2 * dp).T
    )
    d2 = np.where(shared > 0, np.maximum(d2, 0.0), np.inf)

    nominal_cols = {
        j for j, name in enumerate(target.columns)
        if target.kinds.get(name) == "nominal"
    }
    empty_donor_cols = set(np.flatnonzero(~d_present.any(axis=0)))
    if empty_donor_cols & set(np.flatnonzero(t_missing.any(axis=0))):
        log.warning(
            "columns missing in every donor filled with donor mean: %s",
            [target.columns[j] for j in sorted(empty_donor_cols)],
        )

    for j in np.flatnonzero(t_missing.any(axis=0)):
        rows = np.flatnonzero(t_missing[:, j])
        if j in empty_donor_cols:
            tvals[rows, j] = col_mean[j]
            continue
        eligible = np.flatnonzero(d_present[:, j])
        dist = d2[np.ix_(rows, eligible)]
        for ri, r in enumerate(rows):
            drow = dist[ri]
            if np.all(np.isinf(drow)):
                tvals[r, j] = col_median[j]
                continue
            if config.k == 1 or j in nominal_cols:
                tvals[r, j] = dvals[eligible[int(np.argmin(drow))], j]
            else:
                take = min(config.k, int(np.isfinite(drow).sum()))
                nearest = np.argsort(drow, kind="mergesort")[:take]
                tvals[r, j] = float(dvals[eligible[nearest], j].mean())

    return FeatureMatrix(
        ids=list(target.ids), columns=list(target.columns),
        values=tvals, kinds=dict(target.kinds),
        categories={k: dict(v) for k, v in target.categories.items()},
    )
