import numpy as np
import pytest

from cogwear.ingest import EpochSeries, _count_valid_days


def make_series(
    mims,
    wear=None,
    lux=None,
    pid="P1",
    start="2011-01-03T00:00",
) -> EpochSeries:
    mims = np.asarray(mims, dtype=float)
    n = len(mims)
    timestamps = np.datetime64(start, "m") + np.arange(n).astype("timedelta64[m]")
    wear = np.ones(n, dtype=bool) if wear is None else np.asarray(wear, dtype=bool)
    lux = np.zeros(n) if lux is None else np.asarray(lux, dtype=float)
    return EpochSeries(
        participant_id=pid,
        timestamps=timestamps,
        mims=mims,
        lux=lux,
        wear=wear,
        valid_days=_count_valid_days(timestamps.astype("datetime64[D]"), wear),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20110103)
