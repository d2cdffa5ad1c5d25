"""Daylight filtering and the seasonal, per-lead-time cross-validation split."""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from ..domain import season_of_month

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitSlice:
    season: str
    lead_time: int
    fold: int  # 1-based
    train: np.ndarray  # row ids into the case table
    test: np.ndarray

    def __post_init__(self):
        if np.intersect1d(self.train, self.test).size:
            raise ValueError("train and test cases overlap")

    @property
    def key(self) -> tuple:
        return (self.season, self.lead_time, self.fold)

    @property
    def label(self) -> str:
        return f"{self.season}_L{self.lead_time:02d}_F{self.fold}"


def daylight_mask(clearsky_wm2, threshold_wm2: float = 20.0) -> np.ndarray:
    return np.asarray(clearsky_wm2, dtype=float) > threshold_wm2


def daylight_filter(cases: pd.DataFrame, threshold_wm2: float = 20.0) -> pd.DataFrame:
    """Keep cases whose clear-sky irradiance is strictly above the threshold."""
    return cases[daylight_mask(cases["clearsky_wm2"], threshold_wm2)]


def issue_dates(keys: pd.DataFrame) -> np.ndarray:
    """Calendar date of the model run each case comes from."""
    init = pd.to_datetime(keys["valid_time"], utc=True) - pd.to_timedelta(keys["lead_time"], unit="h")
    return init.dt.tz_localize(None).values.astype("datetime64[D]")


def case_seasons(keys: pd.DataFrame) -> np.ndarray:
    months = pd.to_datetime(keys["valid_time"], utc=True).dt.month.values
    return np.array([season_of_month(m).value for m in months])


def date_blocks(dates, folds: int) -> list:
    """Split sorted distinct dates into ``folds`` consecutive blocks."""
    distinct = np.unique(np.asarray(dates))
    return np.array_split(distinct, folds)


def make_slices(keys: pd.DataFrame, eligible, seasons, lead_times, folds: int = 3, min_cases: int = 50) -> list:
    """Cross-validation slices per (season, lead time, fold).

    ``eligible`` marks cases usable for fitting (daylight and observed).
    Fold blocks are cut at whole dates of each season and shared by every
    lead time, so a date is never split between train and test.
    """
    eligible = np.asarray(eligible, dtype=bool)
    dates = issue_dates(keys)
    season = case_seasons(keys)
    lead = keys["lead_time"].to_numpy()
    out = []
    for s in seasons:
        in_season = eligible & (season == s) & np.isin(lead, list(lead_times))
        if not in_season.any():
            warnings.warn(f"season {s}: no eligible cases")
            continue
        blocks = date_blocks(dates[in_season], folds)
        emitted = 0
        for L in sorted(lead_times):
            rows = np.flatnonzero(in_season & (lead == L))
            for k, block in enumerate(blocks, start=1):
                is_test = np.isin(dates[rows], block)
                test, train = rows[is_test], rows[~is_test]
                if test.size < min_cases or train.size < min_cases:
                    logger.info("skip %s lead %d fold %d: %d train / %d test cases", s, L, k, train.size, test.size)
                    continue
                out.append(FitSlice(s, int(L), k, train, test))
                emitted += 1
        if emitted == 0:
            warnings.warn(f"season {s}: no slice has enough cases")
    return out
