"""Cross-validated comparison experiment: slice, fit, predict, score."""
from __future__ import annotations

import hashlib
import logging
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from threadpoolctl import threadpool_limits

from .. import engines as registry
from ..features import PredictorMatrix, build_predictor_matrix
from .config import ExperimentConfig
from .importance import aggregate_importance
from .scoring import quantile_columns, score_forecasts
from .slicing import FitSlice, case_seasons, daylight_mask, make_slices
from .synth import Dataset

logger = logging.getLogger(__name__)

SEASON_ORDER = ("Winter", "Spring", "Summer", "Autumn")
ERROR_COLUMNS = ["engine", "season", "lead_time", "fold", "error"]


@dataclass
class Cases:
    matrix: PredictorMatrix
    observation: np.ndarray  # clear-sky index, NaN when unobserved
    clearsky: np.ndarray
    raw: np.ndarray  # unsmoothed model global radiation as clear-sky index
    season: np.ndarray

    @property
    def eligible(self) -> np.ndarray:
        return np.isfinite(self.observation) & (self.clearsky > 0)

    def data_hash(self) -> str:
        h = hashlib.sha256(self.matrix.content_hash().encode())
        h.update(np.nan_to_num(self.observation, nan=-1.0).tobytes())
        return h.hexdigest()[:16]


def prepare_cases(ds: Dataset, config: ExperimentConfig) -> Cases:
    matrix = build_predictor_matrix(
        ds.fields, ds.station_meta(), ds.cams, ds.observations,
        clearsky_cfg=config.clearsky, temporal=config.temporal_smoothing, spatial=config.spatial_smoothing,
        min_clearsky_wm2=config.daylight_threshold_wm2,
    )
    extra = matrix.extra
    cs = extra["clearsky_wm2"].to_numpy(float)
    obs = extra["observation"].to_numpy(float)
    if np.any(obs[np.isfinite(obs)] < 0):
        raise ValueError("negative observations in the dataset")
    with np.errstate(divide="ignore", invalid="ignore"):
        raw = np.where(cs > 0, extra["G_wm2"].to_numpy(float) / cs, np.nan)
    return Cases(matrix, obs, cs, raw, case_seasons(matrix.keys))


def plan_slices(cases: Cases, config: ExperimentConfig) -> list:
    eligible = cases.eligible & daylight_mask(cases.clearsky, config.daylight_threshold_wm2)
    return make_slices(cases.matrix.keys, eligible, config.seasons, config.lead_times, config.folds, config.min_cases)


def cell_seed(root: int, engine: str, sl: FitSlice) -> int:
    """Per-cell seed, independent of execution order."""
    season_idx = SEASON_ORDER.index(sl.season)
    key = (registry.ENGINE_NAMES.index(engine), season_idx, sl.lead_time, sl.fold)
    return int(np.random.SeedSequence(root, spawn_key=key).generate_state(1, np.uint32)[0])


def matrix_hash(X) -> str:
    return hashlib.sha256(np.ascontiguousarray(X, dtype=np.float64).tobytes()).hexdigest()[:16]


@dataclass
class CellResult:
    engine: str
    key: tuple
    seed: int
    input_hash: str
    seconds: float = 0.0
    model: registry.FittedModel | None = None
    forecast: np.ndarray | None = None
    error: str | None = None


def _run_cell(args) -> CellResult:
    engine, key, seed, Xtr, ytr, Xte, names, levels, hyper = args
    res = CellResult(engine, key, seed, matrix_hash(np.vstack((Xtr, Xte))))
    t0 = time.perf_counter()
    with threadpool_limits(limits=1):
        try:
            model = registry.fit_engine(engine, Xtr, names, ytr, levels, hyper, seed)
            res.forecast = model.predict(Xte, names, levels)
            res.model = model
        except Exception as err:  # one failed cell must not stop the run
            res.error = f"{type(err).__name__}: {err}"
            logger.debug("%s", traceback.format_exc())
    res.seconds = time.perf_counter() - t0
    return res


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    data_hash: str
    slices: list
    models: dict = field(default_factory=dict)  # (engine, season, lead, fold) -> FittedModel
    forecasts: pd.DataFrame | None = None
    metrics: pd.DataFrame | None = None
    reliability: pd.DataFrame | None = None
    pev: pd.DataFrame | None = None
    importance: pd.DataFrame | None = None
    errors: pd.DataFrame | None = None


def forecast_frame(cases: Cases, sl: FitSlice, engine: str, F: np.ndarray, levels) -> pd.DataFrame:
    keys = cases.matrix.keys.iloc[sl.test].reset_index(drop=True)
    df = keys.copy()
    df.insert(0, "engine", engine)
    df["season"] = sl.season
    df["fold"] = sl.fold
    df["observation"] = cases.observation[sl.test]
    df["raw"] = cases.raw[sl.test]
    qcols = quantile_columns(levels)
    qdf = pd.DataFrame(F, columns=qcols)
    df = pd.concat([df, qdf], axis=1)
    df["median"] = F[:, int(np.argmin(np.abs(np.asarray(levels) - 0.5)))]
    return df


def fit_cells(cases: Cases, slices, config: ExperimentConfig, jobs: int = 1, progress=None):
    """Fit and predict every (slice, engine) cell; results in plan order."""
    levels = np.asarray(config.levels)
    names = list(cases.matrix.names)
    X = cases.matrix.values
    y = cases.observation
    tasks = []
    for sl in slices:
        for engine in config.engines:
            tasks.append((engine, sl.key, cell_seed(config.seed, engine, sl), X[sl.train], y[sl.train], X[sl.test],
                          names, levels, config.hyper[engine]))
    progress = progress if progress is not None else sys.stderr
    results = []
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for res in pool.map(_run_cell, tasks, chunksize=1):
                results.append(res)
                _report(progress, res)
    else:
        for t in tasks:
            res = _run_cell(t)
            results.append(res)
            _report(progress, res)
    by_slice: dict = {}
    for res in results:
        by_slice.setdefault(res.key, set()).add(res.input_hash)
    if any(len(h) != 1 for h in by_slice.values()):
        raise RuntimeError("engines of one slice saw different predictor matrices")
    return results


def _report(stream, res: CellResult):
    if stream is None:
        return
    season, lead, fold = res.key
    status = "ok" if res.error is None else f"FAILED {res.error}"
    print(f"[cell] {res.engine} {season} lead {lead} fold {fold}: {status} ({res.seconds:.1f} s)", file=stream, flush=True)


def forecast_table(cases: Cases, slices, predictions, levels) -> pd.DataFrame:
    """Stack ``(engine, slice key, quantile array)`` triples in a fixed order."""
    slice_of = {sl.key: sl for sl in slices}
    frames = [forecast_frame(cases, slice_of[key], engine, F, levels) for engine, key, F in predictions]
    if not frames:
        return pd.DataFrame()
    fc = pd.concat(frames, ignore_index=True)
    fc["_e"] = fc["engine"].map({e: i for i, e in enumerate(registry.ENGINE_NAMES)})
    fc["_s"] = fc["season"].map({s: i for i, s in enumerate(SEASON_ORDER)})
    fc = fc.sort_values(["_e", "_s", "lead_time", "fold", "station_id", "valid_time"], kind="mergesort")
    return fc.drop(columns=["_e", "_s"]).reset_index(drop=True)


def predict_slices(cases: Cases, slices, models: dict, levels) -> pd.DataFrame:
    """Forecast each model's own test fold; ``models`` is keyed like the results."""
    slice_of = {sl.key: sl for sl in slices}
    names = list(cases.matrix.names)
    preds = []
    for (engine, *key), model in models.items():
        sl = slice_of.get(tuple(key))
        if sl is None:
            raise KeyError(f"no slice {tuple(key)} in this dataset for the {engine} model")
        with threadpool_limits(limits=1):
            preds.append((engine, sl.key, model.predict(cases.matrix.values[sl.test], names, levels)))
    return forecast_table(cases, slices, preds, levels)


def assemble(cases: Cases, slices, results, config: ExperimentConfig) -> ExperimentResult:
    levels = list(config.levels)
    out = ExperimentResult(config, cases.data_hash(), slices)
    preds, errors = [], []
    for res in results:
        if res.error is not None:
            errors.append((res.engine, *res.key, res.error))
            continue
        out.models[(res.engine, *res.key)] = res.model
        preds.append((res.engine, res.key, res.forecast))
    out.forecasts = forecast_table(cases, slices, preds, levels)
    out.metrics, out.reliability, out.pev = score_forecasts(
        out.forecasts, config.event_thresholds, config.reliability_bins)
    out.importance = aggregate_importance(out.models, cases.matrix.names)
    out.errors = pd.DataFrame(errors, columns=ERROR_COLUMNS)
    return out


def run_experiment(ds: Dataset, config: ExperimentConfig, jobs: int = 1, progress=None) -> ExperimentResult:
    cases = prepare_cases(ds, config)
    slices = plan_slices(cases, config)
    results = fit_cells(cases, slices, config, jobs, progress)
    return assemble(cases, slices, results, config)
