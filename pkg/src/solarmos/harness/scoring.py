"""Score forecast tables into long-format metric, reliability and value tables.

Rows carry the slice keys (engine, season, lead_time, fold). Pooled rows
use ``fold = 0`` (all folds of one season and lead time) and additionally
``season = "All"``, ``lead_time = 0`` (every slice). Pooled skill scores
compare summed scores against each slice's own sample climatology.
"""
from __future__ import annotations

import numpy as np
import pandas as pd

from .. import verify

ALL = "All"
RAW = "RAW"
METRIC_COLUMNS = ["engine", "season", "lead_time", "fold", "metric", "threshold", "value"]
RELIABILITY_COLUMNS = ["engine", "season", "lead_time", "fold", "threshold", "bin", "lower", "upper",
                       "mean_forecast", "observed_freq", "count"]
PEV_COLUMNS = ["engine", "season", "lead_time", "fold", "threshold", "cost_loss", "value", "trigger"]
KEY_COLUMNS = ["engine", "season", "lead_time", "fold"]


def quantile_columns(levels) -> list:
    return [f"q{q:.2f}" for q in levels]


def levels_from_columns(columns) -> np.ndarray:
    return np.array([float(c[1:]) for c in columns if c.startswith("q") and c[1:].replace(".", "").isdigit()])


def _slice_sums(F, obs, raw, levels, thresholds):
    """Additive score components of one slice."""
    n = obs.size
    med = F[:, int(np.argmin(np.abs(levels - 0.5)))]
    clim = verify.climatology_quantiles(obs, levels)
    out = {
        "n": n,
        "se": float(np.sum((obs - med) ** 2)),
        "se_clim": float(np.sum((obs - obs.mean()) ** 2)),
        "crps": float(verify.crps_cases(F, obs).sum()),
        "crps_clim": float(verify.crps_cases(np.broadcast_to(clim, F.shape), obs).sum()),
        "se_raw": float(np.sum((obs - raw) ** 2)) if raw is not None else np.nan,
    }
    for t in thresholds:
        p = verify.event_probability(F, t)
        o = verify.event_outcome(obs, t)
        out[f"bs_{t}"] = float(np.sum((o - p) ** 2))
        out[f"bs_clim_{t}"] = float(np.sum((o - o.mean()) ** 2))
        if raw is not None:
            out[f"bs_raw_{t}"] = float(np.sum((o - verify.event_outcome(raw, t)) ** 2))
    return out


def _metrics_from_sums(s, thresholds, raw=False):
    rows = []
    n = s["n"]
    if raw:
        rows.append(("RMSE", np.nan, float(np.sqrt(s["se_raw"] / n))))
        rows.append(("RMSE_SS", np.nan, verify.skill_score(np.sqrt(s["se_raw"]), np.sqrt(s["se_clim"]))))
        for t in thresholds:
            rows.append(("BS", t, s[f"bs_raw_{t}"] / n))
            rows.append(("BSS", t, verify.skill_score(s[f"bs_raw_{t}"], s[f"bs_clim_{t}"])))
        rows.append(("N", np.nan, float(n)))
        return rows
    rows.append(("RMSE", np.nan, float(np.sqrt(s["se"] / n))))
    rows.append(("RMSE_SS", np.nan, verify.skill_score(np.sqrt(s["se"]), np.sqrt(s["se_clim"]))))
    rows.append(("CRPS", np.nan, s["crps"] / n))
    rows.append(("CRPSS", np.nan, verify.skill_score(s["crps"], s["crps_clim"])))
    for t in thresholds:
        rows.append(("BS", t, s[f"bs_{t}"] / n))
        rows.append(("BSS", t, verify.skill_score(s[f"bs_{t}"], s[f"bs_clim_{t}"])))
    rows.append(("N", np.nan, float(n)))
    return rows


def _add(acc, s):
    for k, v in s.items():
        acc[k] = acc.get(k, 0.0) + v


def score_forecasts(forecasts: pd.DataFrame, thresholds=(0.2, 0.5, 0.9), n_bins: int = 10, cost_loss=None):
    """Return ``(metrics, reliability, pev)`` long-format frames."""
    cost_loss = verify.default_cost_loss() if cost_loss is None else np.asarray(cost_loss)
    thresholds = tuple(float(t) for t in thresholds)
    metrics, rel_rows, pev_rows = [], [], []
    if forecasts.empty:
        return (pd.DataFrame(columns=METRIC_COLUMNS), pd.DataFrame(columns=RELIABILITY_COLUMNS),
                pd.DataFrame(columns=PEV_COLUMNS))
    qcols = [c for c in forecasts.columns if c.startswith("q")]
    levels = levels_from_columns(qcols)
    has_raw = "raw" in forecasts and forecasts["raw"].notna().all()

    engines = list(dict.fromkeys(forecasts["engine"]))
    for engine in engines:
        fe = forecasts[forecasts["engine"] == engine]
        overall: dict = {}
        pooled_probs = {t: [] for t in thresholds}
        pooled_obs = []
        for (season, lead), fsl in fe.groupby(["season", "lead_time"], sort=False):
            group: dict = {}
            for fold, fs in fsl.groupby("fold", sort=True):
                F = fs[qcols].to_numpy(float)
                obs = fs["observation"].to_numpy(float)
                raw = fs["raw"].to_numpy(float) if has_raw else None
                s = _slice_sums(F, obs, raw, levels, thresholds)
                for m, t, v in _metrics_from_sums(s, thresholds):
                    metrics.append((engine, season, int(lead), int(fold), m, t, v))
                _add(group, s)
                pooled_obs.append(obs)
                for t in thresholds:
                    pooled_probs[t].append(verify.event_probability(F, t))
            for m, t, v in _metrics_from_sums(group, thresholds):
                metrics.append((engine, season, int(lead), 0, m, t, v))
            _add(overall, group)
        for m, t, v in _metrics_from_sums(overall, thresholds):
            metrics.append((engine, ALL, 0, 0, m, t, v))

        obs_all = np.concatenate(pooled_obs)
        for t in thresholds:
            prob = np.concatenate(pooled_probs[t])
            outcome = verify.event_outcome(obs_all, t)
            diag = verify.reliability_from_probs(prob, outcome, n_bins)
            for b in range(n_bins):
                rel_rows.append((engine, ALL, 0, 0, t, b, diag.edges[b], diag.edges[b + 1],
                                 diag.mean_forecast[b], diag.observed_freq[b], int(diag.count[b])))
            value, trig = verify.pev_from_probs(prob, outcome > 0, verify.default_triggers(len(levels)), cost_loss)
            for a, v, tr in zip(cost_loss, value, trig):
                pev_rows.append((engine, ALL, 0, 0, t, float(a), float(v), float(tr)))

    if has_raw:
        cases = forecasts.drop_duplicates(["station_id", "valid_time", "lead_time"])
        raw_overall: dict = {}
        raw_obs, raw_val = [], []
        for _, fs in cases.groupby(["season", "lead_time", "fold"], sort=False):
            obs = fs["observation"].to_numpy(float)
            raw = fs["raw"].to_numpy(float)
            F = np.repeat(raw[:, None], len(levels), axis=1)
            _add(raw_overall, _slice_sums(F, obs, raw, levels, thresholds))
            raw_obs.append(obs)
            raw_val.append(raw)
        for m, t, v in _metrics_from_sums(raw_overall, thresholds, raw=True):
            metrics.append((RAW, ALL, 0, 0, m, t, v))
        obs_all, raw_all = np.concatenate(raw_obs), np.concatenate(raw_val)
        for t in thresholds:
            value = verify.deterministic_pev(raw_all, obs_all, t, cost_loss)
            for a, v in zip(cost_loss, value):
                pev_rows.append((RAW, ALL, 0, 0, t, float(a), float(v), 0.5))

    return (pd.DataFrame(metrics, columns=METRIC_COLUMNS), pd.DataFrame(rel_rows, columns=RELIABILITY_COLUMNS),
            pd.DataFrame(pev_rows, columns=PEV_COLUMNS))


def metric_value(metrics: pd.DataFrame, engine, metric, season=ALL, lead_time=0, fold=0, threshold=None) -> float:
    sel = (metrics["engine"] == engine) & (metrics["metric"] == metric) & (metrics["season"] == season) \
        & (metrics["lead_time"] == lead_time) & (metrics["fold"] == fold)
    if threshold is None:
        sel &= metrics["threshold"].isna()
    else:
        sel &= np.isclose(metrics["threshold"].astype(float), threshold)
    vals = metrics.loc[sel, "value"].to_numpy(float)
    if vals.size != 1:
        raise KeyError(f"no unique {metric} row for {engine}/{season}/{lead_time}/{fold}")
    return float(vals[0])
