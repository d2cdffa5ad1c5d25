"""Comparison tables for external plotting, one per figure kind."""
from __future__ import annotations

import pandas as pd

from ..engines import ENGINE_NAMES
from .scoring import ALL, RAW

METHOD_ORDER = ENGINE_NAMES + (RAW,)
SEASON_ORDER = ("Winter", "Spring", "Summer", "Autumn", ALL)


def _methods(df) -> list:
    present = set(df["engine"])
    return [m for m in METHOD_ORDER if m in present] + sorted(present - set(METHOD_ORDER))


def _wide(df, index, value="value") -> pd.DataFrame:
    if df.empty:
        return pd.DataFrame(columns=list(index))
    table = df.pivot_table(index=list(index), columns="engine", values=value, aggfunc="first", dropna=False)
    table = table.reindex(columns=_methods(df)).reset_index()
    table.columns.name = None
    if "season" in table:
        table["_s"] = table["season"].map({s: i for i, s in enumerate(SEASON_ORDER)})
        table = table.sort_values(["_s"] + [c for c in index if c != "season"], kind="mergesort").drop(columns="_s")
    return table.reset_index(drop=True)


def skill_vs_lead(metrics: pd.DataFrame, names=("CRPSS", "RMSE_SS")) -> pd.DataFrame:
    """Per season and lead time, pooled over folds."""
    sel = metrics[metrics["metric"].isin(names) & (metrics["fold"] == 0) & (metrics["season"] != ALL)]
    return _wide(sel, ("metric", "season", "lead_time"))


def bss_vs_threshold(metrics: pd.DataFrame) -> pd.DataFrame:
    sel = metrics[(metrics["metric"] == "BSS") & (metrics["season"] == ALL)]
    return _wide(sel, ("threshold",))


def overall_scores(metrics: pd.DataFrame) -> pd.DataFrame:
    sel = metrics[(metrics["season"] == ALL) & metrics["threshold"].isna()]
    return _wide(sel, ("metric",))


def reliability_table(reliability: pd.DataFrame) -> pd.DataFrame:
    cols = ["engine", "threshold", "bin", "lower", "upper", "mean_forecast", "observed_freq", "count"]
    df = reliability[cols].copy()
    df["_e"] = df["engine"].map({m: i for i, m in enumerate(METHOD_ORDER)})
    return df.sort_values(["_e", "threshold", "bin"], kind="mergesort").drop(columns="_e").reset_index(drop=True)


def pev_table(pev: pd.DataFrame) -> pd.DataFrame:
    return _wide(pev, ("threshold", "cost_loss"))


def importance_table(importance: pd.DataFrame, top: int = 10) -> pd.DataFrame:
    """Top-``top`` predictors per family and engine, one rank per row."""
    df = importance[importance["rank"] <= top]
    if df.empty:
        return pd.DataFrame(columns=["family", "rank"])
    out = []
    for family, part in df.groupby("family", sort=True):
        engines = ["all"] + [e for e in ENGINE_NAMES if e in set(part["engine"])]
        wide = part.pivot_table(index="rank", columns="engine", values="predictor", aggfunc="first")
        wide = wide.reindex(columns=engines).reset_index()
        wide.insert(0, "family", family)
        out.append(wide)
    table = pd.concat(out, ignore_index=True)
    table.columns.name = None
    return table


def build_tables(metrics, reliability, pev, importance=None, top: int = 10) -> dict:
    """Map output file names to their tables."""
    tables = {
        "skill_vs_lead.csv": skill_vs_lead(metrics),
        "bss_vs_threshold.csv": bss_vs_threshold(metrics),
        "overall_scores.csv": overall_scores(metrics),
        "reliability.csv": reliability_table(reliability),
        "pev_vs_cost_loss.csv": pev_table(pev),
    }
    if importance is not None:
        tables["importance.csv"] = importance_table(importance, top)
    return tables
