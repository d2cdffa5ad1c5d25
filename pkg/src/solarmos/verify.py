"""Forecast verification: RMSE and CRPS skill, Brier score, reliability
diagrams and potential economic value in a cost-loss model.

Forecast sets are ``(n_cases, Q)`` arrays of quantile values; observations
are length-``n`` arrays of clear-sky index. Undefined skill scores are
returned as ``UNDEFINED`` (NaN) and never silently as 0 or infinity.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

UNDEFINED = float("nan")


def is_undefined(x) -> bool:
    return x is None or (isinstance(x, float) and np.isnan(x))


def _as_2d(forecasts) -> np.ndarray:
    f = np.asarray(forecasts, dtype=float)
    if f.ndim == 1:
        f = f[:, None]
    return f


def skill_score(score: float, reference: float) -> float:
    if not np.isfinite(reference) or reference == 0:
        return UNDEFINED
    return float(1.0 - score / reference)


def pinball_loss(level, y, f):
    """Quantile (pinball) loss: ``q*(y-f)`` above the forecast, ``(q-1)*(y-f)`` below."""
    q = np.asarray(level, dtype=float)
    if np.any((q <= 0) | (q >= 1)):
        raise ValueError("quantile level must lie in (0, 1)")
    r = np.asarray(y, dtype=float) - np.asarray(f, dtype=float)
    out = np.where(r >= 0, q * r, (q - 1.0) * r)
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# deterministic


def rmse(point, obs) -> float:
    point = np.asarray(point, dtype=float)
    obs = np.asarray(obs, dtype=float)
    return float(np.sqrt(np.mean((obs - point) ** 2)))


def rmse_ss(medians, obs, reference=None) -> float:
    """RMSE skill of ``medians`` against ``reference``.

    The reference defaults to the sample climatology (the observation mean
    of the same sample).
    """
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        return UNDEFINED
    if reference is None:
        reference = np.full_like(obs, obs.mean())
    return skill_score(rmse(medians, obs), rmse(reference, obs))


# --------------------------------------------------------------------------
# CRPS


def crps_cases(forecasts, obs) -> np.ndarray:
    """Per-case CRPS of a quantile/ensemble forecast.

    ``(1/Q) sum|f_k - y| - (1/(2 Q^2)) sum_k sum_l |f_k - f_l|``, with the
    double sum evaluated exactly through the sorted-member identity
    ``sum_k sum_l |f_k - f_l| = 2 sum_k (2k - Q - 1) f_(k)``.
    """
    f = _as_2d(forecasts)
    y = np.asarray(obs, dtype=float).reshape(-1, 1)
    q = f.shape[1]
    term1 = np.abs(f - y).mean(axis=1)
    fs = np.sort(f, axis=1)
    coef = 2.0 * np.arange(1, q + 1) - q - 1.0
    spread = 2.0 * (fs * coef).sum(axis=1)
    return term1 - spread / (2.0 * q * q)


def crps(forecast, y) -> float:
    return float(crps_cases(np.asarray(forecast, dtype=float)[None, :], [y])[0])


def climatology_quantiles(obs, levels) -> np.ndarray:
    return np.quantile(np.asarray(obs, dtype=float), np.asarray(levels, dtype=float))


def crpss(forecasts, obs, levels) -> float:
    """CRPS skill against the sample-climatological quantile forecast."""
    f = _as_2d(forecasts)
    obs = np.asarray(obs, dtype=float)
    if obs.size == 0:
        return UNDEFINED
    if obs.size < len(levels):
        warnings.warn(f"climatology from only {obs.size} observations for {len(levels)} levels")
    clim = np.broadcast_to(climatology_quantiles(obs, levels), f.shape)
    return skill_score(crps_cases(f, obs).mean(), crps_cases(clim, obs).mean())


# --------------------------------------------------------------------------
# binary events


@dataclass(frozen=True)
class BinaryEventSpec:
    """Event "clear-sky index does not exceed ``threshold``"."""

    threshold: float

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("event threshold must be positive")


def _threshold(event) -> float:
    return event.threshold if isinstance(event, BinaryEventSpec) else float(event)


def event_probability(forecasts, event) -> np.ndarray:
    """Fraction of quantile values at or below the threshold."""
    return (_as_2d(forecasts) <= _threshold(event)).mean(axis=1)


def event_outcome(obs, event) -> np.ndarray:
    return (np.asarray(obs, dtype=float) <= _threshold(event)).astype(float)


def brier(forecasts, obs, event):
    """Brier score and Brier skill score against the observed base rate."""
    p = event_probability(forecasts, event)
    o = event_outcome(obs, event)
    if o.size == 0:
        return UNDEFINED, UNDEFINED
    bs = float(np.mean((o - p) ** 2))
    base = o.mean()
    return bs, skill_score(bs, float(np.mean((o - base) ** 2)))


@dataclass(frozen=True)
class ReliabilityDiagram:
    edges: np.ndarray
    mean_forecast: np.ndarray  # NaN in empty bins
    observed_freq: np.ndarray  # NaN in empty bins
    count: np.ndarray

    @property
    def empty(self) -> np.ndarray:
        return self.count == 0

    def standard_error(self) -> np.ndarray:
        """Binomial standard error of the observed frequency under perfect reliability."""
        p = self.mean_forecast
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.sqrt(p * (1.0 - p) / self.count)

    def decomposition(self):
        """Murphy decomposition (reliability, resolution, uncertainty) from the bins."""
        n = self.count.sum()
        full = ~self.empty
        nk = self.count[full]
        pk, ok = self.mean_forecast[full], self.observed_freq[full]
        base = np.dot(nk, ok) / n
        rel = np.dot(nk, (pk - ok) ** 2) / n
        res = np.dot(nk, (ok - base) ** 2) / n
        return float(rel), float(res), float(base * (1 - base))


def bin_index(prob, n_bins: int) -> np.ndarray:
    """Right-closed equal-width bins on [0, 1]; exact zeros join the first bin."""
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    idx = np.searchsorted(edges, np.asarray(prob, dtype=float), side="left") - 1
    return np.clip(idx, 0, n_bins - 1)


def reliability_from_probs(prob, outcome, n_bins: int = 10) -> ReliabilityDiagram:
    if n_bins < 2:
        raise ValueError("need at least two reliability bins")
    prob = np.asarray(prob, dtype=float)
    outcome = np.asarray(outcome, dtype=float)
    idx = bin_index(prob, n_bins)
    count = np.bincount(idx, minlength=n_bins)
    sp = np.bincount(idx, weights=prob, minlength=n_bins)
    so = np.bincount(idx, weights=outcome, minlength=n_bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        mf = np.where(count > 0, sp / count, np.nan)
        of = np.where(count > 0, so / count, np.nan)
    return ReliabilityDiagram(np.linspace(0.0, 1.0, n_bins + 1), mf, of, count)


def reliability(forecasts, obs, event, n_bins: int = 10) -> ReliabilityDiagram:
    return reliability_from_probs(event_probability(forecasts, event), event_outcome(obs, event), n_bins)


# --------------------------------------------------------------------------
# potential economic value


@dataclass(frozen=True)
class ContingencyCounts:
    hits: int
    false_alarms: int
    misses: int
    correct_rejections: int

    @property
    def n(self) -> int:
        return self.hits + self.false_alarms + self.misses + self.correct_rejections

    @property
    def H(self) -> float:
        return self.hits / self.n

    @property
    def FA(self) -> float:
        return self.false_alarms / self.n

    @property
    def M(self) -> float:
        return self.misses / self.n

    @property
    def ORF(self) -> float:
        return (self.hits + self.misses) / self.n

    @classmethod
    def from_decisions(cls, warn, outcome) -> "ContingencyCounts":
        warn = np.asarray(warn, dtype=bool)
        outcome = np.asarray(outcome, dtype=bool)
        return cls(
            int(np.sum(warn & outcome)),
            int(np.sum(warn & ~outcome)),
            int(np.sum(~warn & outcome)),
            int(np.sum(~warn & ~outcome)),
        )


def economic_value(cost_loss, H, FA, M, ORF):
    """Value of one contingency table in the static cost-loss model.

    ``(C/L (H + FA - 1) + M) / (C/L (ORF - 1))`` when C/L < ORF, otherwise
    ``(C/L (H + FA) + M - ORF) / ((C/L - 1) ORF)``.
    """
    a = np.asarray(cost_loss, dtype=float)
    if ORF <= 0.0 or ORF >= 1.0:
        return np.full(a.shape, np.nan) if a.ndim else UNDEFINED
    low = (a * (H + FA - 1.0) + M) / (a * (ORF - 1.0))
    high = (a * (H + FA) + M - ORF) / ((a - 1.0) * ORF)
    out = np.where(a < ORF, low, high)
    return float(out) if out.ndim == 0 else out


NEVER = np.inf  # trigger that never issues a warning


def default_triggers(q: int) -> np.ndarray:
    return np.concatenate((np.arange(q + 1) / q, [NEVER]))


def default_cost_loss() -> np.ndarray:
    return np.round(np.arange(1, 100) / 100.0, 2)


def contingency_tables(prob, outcome, triggers):
    """One table per trigger; a warning is issued when ``prob >= trigger``."""
    prob = np.asarray(prob, dtype=float)
    outcome = np.asarray(outcome, dtype=bool)
    return [ContingencyCounts.from_decisions(prob >= t, outcome) for t in triggers]


def pev_from_probs(prob, outcome, triggers, cost_loss):
    """Potential economic value: best trigger per cost-loss ratio.

    Returns ``(pev, best_trigger)`` arrays over ``cost_loss``.
    """
    cost_loss = np.asarray(cost_loss, dtype=float)
    if np.any((cost_loss <= 0) | (cost_loss >= 1)):
        raise ValueError("cost-loss ratios must lie in (0, 1)")
    tables = contingency_tables(prob, outcome, triggers)
    if not tables or tables[0].n == 0:
        return np.full(cost_loss.shape, np.nan), np.full(cost_loss.shape, np.nan)
    orf = tables[0].ORF
    if orf <= 0.0 or orf >= 1.0:
        return np.full(cost_loss.shape, np.nan), np.full(cost_loss.shape, np.nan)
    vals = np.stack([economic_value(cost_loss, t.H, t.FA, t.M, orf) for t in tables])
    best = np.argmax(vals, axis=0)
    return vals[best, np.arange(cost_loss.size)], np.asarray(triggers, dtype=float)[best]


def pev_curve(forecasts, obs, event, triggers=None, cost_loss=None):
    f = _as_2d(forecasts)
    triggers = default_triggers(f.shape[1]) if triggers is None else triggers
    cost_loss = default_cost_loss() if cost_loss is None else cost_loss
    return pev_from_probs(event_probability(f, event), event_outcome(obs, event) > 0, triggers, cost_loss)


def deterministic_pev(point, obs, event, cost_loss=None):
    """Value of a single-valued forecast: one warning rule, no trigger choice."""
    cost_loss = default_cost_loss() if cost_loss is None else cost_loss
    prob = event_outcome(point, event)
    return pev_from_probs(prob, event_outcome(obs, event) > 0, [0.5], cost_loss)[0]
