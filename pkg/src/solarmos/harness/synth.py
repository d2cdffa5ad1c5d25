"""Synthetic stand-in for station observations, NWP model fields and
aerosol analyses.

A latent sky state (clear / broken / overcast) evolves per station as an
hourly Markov chain whose stationary mix depends on season, hour of day and
distance to the coast: coastal sites get more clear hours in spring and
summer, inland sites fewer. Observed clear-sky index is drawn from the
state, and the "model" sees a noisy version of the truth. Radiation
predictors are copies of that model estimate; cloud fields share the same
model error plus their own noise, so they are mostly redundant once the
global radiation forecast is known.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .. import solar
from ..domain import StationMeta
from ..features import LAYERS, LAYERS_TOTAL

STATES = ("clear", "broken", "overcast")
CLEAR, BROKEN, OVERCAST = range(3)

_TEMPLATES = (
    # id, lat, lon, coast, water, inland, elevation
    ("S01", 52.10, 5.18, 60.0, 5.0, 0.0, 2.0),
    ("S02", 52.93, 4.78, 1.0, 0.5, 0.0, 1.0),
    ("S03", 50.90, 5.77, 170.0, 20.0, 120.0, 100.0),
)


@dataclass(frozen=True)
class SynthSpec:
    n_stations: int = 3
    start: str = "2016-01-01"
    n_days: int = 731
    leads: tuple = tuple(range(1, 25))
    persistence: float = 0.85
    model_error: float = 0.12
    force_state: str | None = None

    def __post_init__(self):
        if self.n_stations < 1 or self.n_days < 1:
            raise ValueError("need at least one station and one day")
        if not 0 <= self.persistence < 1:
            raise ValueError("persistence must lie in [0, 1)")
        if self.force_state is not None and self.force_state not in STATES:
            raise ValueError(f"force_state must be one of {STATES}")
        if any(int(l) < 1 or int(l) > 48 for l in self.leads):
            raise ValueError("lead times must lie in 1..48 h")
        object.__setattr__(self, "leads", tuple(sorted(int(l) for l in self.leads)))


@dataclass
class Dataset:
    stations: pd.DataFrame
    observations: pd.DataFrame
    fields: pd.DataFrame
    cams: pd.DataFrame
    states: pd.DataFrame | None = None  # latent truth, not written

    FILES = ("stations.csv", "observations.csv", "model_fields.csv", "cams.csv")

    def station_meta(self) -> dict:
        return stations_from_frame(self.stations)

    def tables(self) -> dict:
        return dict(zip(self.FILES, (self.stations, self.observations, self.fields, self.cams)))


def stations_from_frame(df: pd.DataFrame) -> dict:
    out = {}
    for row in df.itertuples(index=False):
        meta = StationMeta(str(row.station_id), float(row.latitude), float(row.longitude), float(row.dist_coast_km),
                           float(row.dist_water_km), float(row.dist_inland_km), float(getattr(row, "elevation_m", 0.0)))
        out[meta.station_id] = meta
    return out


def _station_table(n, rng) -> pd.DataFrame:
    rows = list(_TEMPLATES[:n])
    for i in range(len(rows), n):
        rows.append((f"S{i + 1:02d}", float(rng.uniform(50.8, 53.4)), float(rng.uniform(3.4, 7.1)),
                     float(rng.uniform(0, 200)), float(rng.uniform(0, 30)), float(rng.uniform(0, 150)),
                     float(rng.uniform(0, 100))))
    return pd.DataFrame(rows, columns=["station_id", "latitude", "longitude", "dist_coast_km", "dist_water_km",
                                       "dist_inland_km", "elevation_m"])


def _target_mix(month, hour, coastal):
    """Stationary state mix (clear, broken, overcast) per hour."""
    summer = np.cos(2 * np.pi * (month - 7) / 12.0)  # +1 in July, -1 in January
    clear = 0.30 + 0.12 * summer
    overcast = 0.38 - 0.14 * summer
    warm = (month >= 3) & (month <= 8)
    clear = clear + np.where(warm, 0.10 * coastal - 0.04 * (1 - coastal), 0.0)
    morning = (hour >= 3) & (hour <= 8)
    clear = clear - 0.06 * morning
    overcast = overcast + 0.06 * morning
    clear, overcast = np.broadcast_arrays(clear, overcast)
    broken = 1.0 - clear - overcast
    return np.stack([clear, broken, overcast], axis=-1)


def _state_csi(state, aod, rng):
    n = state.shape
    clear = 0.97 - 0.5 * (aod - 0.15) + 0.03 * rng.standard_normal(n)
    broken = 0.35 + 0.5 * rng.beta(2.0, 2.0, n)
    overcast = 0.06 + 0.28 * rng.beta(2.0, 3.0, n)
    y = np.select([state == CLEAR, state == BROKEN], [clear, broken], overcast)
    return np.clip(y, 0.0, 1.2)


def synth_generate(spec: SynthSpec | None = None, seed: int = 0) -> Dataset:
    spec = spec or SynthSpec()
    root = np.random.SeedSequence(seed)
    s_state, s_obs, s_aer, s_model, s_misc = (np.random.default_rng(s) for s in root.spawn(5))

    stations = _station_table(spec.n_stations, s_misc)
    n_st = len(stations)
    start = pd.Timestamp(spec.start, tz="UTC")
    n_hours = spec.n_days * 24 + max(spec.leads) + 1
    times = start + pd.to_timedelta(np.arange(n_hours), unit="h")
    month = times.month.values
    hour = times.hour.values
    coastal = np.exp(-stations["dist_coast_km"].values / 30.0)

    # latent state chain
    state = np.empty((n_st, n_hours), dtype=np.int64)
    if spec.force_state is not None:
        state[:] = STATES.index(spec.force_state)
    else:
        mix = _target_mix(month[None, :], hour[None, :], coastal[:, None])
        cum = np.cumsum(mix, axis=-1)
        u_jump = s_state.random((n_st, n_hours))
        u_pick = s_state.random((n_st, n_hours))
        state[:, 0] = (u_pick[:, 0, None] > cum[:, 0, :]).sum(axis=1)
        for t in range(1, n_hours):
            fresh = (u_pick[:, t, None] > cum[:, t, :]).sum(axis=1)
            state[:, t] = np.where(u_jump[:, t] < spec.persistence, state[:, t - 1], fresh)
    state = np.minimum(state, OVERCAST)

    # aerosol: 3-hourly analyses, AR(1) in log AOD
    n3 = (n_hours + 2) // 3 + 1
    log_aod = np.empty((n_st, n3))
    log_aod[:, 0] = np.log(0.15) + 0.4 * s_aer.standard_normal(n_st)
    for k in range(1, n3):
        log_aod[:, k] = np.log(0.15) + 0.9 * (log_aod[:, k - 1] - np.log(0.15)) + 0.4 * np.sqrt(0.19) * s_aer.standard_normal(n_st)
    aod3 = np.exp(log_aod)
    ang3 = 1.3 + 0.2 * s_aer.standard_normal((n_st, n3))
    oz3 = 300.0 + 20.0 * s_aer.standard_normal((n_st, n3))
    h = np.arange(n_hours)
    nearest = np.where(h % 3 == 2, h // 3 + 1, h // 3)  # ties go to the earlier analysis
    aod_h = aod3[:, nearest]

    y = _state_csi(state, aod_h, s_obs)

    cs = np.empty((n_st, n_hours))
    for i, row in enumerate(stations.itertuples(index=False)):
        cfg = solar.ClearSkyConfig(site_elevation_m=row.elevation_m)
        cs[i] = solar.hourly_clearsky(row.latitude, row.longitude, (times - pd.Timedelta(hours=1)).values, cfg)
    cs = np.where(cs > 0, cs, 0.0)

    n_obs = spec.n_days * 24
    obs = pd.DataFrame({
        "station_id": np.repeat(stations["station_id"].values, n_obs),
        "valid_time": np.tile(times[:n_obs], n_st),
        "ghi_wm2": (y[:, :n_obs] * cs[:, :n_obs]).ravel(),
    })

    cams_times = start + pd.to_timedelta(3 * np.arange(n3), unit="h")
    cams = pd.DataFrame({
        "station_id": np.repeat(stations["station_id"].values, n3),
        "valid_time": np.tile(cams_times, n_st),
        "AOD": aod3.ravel(),
        "ANG": ang3.ravel(),
        "OZ": oz3.ravel(),
    })

    fields = _model_fields(spec, stations, times, state, y, cs, month, s_model)
    truth = pd.DataFrame({
        "station_id": np.repeat(stations["station_id"].values, n_hours),
        "valid_time": np.tile(times, n_st),
        "state": np.asarray(STATES)[state.ravel()],
        "csi": y.ravel(),
    })
    return Dataset(stations, obs, fields, cams, truth)


def _model_fields(spec, stations, times, state, y, cs, month, rng) -> pd.DataFrame:
    leads = np.asarray(spec.leads)
    n_st = len(stations)
    n_lead = leads.size
    run_idx = np.arange(spec.n_days) * 24
    vidx = run_idx[:, None] + leads[None, :]  # (days, leads)
    shape = (n_st, spec.n_days, n_lead)

    # model error, autocorrelated along the lead axis of one run
    sig = spec.model_error * (1.0 + 0.01 * leads)
    e = np.empty(shape)
    z = rng.standard_normal(shape)
    e[..., 0] = z[..., 0]
    for k in range(1, n_lead):
        e[..., k] = 0.7 * e[..., k - 1] + np.sqrt(1 - 0.49) * z[..., k]
    e *= sig
    y_v = y[:, vidx]
    cs_v = cs[:, vidx]
    est = np.clip(y_v + e, 0.0, 1.2)

    def noise(scale):
        return scale * rng.standard_normal(shape)

    out = {}
    out["G"] = est * cs_v
    out["DIR_surf"] = np.clip(1.15 * (est - 0.25) + noise(0.25), 0.0, 1.0) * 0.8 * cs_v
    out["DIR_toa"] = np.clip(1.30 + noise(0.05), 0.0, None) * cs_v
    out["NCS_surf"] = np.clip(0.95 + noise(0.03), 0.0, None) * cs_v
    out["NCS_toa"] = np.clip(1.20 + noise(0.03), 0.0, None) * cs_v

    cloud = np.clip(1.0 - est + noise(0.20), 0.0, 1.0)
    out["CC_total"] = cloud
    for layer in LAYERS:
        out[f"CC_{layer}"] = np.clip(cloud * rng.uniform(0.2, 1.0, shape) + noise(0.1), 0.0, 1.0)
    for layer in LAYERS_TOTAL:
        out[f"CW_{layer}"] = np.clip(0.3 * out[f"CC_{layer}"] * rng.lognormal(0.0, 0.5, shape) + noise(0.02), 0.0, None)

    season_t = 10.0 - 8.0 * np.cos(2 * np.pi * (month[vidx] - 1) / 12.0)[None, ...]
    offsets = {"low": 0.0, "middle": -20.0, "high": -45.0}
    for layer in LAYERS:
        out[f"T_{layer}"] = 273.15 + season_t + offsets[layer] + noise(3.0)
    out["RH_low"] = np.clip(60.0 + 30.0 * (1.0 - est) + noise(12.0), 0.0, 100.0)
    out["RH_middle"] = np.clip(50.0 + noise(20.0), 0.0, 100.0)
    out["RH_high"] = np.clip(40.0 + noise(20.0), 0.0, 100.0)
    for layer, base in (("low", 8.0), ("middle", 4.0), ("high", 0.5), ("total", 12.5)):
        out[f"PW_{layer}"] = np.clip(base * (1.0 + 0.3 * rng.standard_normal(shape)), 0.01, None)
    wet = (state[:, vidx] == OVERCAST) & (rng.random(shape) < 0.3)
    out["RAIN"] = np.where(wet, rng.exponential(0.8, shape), 0.0)

    frame = {
        "station_id": np.repeat(stations["station_id"].values, spec.n_days * n_lead),
        "valid_time": np.tile(np.asarray(times)[vidx].ravel(), n_st),
        "lead_time": np.tile(np.tile(leads, spec.n_days), n_st),
    }
    for name in sorted(out):
        frame[name] = out[name].ravel()
    return pd.DataFrame(frame)


def write_dataset(ds: Dataset, directory) -> dict:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    counts = {}
    for name, table in ds.tables().items():
        write_csv(table, d / name)
        counts[name] = len(table)
    return counts


def read_dataset(directory) -> Dataset:
    d = Path(directory)
    frames = [read_csv(d / name) for name in Dataset.FILES]
    return Dataset(*frames)


def _format_frame(df: pd.DataFrame) -> pd.DataFrame:
    out = df.copy()
    for col in out.columns:
        if pd.api.types.is_datetime64_any_dtype(out[col]):
            out[col] = pd.to_datetime(out[col], utc=True).dt.strftime("%Y-%m-%dT%H:%M:%SZ")
        elif pd.api.types.is_float_dtype(out[col]):
            out[col] = [("" if not np.isfinite(v) else repr(float(v))) for v in out[col].to_numpy()]
    return out


def write_csv(df: pd.DataFrame, path) -> None:
    """CSV with ISO-8601 UTC timestamps and shortest round-trip floats."""
    _format_frame(df).to_csv(path, index=False, lineterminator="\n")


def read_csv(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", keep_default_na=True)
    if "valid_time" in df:
        df["valid_time"] = pd.to_datetime(df["valid_time"], utc=True)
    if "station_id" in df:
        df["station_id"] = df["station_id"].astype(str)
    return df
