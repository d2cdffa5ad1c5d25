"""Predictor engineering: layer aggregation, precipitable water, smoothing
and assembly of the 34-column predictor matrix."""
from __future__ import annotations

import hashlib
import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
import pandas as pd

from . import solar
from .domain import StationMeta, StructuralError

logger = logging.getLogger(__name__)

REGISTRY_VERSION = "table2-v1"

LAYERS = ("low", "middle", "high")
LAYERS_TOTAL = LAYERS + ("total",)

RADIATION = ("G", "DIR_surf", "DIR_toa", "NCS_surf", "NCS_toa")
AEROSOL = ("AOD", "ANG", "OZ")
TIME_PLACE = ("LAT", "LON", "DOY", "COSZ", "DIST_coast", "DIST_water", "DIST_inland")

PREDICTOR_NAMES: tuple = (
    tuple(f"T_{l}" for l in LAYERS)
    + tuple(f"RH_{l}" for l in LAYERS)
    + RADIATION
    + ("RAIN",)
    + tuple(f"CC_{l}" for l in LAYERS_TOTAL)
    + tuple(f"CW_{l}" for l in LAYERS_TOTAL)
    + tuple(f"PW_{l}" for l in LAYERS_TOTAL)
    + AEROSOL
    + TIME_PLACE
)
MODEL_FIELDS = tuple(n for n in PREDICTOR_NAMES if n not in AEROSOL + TIME_PLACE)


def provenance(name: str) -> str:
    if name in AEROSOL:
        return "cams"
    if name in TIME_PLACE:
        return "time_place"
    return "model"


def registry_hash(names: Sequence[str] = PREDICTOR_NAMES) -> str:
    text = REGISTRY_VERSION + "\n" + "\n".join(names)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


class AggregationError(ValueError):
    pass


class EmptyMatrixError(ValueError):
    pass


# --------------------------------------------------------------------------
# vertical profiles


@dataclass(frozen=True)
class LayerSpec:
    name: str
    bottom_m: float
    top_m: Optional[float]  # None means top of the profile


LAYER_SPECS = {
    "low": LayerSpec("low", 0.0, 2000.0),
    "middle": LayerSpec("middle", 2000.0, 6000.0),
    "high": LayerSpec("high", 6000.0, None),
    "total": LayerSpec("total", 0.0, None),
}


_P_TROPOPAUSE = 226.32
# tropopause height implied by the tropospheric formula, so both branches meet exactly
_Z_TROPOPAUSE = 44330.8 * (1.0 - (_P_TROPOPAUSE / 1013.25) ** 0.190263)


def pressure_to_height(p_hpa):
    """ICAO standard-atmosphere geopotential height (m) of a pressure level."""
    p = np.asarray(p_hpa, dtype=float)
    tropo = 44330.8 * (1.0 - (p / 1013.25) ** 0.190263)
    strato = _Z_TROPOPAUSE + 6341.6 * np.log(_P_TROPOPAUSE / np.maximum(p, 1e-9))
    return np.where(p >= _P_TROPOPAUSE, tropo, strato)


def height_to_pressure(z_m):
    z = np.asarray(z_m, dtype=float)
    tropo = 1013.25 * (1.0 - np.minimum(z, _Z_TROPOPAUSE) / 44330.8) ** (1.0 / 0.190263)
    strato = _P_TROPOPAUSE * np.exp(-(z - _Z_TROPOPAUSE) / 6341.6)
    return np.where(z <= _Z_TROPOPAUSE, tropo, strato)


@dataclass(frozen=True)
class LevelProfile:
    coords: tuple
    values: tuple
    kind: str = "height"  # "height" in m above ground, or "pressure" in hPa

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if c.shape != v.shape or c.ndim != 1 or c.size < 2:
            raise StructuralError("profile needs matching coordinate/value sequences of length >= 2")
        d = np.diff(c)
        if not (np.all(d > 0) or np.all(d < 0)):
            raise StructuralError("profile coordinate must be strictly monotone")
        if self.kind not in ("height", "pressure"):
            raise StructuralError(f"unknown profile kind {self.kind!r}")
        object.__setattr__(self, "coords", tuple(c))
        object.__setattr__(self, "values", tuple(v))

    def heights(self) -> np.ndarray:
        c = np.asarray(self.coords)
        return c if self.kind == "height" else pressure_to_height(c)

    def pressures(self) -> np.ndarray:
        c = np.asarray(self.coords)
        return c if self.kind == "pressure" else height_to_pressure(c)


def _layer_bounds(layer: LayerSpec, toa: float):
    top = toa if layer.top_m is None else layer.top_m
    return layer.bottom_m, top


def _single_layer(z, v, layer: LayerSpec, toa: float):
    lo, hi = _layer_bounds(layer, toa)
    inside = (z >= lo) & ((z < hi) | ((layer.top_m is None) & (z <= hi)))
    if not inside.any():
        raise AggregationError(f"no profile level inside layer {layer.name!r}")
    zi, vi = z[inside], v[inside]
    # each level owns the span up to the midpoints with its in-layer neighbours
    edges = np.concatenate(([lo], 0.5 * (zi[1:] + zi[:-1]), [max(hi, zi[-1])]))
    w = np.diff(edges)
    if w.sum() <= 0:
        return float(vi.mean()), 0.0
    return float(np.dot(w, vi) / w.sum()), float(hi - lo)


def layer_aggregate(profile: LevelProfile, layer: LayerSpec | str) -> float:
    """Distance-weighted mean of the profile levels inside ``layer``.

    The total-column value is the thickness-weighted mean of the three
    partial layers that contain levels, so it always lies between them.
    """
    if isinstance(layer, str):
        layer = LAYER_SPECS[layer]
    z = profile.heights()
    v = np.asarray(profile.values, dtype=float)
    order = np.argsort(z)
    z, v = z[order], v[order]
    toa = float(z[-1])
    if layer.name != "total":
        return _single_layer(z, v, layer, toa)[0]
    vals, thick = [], []
    for name in LAYERS:
        try:
            val, t = _single_layer(z, v, LAYER_SPECS[name], toa)
        except AggregationError:
            continue
        vals.append(val)
        thick.append(t)
    thick = np.asarray(thick)
    if thick.sum() <= 0:
        return float(np.mean(vals))
    return float(np.dot(thick, vals) / thick.sum())


_G = 9.80665
_EPS = 0.622


def saturation_vapor_pressure(t_kelvin):
    """Bolton (1980) saturation vapour pressure over water, hPa."""
    tc = np.asarray(t_kelvin, dtype=float) - 273.15
    return 6.112 * np.exp(17.67 * tc / (tc + 243.5))


def specific_humidity(t_kelvin, rh_percent, p_hpa):
    e = np.asarray(rh_percent, dtype=float) / 100.0 * saturation_vapor_pressure(t_kelvin)
    p = np.asarray(p_hpa, dtype=float)
    return _EPS * e / (p - (1.0 - _EPS) * e)


def precipitable_water(temperature: LevelProfile, humidity: LevelProfile, layer: LayerSpec | str) -> float:
    """Column water vapour (kg/m2 == mm) between the layer's pressure bounds.

    Specific humidity is interpolated linearly in pressure between levels and
    integrated with dp/g; the column is not extrapolated past the profile.
    """
    if isinstance(layer, str):
        layer = LAYER_SPECS[layer]
    if temperature.coords != humidity.coords or temperature.kind != humidity.kind:
        raise StructuralError("temperature and humidity profiles must share coordinates")
    rh = np.asarray(humidity.values, dtype=float)
    if np.any((rh < 0) | (rh > 100)):
        raise ValueError("relative humidity must be within [0, 100] %")
    p = temperature.pressures()
    order = np.argsort(p)
    p = p[order]
    q = specific_humidity(np.asarray(temperature.values)[order], rh[order], p)
    z_top = float(pressure_to_height(p[0]))
    lo_m, hi_m = _layer_bounds(layer, z_top)
    p_hi = min(float(height_to_pressure(lo_m)), p[-1])  # bottom of layer: larger pressure
    p_lo = max(float(height_to_pressure(hi_m)), p[0])
    if p_hi <= p_lo:
        return 0.0
    inner = (p > p_lo) & (p < p_hi)
    pts = np.concatenate(([p_lo], p[inner], [p_hi]))
    qs = np.interp(pts, p, q)
    return float(np.trapezoid(qs, pts) * 100.0 / _G)


# --------------------------------------------------------------------------
# smoothing


def temporal_smooth(series: Mapping[int, float], t: int) -> float:
    """Mean of the values at lead times t-1, t and t+1 that are available."""
    vals = [series.get(k) for k in (t - 1, t, t + 1)]
    vals = [v for v in vals if v is not None and np.isfinite(v)]
    if not vals:
        return float("nan")
    return float(np.mean(vals))


def spatial_smooth(grid, center, half_width: int = 4) -> float:
    """Mean over the (2*half_width+1)^2 block around ``center``, clipped to the grid."""
    g = np.atleast_2d(np.asarray(grid, dtype=float))
    i, j = center
    block = g[max(i - half_width, 0): i + half_width + 1, max(j - half_width, 0): j + half_width + 1]
    return float(block.mean())


# --------------------------------------------------------------------------
# time/place


def time_place_predictors(meta: StationMeta, valid_time, pos: solar.SolarPosition) -> dict:
    ts = pd.Timestamp(valid_time)
    return {
        "LAT": meta.latitude,
        "LON": meta.longitude,
        "DOY": int(ts.dayofyear),
        "COSZ": float(pos.cos_zenith),
        "DIST_coast": meta.dist_coast_km,
        "DIST_water": meta.dist_water_km,
        "DIST_inland": meta.dist_inland_km,
    }


# --------------------------------------------------------------------------
# matrix assembly

KEYS = ["station_id", "valid_time", "lead_time"]


@dataclass
class PredictorMatrix:
    keys: pd.DataFrame
    values: np.ndarray
    names: tuple = PREDICTOR_NAMES
    n_dropped: int = 0
    extra: Optional[pd.DataFrame] = None  # clearsky, observation, raw G for the kept rows

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise StructuralError("duplicate predictor names")
        if self.values.shape != (len(self.keys), len(self.names)):
            raise StructuralError("predictor matrix is not rectangular")

    @property
    def provenance(self) -> dict:
        return {n: provenance(n) for n in self.names}

    def column(self, name: str) -> np.ndarray:
        return self.values[:, self.names.index(name)]

    def take(self, rows) -> "PredictorMatrix":
        rows = np.asarray(rows)
        extra = None if self.extra is None else self.extra.iloc[rows].reset_index(drop=True)
        return PredictorMatrix(self.keys.iloc[rows].reset_index(drop=True), self.values[rows], self.names, 0, extra)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("|".join(self.names).encode())
        h.update(np.ascontiguousarray(self.values, dtype=np.float64).tobytes())
        return h.hexdigest()[:16]

    def frame(self) -> pd.DataFrame:
        return pd.concat([self.keys, pd.DataFrame(self.values, columns=list(self.names))], axis=1)


def _hour_start(valid_times: pd.Series) -> pd.Series:
    # a record stamped t averages the hour ending at t
    return valid_times - pd.Timedelta(hours=1)


def clearsky_for(keys: pd.DataFrame, stations: Mapping[str, StationMeta], cfg: solar.ClearSkyConfig) -> np.ndarray:
    uniq = keys[["station_id", "valid_time"]].drop_duplicates()
    out = np.empty(len(uniq))
    for sid, grp in uniq.groupby("station_id", sort=True):
        m = stations[sid]
        site = solar.ClearSkyConfig(cfg.monthly_linke, m.elevation_m, cfg.sample_minutes)
        out[np.flatnonzero(uniq["station_id"].values == sid)] = solar.hourly_clearsky(
            m.latitude, m.longitude, _hour_start(grp["valid_time"]).values, site
        )
    uniq = uniq.assign(_cs=out)
    merged = keys[["station_id", "valid_time"]].merge(uniq, on=["station_id", "valid_time"], how="left")
    return merged["_cs"].values


def match_nearest_time(target: pd.DataFrame, source: pd.DataFrame, columns: Sequence[str]) -> pd.DataFrame:
    """For each target (station, valid_time) take the source row nearest in time.

    Ties go to the earlier source time.
    """
    out = pd.DataFrame(index=target.index, columns=list(columns), dtype=float)
    for sid, tgt in target.groupby("station_id", sort=False):
        src = source[source["station_id"] == sid].sort_values("valid_time")
        if src.empty:
            continue
        st = src["valid_time"].values.astype("datetime64[ns]").astype(np.int64)
        tt = tgt["valid_time"].values.astype("datetime64[ns]").astype(np.int64)
        right = np.clip(np.searchsorted(st, tt, side="left"), 0, len(st) - 1)
        left = np.clip(right - 1, 0, len(st) - 1)
        pick = np.where(np.abs(tt - st[left]) <= np.abs(st[right] - tt), left, right)
        out.loc[tgt.index, list(columns)] = src[list(columns)].values[pick]
    return out


def _profile_layers(profiles: pd.DataFrame) -> pd.DataFrame:
    """Layer columns from a long-format profile table.

    Expected columns: station_id, valid_time, lead_time, field, coord, kind, value.
    Fields T, RH, CC, CW are layer-averaged; PW is integrated from T and RH.
    """
    rows = []
    for key, grp in profiles.groupby(KEYS, sort=True):
        rec = dict(zip(KEYS, key))
        by_field = {}
        for fname, g in grp.groupby("field"):
            g = g.sort_values("coord")
            by_field[fname] = LevelProfile(tuple(g["coord"]), tuple(g["value"]), g["kind"].iloc[0])
        for fname, prof in by_field.items():
            layers = LAYERS if fname in ("T", "RH") else LAYERS_TOTAL
            for l in layers:
                try:
                    rec[f"{fname}_{l}"] = layer_aggregate(prof, l)
                except AggregationError:
                    rec[f"{fname}_{l}"] = np.nan
        if "T" in by_field and "RH" in by_field:
            for l in LAYERS_TOTAL:
                rec[f"PW_{l}"] = precipitable_water(by_field["T"], by_field["RH"], l)
        rows.append(rec)
    return pd.DataFrame(rows)


def _grid_smooth(grids: pd.DataFrame) -> pd.DataFrame:
    """Block means from a long-format grid table (columns: keys, field, di, dj, value)."""
    sel = grids[(grids["di"].abs() <= 4) & (grids["dj"].abs() <= 4)]
    means = sel.groupby(KEYS + ["field"], sort=True)["value"].mean()
    return means.unstack("field").reset_index()


def _temporal_smooth_frame(df: pd.DataFrame, columns: Sequence[str], neighbour_ok=None) -> pd.DataFrame:
    """Average each column over lead times t-1, t, t+1 of the same model run.

    ``neighbour_ok`` optionally masks rows that may not serve as a
    neighbour (per column), e.g. radiation indices near sunrise.
    """
    init = df["valid_time"] - pd.to_timedelta(df["lead_time"], unit="h")
    idx = pd.MultiIndex.from_arrays([df["station_id"], init, df["lead_time"]])
    own = df[list(columns)].to_numpy(dtype=float)
    nb_vals = own.copy()
    if neighbour_ok is not None:
        for j, c in enumerate(columns):
            if c in neighbour_ok:
                nb_vals[~neighbour_ok[c], j] = np.nan
    vals = pd.DataFrame(nb_vals, index=idx, columns=list(columns))
    stack = [own]
    for shift in (-1, 1):
        nb = pd.MultiIndex.from_arrays([df["station_id"], init, df["lead_time"] + shift])
        stack.append(vals.reindex(nb).values.astype(float))
    arr = np.stack(stack)
    with np.errstate(invalid="ignore"):
        cnt = np.isfinite(arr).sum(axis=0)
        tot = np.nansum(arr, axis=0)
        mean = np.where(cnt > 0, tot / np.maximum(cnt, 1), np.nan)
    out = df.copy()
    out[list(columns)] = mean
    return out


def build_predictor_matrix(
    fields: pd.DataFrame,
    stations: Mapping[str, StationMeta],
    cams: Optional[pd.DataFrame] = None,
    observations: Optional[pd.DataFrame] = None,
    profiles: Optional[pd.DataFrame] = None,
    grids: Optional[pd.DataFrame] = None,
    clearsky_cfg: Optional[solar.ClearSkyConfig] = None,
    temporal: bool = True,
    spatial: bool = True,
    min_clearsky_wm2: float = 20.0,
) -> PredictorMatrix:
    """Assemble the predictor matrix for every (station, valid_time, lead_time).

    ``fields`` holds hourly model output with radiation in W/m2 (converted
    to clear-sky index here), ``RAIN`` as the hourly sum and the layer
    columns either present directly or derived from ``profiles``.
    ``cams`` is the 3-hourly aerosol table, matched to the nearest time.
    ``observations`` (station_id, valid_time, ghi_wm2) adds the observed
    clear-sky index. Rows with any missing predictor are dropped and
    counted.
    """
    cfg = clearsky_cfg or solar.ClearSkyConfig()
    df = fields.copy()
    df["valid_time"] = pd.to_datetime(df["valid_time"], utc=True)
    df = df.sort_values(KEYS, kind="mergesort").reset_index(drop=True)

    if grids is not None and spatial:
        g = grids.copy()
        g["valid_time"] = pd.to_datetime(g["valid_time"], utc=True)
        sm = _grid_smooth(g)
        df = df.drop(columns=[c for c in sm.columns if c not in KEYS and c in df.columns]).merge(sm, on=KEYS, how="left")
    if profiles is not None:
        p = profiles.copy()
        p["valid_time"] = pd.to_datetime(p["valid_time"], utc=True)
        lay = _profile_layers(p)
        df = df.drop(columns=[c for c in lay.columns if c not in KEYS and c in df.columns]).merge(lay, on=KEYS, how="left")

    cs = clearsky_for(df, stations, cfg)
    df["clearsky_wm2"] = cs
    lit = cs > 0
    if "G" in df:
        df["G_wm2"] = df["G"].astype(float)
    for name in RADIATION:
        if name in df:
            df[name] = np.where(lit, df[name].astype(float) / np.where(lit, cs, 1.0), np.nan)

    if temporal:
        ha_cols = [c for c in MODEL_FIELDS if c in df.columns]
        # indices with a near-zero clear-sky denominator are too noisy to borrow
        steady = cs > min_clearsky_wm2
        df = _temporal_smooth_frame(df, ha_cols, {c: steady for c in RADIATION})
        for name in RADIATION:
            if name in df:
                df.loc[~lit, name] = np.nan  # no index exists without sun

    if cams is not None:
        c = cams.copy()
        c["valid_time"] = pd.to_datetime(c["valid_time"], utc=True)
        matched = match_nearest_time(df, c, AEROSOL)
        for name in AEROSOL:
            df[name] = matched[name].astype(float)

    jd = solar.julian_day(df["valid_time"])
    lat = df["station_id"].map(lambda s: stations[s].latitude).values.astype(float)
    lon = df["station_id"].map(lambda s: stations[s].longitude).values.astype(float)
    # cos z at the middle of the averaging hour
    df["COSZ"] = solar._zenith_from_jd(lat, lon, jd - 1.0 / 48.0)
    df["LAT"] = lat
    df["LON"] = lon
    df["DOY"] = df["valid_time"].dt.dayofyear.astype(float)
    for name, attr in (("DIST_coast", "dist_coast_km"), ("DIST_water", "dist_water_km"), ("DIST_inland", "dist_inland_km")):
        df[name] = df["station_id"].map(lambda s: getattr(stations[s], attr)).astype(float)

    if observations is not None:
        o = observations[["station_id", "valid_time", "ghi_wm2"]].copy()
        o["valid_time"] = pd.to_datetime(o["valid_time"], utc=True)
        df = df.merge(o, on=["station_id", "valid_time"], how="left")
        with np.errstate(divide="ignore", invalid="ignore"):
            df["observation"] = np.where(df["clearsky_wm2"] > 0, df["ghi_wm2"] / df["clearsky_wm2"], np.nan)
    else:
        df["observation"] = np.nan

    missing = [n for n in PREDICTOR_NAMES if n not in df.columns]
    if missing:
        raise StructuralError(f"source data lacks predictors {missing}")
    values = df[list(PREDICTOR_NAMES)].to_numpy(dtype=float)
    keep = np.isfinite(values).all(axis=1)
    n_dropped = int((~keep).sum())
    if not keep.any():
        raise EmptyMatrixError("no case has a complete predictor set")
    if n_dropped:
        logger.info("dropped %d of %d cases with missing predictors", n_dropped, len(df))
    kept = df[keep].reset_index(drop=True)
    extra_cols = ["clearsky_wm2", "observation"] + (["G_wm2"] if "G_wm2" in kept else [])
    return PredictorMatrix(
        kept[KEYS].copy(), values[keep], PREDICTOR_NAMES, n_dropped, kept[extra_cols].copy()
    )
