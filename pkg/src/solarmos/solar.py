"""Solar geometry, ESRA clear-sky irradiance and the clear-sky index transform.

Solar position follows the Astronomical Almanac's low-precision algorithm
as published by Michalsky (1988), good to about 0.01 deg over 1950-2050.
The clear-sky model is the ESRA formulation of Rigollier, Bauer & Wald
(2000): beam irradiance with the Kasten Rayleigh optical thickness
parameterisation, diffuse irradiance from the transmission function and
the angular function of the Linke turbidity.

All times are UTC. Functions accept scalars or numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

SOLAR_CONSTANT = 1367.0  # W/m2, ESRA value
_J2000 = 2451545.0
_UNIX_EPOCH_JD = 2440587.5


class ClearSkyConfigError(ValueError):
    pass


class DivisionGuardError(ZeroDivisionError):
    pass


@dataclass(frozen=True)
class SolarPosition:
    zenith: np.ndarray | float
    cos_zenith: np.ndarray | float

    @classmethod
    def from_zenith(cls, zenith) -> "SolarPosition":
        z = np.asarray(zenith, dtype=float)
        if np.any((z < 0) | (z > 180)):
            raise ValueError("zenith must lie in [0, 180] degrees")
        cz = np.cos(np.radians(z))
        if z.ndim == 0:
            return cls(float(z), float(cz))
        return cls(z, cz)


@dataclass(frozen=True)
class ClearSkyConfig:
    monthly_linke: tuple = (3.0,) * 12
    site_elevation_m: float = 0.0
    sample_minutes: int = 1

    def __post_init__(self):
        tl = tuple(float(x) for x in self.monthly_linke)
        if len(tl) != 12:
            raise ClearSkyConfigError(f"need 12 monthly Linke values, got {len(tl)}")
        if any(not np.isfinite(x) or x <= 0 for x in tl):
            raise ClearSkyConfigError("Linke turbidity values must be positive")
        if self.site_elevation_m < -430.0:
            raise ClearSkyConfigError("site elevation below -430 m")
        if self.sample_minutes <= 0 or 60 % self.sample_minutes:
            raise ClearSkyConfigError("sample_minutes must divide 60")
        object.__setattr__(self, "monthly_linke", tl)

    def linke_for_month(self, month):
        return np.asarray(self.monthly_linke)[np.asarray(month, dtype=int) - 1]


def _to_datetime64(time) -> np.ndarray:
    t = pd.DatetimeIndex(np.atleast_1d(pd.to_datetime(time, utc=True)))
    return t.tz_convert("UTC").tz_localize(None).values.astype("datetime64[ns]")


def julian_day(time) -> np.ndarray:
    t = _to_datetime64(time)
    seconds = (t - np.datetime64("1970-01-01T00:00:00", "ns")) / np.timedelta64(1, "s")
    return _UNIX_EPOCH_JD + seconds / 86400.0


def _zenith_from_jd(lat, lon, jd):
    n = jd - _J2000
    hour = ((jd + 0.5) % 1.0) * 24.0
    mean_lon = np.mod(280.460 + 0.9856474 * n, 360.0)
    mean_anom = np.radians(np.mod(357.528 + 0.9856003 * n, 360.0))
    ecl_lon = np.radians(
        mean_lon + 1.915 * np.sin(mean_anom) + 0.020 * np.sin(2.0 * mean_anom)
    )
    obliq = np.radians(23.439 - 4.0e-7 * n)
    ra = np.arctan2(np.cos(obliq) * np.sin(ecl_lon), np.cos(ecl_lon))
    dec = np.arcsin(np.sin(obliq) * np.sin(ecl_lon))
    gmst = np.mod(6.697375 + 0.0657098242 * n + hour, 24.0)
    lmst = np.mod(gmst + np.asarray(lon) / 15.0, 24.0)
    ha = np.mod(np.radians(lmst * 15.0) - ra + np.pi, 2.0 * np.pi) - np.pi
    phi = np.radians(lat)
    cz = np.sin(phi) * np.sin(dec) + np.cos(phi) * np.cos(dec) * np.cos(ha)
    return np.clip(cz, -1.0, 1.0)


def solar_position(lat, lon, time) -> SolarPosition:
    """Geometric (unrefracted) solar zenith angle at ``time``."""
    jd = julian_day(time)
    cz = _zenith_from_jd(lat, lon, jd)
    z = np.degrees(np.arccos(cz))
    if np.ndim(time) == 0 and np.ndim(lat) == 0 and np.ndim(lon) == 0:
        return SolarPosition(float(z[0]), float(cz[0]))
    return SolarPosition(z, cz)


def eccentricity_correction(day_of_year):
    day_angle = 2.0 * np.pi * np.asarray(day_of_year, dtype=float) / 365.25
    return 1.0 + 0.03344 * np.cos(day_angle - 0.048869)


def _relative_air_mass(sin_h, elevation_m):
    # refraction-corrected elevation, Kasten & Young with ESRA pressure term
    h = np.arcsin(np.clip(sin_h, 0.0, 1.0))
    dh = 0.061359 * (0.1594 + 1.1230 * h + 0.065656 * h**2) / (
        1.0 + 28.9344 * h + 277.3971 * h**2
    )
    h_true = np.degrees(h + dh)
    p_ratio = np.exp(-np.asarray(elevation_m, dtype=float) / 8434.5)
    return p_ratio / (np.sin(np.radians(h_true)) + 0.50572 * (h_true + 6.07995) ** -1.6364)


def _rayleigh_thickness(m):
    small = 1.0 / (6.6296 + 1.7513 * m - 0.1202 * m**2 + 0.0065 * m**3 - 0.00013 * m**4)
    large = 1.0 / (10.4 + 0.718 * m)
    return np.where(m <= 20.0, small, large)


def esra_components(cos_zenith, day_of_year, linke, elevation_m=0.0):
    """Beam and diffuse horizontal clear-sky irradiance (W/m2)."""
    linke = np.asarray(linke, dtype=float)
    if np.any(~(linke > 0)):
        raise ClearSkyConfigError("Linke turbidity must be positive")
    sin_h = np.asarray(cos_zenith, dtype=float)
    up = sin_h > 0.0
    s = np.where(up, sin_h, 0.0)
    i0 = SOLAR_CONSTANT * eccentricity_correction(day_of_year)

    m = _relative_air_mass(np.where(up, s, 1.0), elevation_m)
    beam = i0 * s * np.exp(-0.8662 * linke * m * _rayleigh_thickness(m))

    trd = -1.5843e-2 + 3.0543e-2 * linke + 3.797e-4 * linke**2
    a0 = 2.6463e-1 - 6.1581e-2 * linke + 3.1408e-3 * linke**2
    a0 = np.where(a0 * trd < 2e-3, 2e-3 / trd, a0)
    a1 = 2.04020 + 1.8945e-2 * linke - 1.1161e-2 * linke**2
    a2 = -1.3025 + 3.9231e-2 * linke + 8.5079e-3 * linke**2
    diffuse = i0 * trd * (a0 + a1 * s + a2 * s**2)

    beam = np.where(up, beam, 0.0)
    # the diffuse angular function is not zero at the horizon; taper it so
    # global irradiance is continuous at zenith 90 deg
    diffuse = np.where(up, diffuse * np.minimum(1.0, s / _HORIZON_TAPER), 0.0)
    return beam, diffuse


# sin(0.5 deg): width of the diffuse taper just above the horizon
_HORIZON_TAPER = np.sin(np.radians(0.5))


def clearsky_ghi(pos: SolarPosition, day_of_year, cfg: ClearSkyConfig | None = None, linke=None):
    """ESRA global horizontal clear-sky irradiance in W/m2.

    ``linke`` overrides the monthly table (needed when the caller already
    knows the month); otherwise ``cfg.monthly_linke`` is looked up from
    ``day_of_year`` assuming a non-leap year.
    """
    cfg = cfg or ClearSkyConfig()
    if linke is None:
        month = pd.to_datetime(np.asarray(day_of_year, dtype=int) - 1, unit="D", origin="2001-01-01").month
        linke = cfg.linke_for_month(np.asarray(month))
    beam, diffuse = esra_components(pos.cos_zenith, day_of_year, linke, cfg.site_elevation_m)
    out = beam + diffuse
    return float(out) if np.ndim(out) == 0 else out


def hourly_clearsky(lat, lon, hour_start, cfg: ClearSkyConfig | None = None):
    """Mean ESRA irradiance over ``[hour_start, hour_start + 1h)``.

    Samples sit at the midpoints of ``cfg.sample_minutes`` sub-intervals.
    """
    cfg = cfg or ClearSkyConfig()
    starts = _to_datetime64(hour_start)
    step = cfg.sample_minutes
    offsets = (np.arange(0, 60, step) + step / 2.0) * 60e9
    times = starts[:, None] + offsets.astype("timedelta64[ns]")[None, :]
    flat = times.ravel()
    jd = julian_day(flat)
    lat_b = np.repeat(np.broadcast_to(np.asarray(lat, dtype=float), starts.shape), offsets.size)
    lon_b = np.repeat(np.broadcast_to(np.asarray(lon, dtype=float), starts.shape), offsets.size)
    cz = _zenith_from_jd(lat_b, lon_b, jd)
    idx = pd.DatetimeIndex(flat)
    beam, diffuse = esra_components(cz, idx.dayofyear.values, cfg.linke_for_month(idx.month.values), cfg.site_elevation_m)
    mean = (beam + diffuse).reshape(times.shape).mean(axis=1)
    if np.ndim(hour_start) == 0:
        return float(mean[0])
    return mean


def to_csi(ghi, clearsky):
    ghi = np.asarray(ghi, dtype=float)
    clearsky = np.asarray(clearsky, dtype=float)
    if np.any(clearsky <= 0):
        raise DivisionGuardError("clear-sky irradiance must be positive to form a clear-sky index")
    out = np.maximum(ghi, 0.0) / clearsky
    return float(out) if out.ndim == 0 else out


def from_csi(csi, clearsky):
    out = np.asarray(csi, dtype=float) * np.asarray(clearsky, dtype=float)
    return float(out) if out.ndim == 0 else out
