"""File formats: schema-checked CSV ingestion, model files and forecast tables."""
from __future__ import annotations

import gzip
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .features import AEROSOL, MODEL_FIELDS
from .harness.synth import Dataset, write_csv


class SchemaError(ValueError):
    """Input table violates its schema; ``row`` is the 1-based file line."""

    def __init__(self, table, message, row=None, column=None):
        where = table
        if row is not None:
            where += f" line {row}"
        if column is not None:
            where += f" column '{column}'"
        super().__init__(f"{where}: {message}")
        self.table, self.row, self.column = table, row, column


@dataclass(frozen=True)
class TableSchema:
    name: str
    text: tuple = ()
    times: tuple = ()
    integers: tuple = ()
    numbers: tuple = ()  # finite or empty
    required_numbers: tuple = ()  # finite, never empty
    optional: tuple = ()  # numeric, may be absent

    @property
    def required(self) -> tuple:
        return self.text + self.times + self.integers + self.required_numbers + self.numbers


SCHEMAS = {
    "stations.csv": TableSchema(
        "stations.csv", text=("station_id",),
        required_numbers=("latitude", "longitude", "dist_coast_km", "dist_water_km", "dist_inland_km"),
        optional=("elevation_m",)),
    "observations.csv": TableSchema(
        "observations.csv", text=("station_id",), times=("valid_time",), numbers=("ghi_wm2",)),
    "model_fields.csv": TableSchema(
        "model_fields.csv", text=("station_id",), times=("valid_time",), integers=("lead_time",),
        numbers=tuple(MODEL_FIELDS)),
    "cams.csv": TableSchema(
        "cams.csv", text=("station_id",), times=("valid_time",), numbers=tuple(AEROSOL)),
}


def _first_bad(mask) -> int | None:
    idx = np.flatnonzero(np.asarray(mask))
    return int(idx[0]) + 2 if idx.size else None  # header is line 1


def parse_table(raw: pd.DataFrame, schema: TableSchema) -> pd.DataFrame:
    """Validate string cells against ``schema`` and convert column types."""
    missing = [c for c in schema.required if c not in raw.columns]
    if missing:
        raise SchemaError(schema.name, f"missing required columns {missing}")
    out = pd.DataFrame(index=raw.index)
    for col in schema.text:
        vals = raw[col].str.strip()
        bad = _first_bad(vals == "")
        if bad:
            raise SchemaError(schema.name, "empty value", bad, col)
        out[col] = vals
    for col in schema.times:
        vals = raw[col].str.strip()
        parsed = pd.to_datetime(vals, format="ISO8601", utc=True, errors="coerce")
        bad = _first_bad(parsed.isna())
        if bad:
            raise SchemaError(schema.name, f"not an ISO-8601 timestamp: {raw[col].iloc[bad - 2]!r}", bad, col)
        out[col] = parsed
    for col in schema.integers:
        num = pd.to_numeric(raw[col].str.strip(), errors="coerce")
        bad = _first_bad(num.isna() | (num != np.round(num)) | (num < 0))
        if bad:
            raise SchemaError(schema.name, f"expected a non-negative integer, got {raw[col].iloc[bad - 2]!r}", bad, col)
        out[col] = num.astype(np.int64)
    for col in schema.required_numbers + schema.numbers + tuple(c for c in schema.optional if c in raw.columns):
        text = raw[col].str.strip()
        num = pd.to_numeric(text, errors="coerce").astype(float)
        empty = text == ""
        invalid = (~empty & ~np.isfinite(num.to_numpy()))
        if col in schema.required_numbers:
            invalid |= empty
        bad = _first_bad(invalid)
        if bad:
            raise SchemaError(schema.name, f"expected a finite number, got {raw[col].iloc[bad - 2]!r}", bad, col)
        out[col] = num
    for col in raw.columns:
        if col not in out:
            out[col] = raw[col]
    return out


def read_table(path, schema: TableSchema) -> pd.DataFrame:
    try:
        raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise SchemaError(schema.name, "file is empty") from None
    return parse_table(raw, schema)


def load_dataset(directory) -> Dataset:
    """Read and validate the four input tables of a dataset directory."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"data directory not found: {d}")
    frames = []
    for name in Dataset.FILES:
        path = d / name
        if not path.exists():
            raise FileNotFoundError(f"missing input table: {path}")
        frames.append(read_table(path, SCHEMAS[name]))
    stations, obs, fields, cams = frames
    dup = stations["station_id"].duplicated()
    if dup.any():
        raise SchemaError("stations.csv", "duplicate station_id", _first_bad(dup), "station_id")
    neg = obs["ghi_wm2"] < 0
    if neg.any():
        raise SchemaError("observations.csv", "negative irradiance", _first_bad(neg), "ghi_wm2")
    known = set(stations["station_id"])
    for name, df in (("observations.csv", obs), ("model_fields.csv", fields), ("cams.csv", cams)):
        unknown = ~df["station_id"].isin(known)
        if unknown.any():
            row = _first_bad(unknown)
            raise SchemaError(name, f"unknown station {df['station_id'].iloc[row - 2]!r}", row, "station_id")
    return Dataset(stations, obs, fields, cams)


# --------------------------------------------------------------------------
# model files

MODEL_SUFFIX = ".json.gz"


def model_filename(engine: str, season: str, lead_time: int, fold: int) -> str:
    return f"{engine}_{season}_L{int(lead_time):02d}_F{int(fold)}{MODEL_SUFFIX}"


def write_json_gz(obj, path) -> None:
    """Gzipped JSON with a fixed header timestamp, so equal content gives equal bytes."""
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as raw, gzip.GzipFile(filename="", fileobj=raw, mode="wb", mtime=0) as fh:
        fh.write(text.encode("utf-8"))


def read_json_gz(path):
    with gzip.open(path, "rb") as fh:
        return json.loads(fh.read().decode("utf-8"))


# --------------------------------------------------------------------------
# forecast and report tables

FORECAST_KEYS = ["engine", "station_id", "valid_time", "lead_time", "season", "fold", "observation", "raw"]


def write_table(df: pd.DataFrame, path) -> None:
    write_csv(df, path)


def read_forecasts(path) -> pd.DataFrame:
    df = pd.read_csv(path, float_precision="round_trip", dtype={"station_id": str, "engine": str, "season": str})
    missing = [c for c in FORECAST_KEYS if c not in df.columns]
    if missing:
        raise SchemaError(Path(path).name, f"missing required columns {missing}")
    if not any(c.startswith("q") for c in df.columns):
        raise SchemaError(Path(path).name, "no quantile columns (q0.02 ...)")
    return df


def read_report(path) -> pd.DataFrame:
    return pd.read_csv(path, float_precision="round_trip", dtype={"engine": str, "season": str})


def ordered(values: Sequence[str], order: Sequence[str]) -> list:
    rank = {v: i for i, v in enumerate(order)}
    return sorted(set(values), key=lambda v: (rank.get(v, len(rank)), v))
