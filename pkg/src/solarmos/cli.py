"""Command-line driver: synth, fit, predict, verify, report."""
from __future__ import annotations

import argparse
import logging
import sys
import time
import traceback
import warnings
from pathlib import Path

import pandas as pd

from . import engines as registry
from . import fileio
from .domain import StructuralError, ValidationError
from .features import PREDICTOR_NAMES, EmptyMatrixError, registry_hash
from .harness import experiment, report
from .harness.config import ConfigError, ExperimentConfig, dump_config, load_config
from .harness.importance import aggregate_importance
from .harness.scoring import score_forecasts
from .harness.synth import synth_generate, write_dataset

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 1, 2, 3
MODEL_FORMAT = 1

logger = logging.getLogger("solarmos")


class UsageError(Exception):
    pass


class DataError(Exception):
    """Inputs are readable but inconsistent, e.g. a model built on other data."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="solarmos", description="Probabilistic solar radiation post-processing comparison.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def add(name, help_text, data=True, engines=True, jobs=False, data_help="dataset directory"):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", type=Path, help="YAML configuration file (defaults apply when omitted)")
        if data:
            p.add_argument("--data", type=Path, help=data_help)
        p.add_argument("--out", type=Path, required=True, help="output directory")
        p.add_argument("--seed", type=int, help="root seed, overrides the configuration")
        if engines:
            p.add_argument("--engines", help="comma-separated engine names, e.g. GA,QRF")
        if jobs:
            p.add_argument("--jobs", type=int, default=1, help="worker processes for fitting")
        return p

    add("synth", "write a synthetic dataset", data=False, engines=False)
    add("fit", "fit every engine on every cross-validation slice", jobs=True)
    add("predict", "forecast each slice's test fold with the fitted models")
    add("verify", "score forecasts into metric, reliability and value tables",
        data_help="directory holding forecasts.csv (default: --out)")
    add("report", "comparison tables for plotting", engines=False,
        data_help="directory holding the verification tables (default: --out)")
    return parser


def resolve_config(args) -> ExperimentConfig:
    if args.config is not None:
        if not args.config.is_file():
            raise ConfigError(f"configuration file not found: {args.config}")
        cfg = load_config(args.config)
    else:
        cfg = ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "engines", None):
        names = [n.strip() for n in args.engines.split(",") if n.strip()]
        for n in names:
            registry.check_engine(n)
        cfg = cfg.with_engines(names)
    if getattr(args, "jobs", 1) < 1:
        raise UsageError("--jobs must be at least 1")
    return cfg


def model_config_hash(cfg: ExperimentConfig) -> str:
    """Configuration hash that ignores which engines a command selects."""
    return cfg.with_engines(registry.ENGINE_NAMES).hash()


def _out_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create output directory {path}: {err.strerror}") from None
    return path


def _write(df: pd.DataFrame, path: Path) -> None:
    try:
        fileio.write_table(df, path)
    except OSError as err:
        raise OSError(f"cannot write {path}: {err.strerror}") from None


def _say(msg: str) -> None:
    print(msg, flush=True)


def _load_cases(args, cfg):
    if args.data is None:
        raise UsageError("--data is required")
    ds = fileio.load_dataset(args.data)
    return experiment.prepare_cases(ds, cfg)


# --------------------------------------------------------------------------
# commands

def cmd_synth(args) -> int:
    cfg = resolve_config(args)
    ds = synth_generate(cfg.synth, cfg.seed)
    out = _out_dir(args.out)
    try:
        counts = write_dataset(ds, out)
    except OSError as err:
        raise OSError(f"cannot write dataset to {out}: {err.strerror}") from None
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    for name, n in counts.items():
        _say(f"{name}: {n} rows")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = resolve_config(args)
    cases = _load_cases(args, cfg)
    slices = experiment.plan_slices(cases, cfg)
    out = _out_dir(args.out)
    models_dir = _out_dir(out / "models")
    if not slices:
        warnings.warn("no slice has enough cases; nothing to fit")
    t0 = time.perf_counter()
    results = experiment.fit_cells(cases, slices, cfg, jobs=args.jobs)
    header = {
        "format": MODEL_FORMAT,
        "engine_version": registry.ENGINE_VERSION,
        "config_hash": model_config_hash(cfg),
        "data_hash": cases.data_hash(),
        "registry_hash": registry_hash(cases.matrix.names),
        "seed": cfg.seed,
    }
    for engine in cfg.engines:
        for stale in models_dir.glob(f"{engine}_*{fileio.MODEL_SUFFIX}"):
            stale.unlink()
    errors = []
    written = 0
    for res in results:
        if res.error is not None:
            errors.append((res.engine, *res.key, res.error))
            continue
        season, lead, fold = res.key
        doc = dict(header, cell_seed=res.seed, slice={"season": season, "lead_time": lead, "fold": fold},
                   levels=list(cfg.levels), model=res.model.to_dict())
        fileio.write_json_gz(doc, models_dir / fileio.model_filename(res.engine, season, lead, fold))
        written += 1
    (out / "config.yaml").write_text(dump_config(cfg), encoding="utf-8")
    _write(pd.DataFrame(errors, columns=experiment.ERROR_COLUMNS), out / "fit_errors.csv")
    _say(f"fitted {written} models over {len(slices)} slices in {time.perf_counter() - t0:.1f} s; "
         f"{len(errors)} failed cells")
    return EXIT_OK


def load_models(models_dir: Path, cfg: ExperimentConfig, expect: dict | None = None) -> dict:
    """Read model files for the configured engines, refusing any mismatch."""
    if not models_dir.is_dir():
        raise FileNotFoundError(f"model directory not found: {models_dir}")
    models = {}
    for path in sorted(models_dir.glob("*" + fileio.MODEL_SUFFIX)):
        doc = fileio.read_json_gz(path)
        engine = doc["model"]["engine"]
        if engine not in cfg.engines:
            continue
        if expect is not None:
            for key, want in expect.items():
                if doc.get(key) != want:
                    raise DataError(f"{path.name}: {key} mismatch, model has {doc.get(key)} but current run has {want}")
        sl = doc["slice"]
        models[(engine, sl["season"], int(sl["lead_time"]), int(sl["fold"]))] = registry.FittedModel.from_dict(doc["model"])
    order = {e: i for i, e in enumerate(registry.ENGINE_NAMES)}
    seasons = {s: i for i, s in enumerate(experiment.SEASON_ORDER)}
    return dict(sorted(models.items(), key=lambda kv: (order[kv[0][0]], seasons[kv[0][1]], kv[0][2], kv[0][3])))


def cmd_predict(args) -> int:
    cfg = resolve_config(args)
    cases = _load_cases(args, cfg)
    expect = {
        "format": MODEL_FORMAT,
        "engine_version": registry.ENGINE_VERSION,
        "seed": cfg.seed,
        "registry_hash": registry_hash(cases.matrix.names),
        "data_hash": cases.data_hash(),
        "config_hash": model_config_hash(cfg),
    }
    models = load_models(args.out / "models", cfg, expect)
    if not models:
        raise FileNotFoundError(f"no model files for engines {', '.join(cfg.engines)} in {args.out / 'models'}")
    slices = experiment.plan_slices(cases, cfg)
    forecasts = experiment.predict_slices(cases, slices, models, list(cfg.levels))
    out = _out_dir(args.out)
    _write(forecasts, out / "forecasts.csv")
    _say(f"wrote {len(forecasts)} forecast rows from {len(models)} models")
    return EXIT_OK


def cmd_verify(args) -> int:
    cfg = resolve_config(args)
    src = args.data if args.data is not None else args.out
    path = src / "forecasts.csv"
    if not path.is_file():
        raise FileNotFoundError(f"forecast file not found: {path}")
    fc = fileio.read_forecasts(path)
    fc = fc[fc["engine"].isin(cfg.engines)].reset_index(drop=True)
    if fc.empty:
        warnings.warn("no forecast rows to verify; writing empty reports")
    metrics, rel, pev = score_forecasts(fc, cfg.event_thresholds, cfg.reliability_bins)
    out = _out_dir(args.out)
    _write(metrics, out / "metrics.csv")
    _write(rel, out / "reliability.csv")
    _write(pev, out / "pev.csv")
    models_dir = src / "models"
    if models_dir.is_dir():
        models = load_models(models_dir, cfg)
        _write(aggregate_importance(models, PREDICTOR_NAMES), out / "importance.csv")
    _say(f"scored {len(fc)} forecast rows into {len(metrics)} metric rows")
    return EXIT_OK


def cmd_report(args) -> int:
    src = args.data if args.data is not None else args.out
    frames = {}
    for name in ("metrics", "reliability", "pev"):
        path = src / f"{name}.csv"
        if not path.is_file():
            raise FileNotFoundError(f"report file not found: {path}")
        frames[name] = fileio.read_report(path)
    imp_path = src / "importance.csv"
    importance = pd.read_csv(imp_path, dtype={"predictor": str}) if imp_path.is_file() else None
    tables = report.build_tables(frames["metrics"], frames["reliability"], frames["pev"], importance)
    out = _out_dir(args.out)
    for name, table in tables.items():
        _write(table, out / name)
    _say(f"wrote {len(tables)} tables to {out}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict, "verify": cmd_verify, "report": cmd_report}


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr, flush=True)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    warnings.showwarning = _show_warning
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, registry.UnknownEngineError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except (fileio.SchemaError, StructuralError, ValidationError, EmptyMatrixError, DataError,
            FileNotFoundError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA
    except Exception:  # anything else is a bug
        traceback.print_exc(file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
