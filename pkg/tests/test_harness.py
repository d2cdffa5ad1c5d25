import dataclasses

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from solarmos import engines as registry
from solarmos import verify
from solarmos.harness import experiment, report
from solarmos.harness.config import ConfigError, ExperimentConfig, dump_config, parse_config
from solarmos.harness.importance import aggregate_importance
from solarmos.harness.scoring import ALL, RAW, metric_value, quantile_columns, score_forecasts
from solarmos.harness.slicing import date_blocks, daylight_filter, issue_dates, make_slices
from solarmos.harness.synth import SynthSpec, read_dataset, synth_generate, write_dataset
from solarmos.engines.quantile import MCQRNNConfig
from solarmos.engines.trees import BoostConfig, ForestConfig


def fast_config(**kw):
    hyper = registry.default_hyper()
    hyper["MCQRNN"] = MCQRNNConfig(iterations=2, steps_per_iteration=40, steps=2, screen_steps_per_iteration=15)
    hyper["QRF"] = ForestConfig.qrf(n_trees=20)
    hyper["GRF"] = ForestConfig.grf(n_trees=20)
    hyper["GBDT"] = BoostConfig(n_trees=20)
    base = dict(lead_times=(12,), seasons=("Summer",), seed=7, hyper=hyper, min_cases=20)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="module")
def small_run(small_dataset):
    return experiment.run_experiment(small_dataset, fast_config(), progress=None)


# ---------------------------------------------------------------- configuration

def test_defaults_match_documented_settings():
    cfg = ExperimentConfig()
    assert cfg.engines == registry.ENGINE_NAMES
    assert len(cfg.levels) == 49 and cfg.folds == 3
    assert cfg.lead_times == tuple(range(1, 25))
    h = cfg.hyper
    assert (h["GA"].steps_mu, h["GA"].steps_sigma) == (5, 1)
    assert h["QR"].steps == 5 and h["QRF"].n_trees == 500 and h["GBDT"].learning_rate == 0.1


def test_yaml_round_trip_preserves_hash():
    cfg = fast_config()
    again = parse_config(dump_config(cfg))
    assert again.hash() == cfg.hash()
    assert again.with_seed(8).hash() != cfg.hash()


def test_unknown_key_reports_line():
    text = "seed: 3\nexperiment:\n  folds: 3\n  foldz: 4\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.key == "experiment.foldz" and err.value.line == 4


def test_ill_typed_values_are_rejected():
    for text, key in (("seed: abc\n", "seed"), ("experiment:\n  folds: 2.5\n", "experiment.folds"),
                      ("experiment:\n  temporal_smoothing: 1\n", "experiment.temporal_smoothing"),
                      ("engines:\n  QRF:\n    n_trees: many\n", "engines.QRF.n_trees"),
                      ("engines:\n  XGB: {}\n", "engines.XGB")):
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert err.value.key == key


def test_semantic_errors_carry_key():
    with pytest.raises(ConfigError) as err:
        parse_config("experiment:\n  folds: 1\n")
    assert err.value.key == "experiment.folds" and err.value.line == 2
    with pytest.raises(ConfigError):
        parse_config("experiment:\n  engines: [GA, FOO]\n")


def test_engine_hyper_overrides():
    cfg = parse_config("engines:\n  GBDT:\n    n_trees: 7\n  GA:\n    steps_mu: 2\n")
    assert cfg.hyper["GBDT"].n_trees == 7 and cfg.hyper["GA"].steps_mu == 2
    assert cfg.hyper["QRF"] == ForestConfig.qrf()


# ---------------------------------------------------------------- synthetic data

def test_synth_shapes_and_determinism():
    spec = SynthSpec(n_stations=1, n_days=30)
    a = synth_generate(spec, 5)
    b = synth_generate(spec, 5)
    assert len(a.observations) == 1 * 30 * 24
    assert len(a.fields) == 30 * 24
    for x, y in zip(a.tables().values(), b.tables().values()):
        pd.testing.assert_frame_equal(x, y)
    c = synth_generate(spec, 6)
    assert not np.array_equal(a.observations["ghi_wm2"], c.observations["ghi_wm2"])


def test_synth_write_read_round_trip(tmp_path, small_dataset):
    counts = write_dataset(small_dataset, tmp_path)
    assert counts["observations.csv"] == len(small_dataset.observations)
    back = read_dataset(tmp_path)
    assert np.allclose(back.observations["ghi_wm2"], small_dataset.observations["ghi_wm2"], rtol=0, atol=1e-9)


def test_coastal_station_clearer_in_summer():
    ds = synth_generate(SynthSpec(n_stations=3, start="2016-05-01", n_days=120), 1)
    st = ds.states
    clear = st.assign(c=st["state"] == "clear").groupby("station_id")["c"].mean()
    assert clear["S02"] > clear["S03"]  # S02 sits on the coast, S03 far inland


def test_invalid_synth_spec():
    with pytest.raises(ValueError):
        SynthSpec(n_days=0)
    with pytest.raises(ValueError):
        SynthSpec(leads=(0, 1))


# ---------------------------------------------------------------- slicing

def test_daylight_filter_is_strict():
    df = pd.DataFrame({"clearsky_wm2": [0.0, 20.0, 20.01, 300.0]})
    assert list(daylight_filter(df)["clearsky_wm2"]) == [20.01, 300.0]


@given(st.integers(3, 200), st.integers(2, 5))
def test_date_blocks_partition(n, k):
    dates = np.arange(n)
    blocks = date_blocks(dates, k)
    assert len(blocks) == k
    assert np.array_equal(np.concatenate(blocks), dates)
    sizes = [b.size for b in blocks]
    assert max(sizes) - min(sizes) <= 1


def test_slices_partition_each_season_and_lead(small_dataset):
    cfg = fast_config(lead_times=(9, 12))
    cases = experiment.prepare_cases(small_dataset, cfg)
    slices = experiment.plan_slices(cases, cfg)
    assert {s.lead_time for s in slices} == {9, 12}
    for lead in (9, 12):
        mine = [s for s in slices if s.lead_time == lead]
        tests = np.concatenate([s.test for s in mine])
        assert np.unique(tests).size == tests.size
        for s in mine:
            assert np.intersect1d(s.train, s.test).size == 0
            assert np.array_equal(np.sort(np.concatenate([s.train, s.test])), np.sort(tests))
    # an issue date never sits on both sides
    dates = issue_dates(cases.matrix.keys)
    for s in slices:
        assert not set(dates[s.train]) & set(dates[s.test])


def test_min_cases_skips_slices(small_dataset):
    cfg = fast_config(min_cases=10_000)
    cases = experiment.prepare_cases(small_dataset, cfg)
    with pytest.warns(UserWarning):
        assert experiment.plan_slices(cases, cfg) == []


def test_cell_seeds_are_distinct_and_stable(small_dataset):
    cfg = fast_config(lead_times=(9, 12))
    cases = experiment.prepare_cases(small_dataset, cfg)
    slices = experiment.plan_slices(cases, cfg)
    seeds = {(e, s.key): experiment.cell_seed(1, e, s) for e in registry.ENGINE_NAMES for s in slices}
    assert len(set(seeds.values())) == len(seeds)
    assert experiment.cell_seed(1, "QR", slices[0]) == seeds[("QR", slices[0].key)]


# ---------------------------------------------------------------- scoring

def _toy_forecasts(rng, n=40):
    levels = np.array([0.1, 0.5, 0.9])
    rows = []
    obs_of = {fold: rng.uniform(0, 1.1, n) for fold in (1, 2)}
    raw_of = {fold: obs_of[fold] + rng.normal(0, 0.3, n) for fold in (1, 2)}
    for engine in ("GA", "QRF"):
        for fold in (1, 2):
            obs = obs_of[fold]
            F = np.sort(obs[:, None] + rng.normal(0, 0.2, (n, 3)), axis=1)
            df = pd.DataFrame(F, columns=quantile_columns(levels))
            df.insert(0, "engine", engine)
            df["station_id"] = "A"
            df["valid_time"] = pd.date_range("2016-06-01", periods=n, freq="h", tz="UTC") + pd.Timedelta(days=10 * fold)
            df["lead_time"] = 12
            df["season"] = "Summer"
            df["fold"] = fold
            df["observation"] = obs
            df["raw"] = raw_of[fold]
            rows.append(df)
    return pd.concat(rows, ignore_index=True), levels


def test_slice_scores_match_verify_functions():
    fc, levels = _toy_forecasts(np.random.default_rng(1))
    metrics, rel, pev = score_forecasts(fc)
    part = fc[(fc.engine == "GA") & (fc.fold == 1)]
    F = part[quantile_columns(levels)].to_numpy()
    obs = part["observation"].to_numpy()
    assert metric_value(metrics, "GA", "CRPSS", "Summer", 12, 1) == pytest.approx(verify.crpss(F, obs, levels), rel=1e-12)
    assert metric_value(metrics, "GA", "RMSE_SS", "Summer", 12, 1) == pytest.approx(verify.rmse_ss(F[:, 1], obs), rel=1e-12)
    bs, bss = verify.brier(F, obs, 0.5)
    assert metric_value(metrics, "GA", "BS", "Summer", 12, 1, 0.5) == pytest.approx(bs, rel=1e-12)
    assert metric_value(metrics, "GA", "BSS", "Summer", 12, 1, 0.5) == pytest.approx(bss, rel=1e-12)


def test_pooled_rows_and_raw_reference():
    fc, _ = _toy_forecasts(np.random.default_rng(2))
    metrics, rel, pev = score_forecasts(fc)
    n = metric_value(metrics, "QRF", "N")
    assert n == len(fc[fc.engine == "QRF"])
    assert metric_value(metrics, RAW, "N") == n
    assert "CRPS" not in set(metrics[metrics.engine == RAW].metric)
    raw = fc[fc.engine == "GA"]
    se = np.sum((raw["observation"] - raw["raw"]) ** 2)
    assert metric_value(metrics, RAW, "RMSE") == pytest.approx(np.sqrt(se / n), rel=1e-12)
    assert set(rel["engine"]) == {"GA", "QRF"}
    counts = rel[(rel.engine == "GA") & (rel.threshold == 0.5)]["count"].sum()
    assert counts == n
    assert set(pev["engine"]) == {"GA", "QRF", RAW}
    assert (pev.groupby(["engine", "threshold"]).size() == 99).all()


def test_empty_forecasts_give_empty_tables():
    metrics, rel, pev = score_forecasts(pd.DataFrame())
    assert metrics.empty and rel.empty and pev.empty


# ---------------------------------------------------------------- experiment

def test_experiment_produces_complete_tables(small_run):
    res = small_run
    assert res.errors.empty
    assert set(res.forecasts["engine"]) == set(registry.ENGINE_NAMES)
    per_engine = res.forecasts.groupby("engine").size()
    assert per_engine.nunique() == 1
    qcols = [c for c in res.forecasts.columns if c.startswith("q")]
    assert len(qcols) == 49
    F = res.forecasts[qcols].to_numpy()
    assert np.all(np.diff(F, axis=1) >= 0) and np.all(F >= 0)
    assert len(res.models) == 7 * len(res.slices)


def test_experiment_skill_positive_on_small_run(small_run):
    for e in registry.ENGINE_NAMES:
        assert metric_value(small_run.metrics, e, "CRPSS") > 0


def test_each_slice_uses_its_own_test_cases(small_run):
    fc = small_run.forecasts
    one = fc[fc.engine == "GA"]
    for s in small_run.slices:
        rows = one[(one.fold == s.fold) & (one.lead_time == s.lead_time)]
        assert len(rows) == s.test.size


def test_experiment_is_deterministic(small_dataset, small_run):
    again = experiment.run_experiment(small_dataset, fast_config(), progress=None)
    pd.testing.assert_frame_equal(again.forecasts, small_run.forecasts)
    pd.testing.assert_frame_equal(again.metrics, small_run.metrics)


def test_parallel_matches_serial(small_dataset, small_run):
    par = experiment.run_experiment(small_dataset, fast_config(), jobs=2, progress=None)
    pd.testing.assert_frame_equal(par.forecasts, small_run.forecasts)


def test_failed_cell_is_recorded_not_fatal(small_dataset, monkeypatch):
    real = registry.fit_engine

    def flaky(engine, *args, **kw):
        if engine == "GBDT":
            raise RuntimeError("boom")
        return real(engine, *args, **kw)

    monkeypatch.setattr(registry, "fit_engine", flaky)
    res = experiment.run_experiment(small_dataset, fast_config(engines=("GA", "GBDT")), progress=None)
    assert set(res.forecasts["engine"]) == {"GA"}
    assert len(res.errors) == len(res.slices)
    assert res.errors["error"].str.contains("RuntimeError: boom").all()


# ---------------------------------------------------------------- importance and report

def test_importance_families(small_run):
    imp = small_run.importance
    assert set(imp["family"]) == {"stepwise", "trees"}
    for fam in ("stepwise", "trees"):
        top = imp[(imp.family == fam) & (imp.engine == "all") & (imp["rank"] == 1)]
        assert top["predictor"].iloc[0] == "G"
    step_all = imp[(imp.family == "stepwise") & (imp.engine == "all")]
    n_fits = sum(1 for k in small_run.models if k[0] in registry.STEPWISE_ENGINES)
    assert step_all["score"].max() <= n_fits


def test_importance_counts_selection():
    class M:
        def __init__(self, engine, selected=(), importance=None):
            self.engine, self.selected, self.importance = engine, selected, importance or {}

    models = {("GA", "Summer", 1, k): M("GA", ("G", "RAIN")) for k in range(12)}
    models[("QRF", "Summer", 1, 1)] = M("QRF", importance={"G": 0.7, "AOD": 0.3})
    imp = aggregate_importance(models, ["AOD", "G", "RAIN"])
    ga = imp[(imp.family == "stepwise") & (imp.engine == "GA")].set_index("predictor")["score"]
    assert ga["G"] == 12 and ga["RAIN"] == 12 and ga["AOD"] == 0
    tr = imp[(imp.family == "trees") & (imp.engine == "all")]
    assert list(tr["predictor"]) == ["G", "AOD"]


def test_report_tables(small_run):
    tables = report.build_tables(small_run.metrics, small_run.reliability, small_run.pev, small_run.importance)
    assert set(tables) == {"skill_vs_lead.csv", "bss_vs_threshold.csv", "overall_scores.csv", "reliability.csv",
                           "pev_vs_cost_loss.csv", "importance.csv"}
    overall = tables["overall_scores.csv"]
    assert list(overall.columns[1:]) == list(registry.ENGINE_NAMES) + [RAW]
    imp = tables["importance.csv"]
    assert (imp[imp["rank"] == 1]["all"] == "G").all()
    assert len(tables["bss_vs_threshold.csv"]) == 3
