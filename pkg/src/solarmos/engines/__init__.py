"""Engine registry: one uniform fit/predict/serialise surface for the seven
regression methods."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Any, Sequence

import numpy as np

from . import parametric, quantile, trees

ENGINE_NAMES = ("GA", "NOTR", "QR", "MCQRNN", "QRF", "GRF", "GBDT")
STEPWISE_ENGINES = ("GA", "NOTR", "QR", "MCQRNN")
TREE_ENGINES = ("QRF", "GRF", "GBDT")
ENGINE_VERSION = "solarmos-engines-1"


class UnknownEngineError(ValueError):
    def __init__(self, name):
        super().__init__(f"unknown engine {name!r}; valid engines: {', '.join(ENGINE_NAMES)}")
        self.name = name


@dataclass(frozen=True)
class ParametricHyper:
    steps_mu: int = 5
    steps_sigma: int = 1


@dataclass(frozen=True)
class QRHyper:
    steps: int = 5
    noise: bool = True


def default_hyper() -> dict:
    return {
        "GA": ParametricHyper(),
        "NOTR": ParametricHyper(),
        "QR": QRHyper(),
        "MCQRNN": quantile.MCQRNNConfig(),
        "QRF": trees.ForestConfig.qrf(),
        "GRF": trees.ForestConfig.grf(),
        "GBDT": trees.BoostConfig(),
    }


def hyper_fields(engine: str) -> tuple:
    return tuple(f.name for f in fields(default_hyper()[check_engine(engine)]))


def make_hyper(engine: str, overrides: dict | None = None):
    base = default_hyper()[check_engine(engine)]
    overrides = dict(overrides or {})
    unknown = sorted(set(overrides) - set(hyper_fields(engine)))
    if unknown:
        raise ValueError(f"unknown {engine} hyper-parameters: {unknown}")
    return replace(base, **overrides)


def check_engine(name: str) -> str:
    if name not in ENGINE_NAMES:
        raise UnknownEngineError(name)
    return name


@dataclass
class FittedModel:
    engine: str
    model: Any
    selected: tuple = ()
    importance: dict = field(default_factory=dict)

    def predict(self, X, names, levels) -> np.ndarray:
        m = self.model
        if self.engine in ("GA", "NOTR"):
            return m.predict(X, names, levels)
        if self.engine == "QR":
            return m.predict(X, names)
        if self.engine == "GBDT":
            return m.predict(X, names)
        return m.predict(X, names, levels)

    def to_dict(self) -> dict:
        return {"engine": self.engine, "model": self.model.to_dict(), "selected": list(self.selected),
                "importance": self.importance}

    @classmethod
    def from_dict(cls, d) -> "FittedModel":
        engine = check_engine(d["engine"])
        loader = {
            "GA": parametric.ParametricModel, "NOTR": parametric.ParametricModel,
            "QR": quantile.LinearQuantileModel, "MCQRNN": quantile.MonotoneQuantileNet,
            "QRF": trees.Forest, "GRF": trees.Forest, "GBDT": trees.BoostedQuantileModel,
        }[engine]
        return cls(engine, loader.from_dict(d["model"]), tuple(d.get("selected", ())), dict(d.get("importance", {})))


def _normalised(imp: dict) -> dict:
    total = sum(imp.values())
    if total <= 0:
        return {k: 0.0 for k in imp}
    return {k: v / total for k, v in imp.items()}


def fit_engine(engine: str, X, names: Sequence[str], y, levels, hyper=None, seed: int = 0) -> FittedModel:
    """Fit one engine on a training slice; ``seed`` drives all randomness."""
    check_engine(engine)
    hyper = hyper if hyper is not None else default_hyper()[engine]
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    levels = np.asarray(levels, dtype=float)
    if engine in ("GA", "NOTR"):
        m = parametric.fit_sequential(engine, X, names, y, hyper.steps_mu, hyper.steps_sigma)
        return FittedModel(engine, m, tuple(sorted(m.selection())))
    if engine == "QR":
        m = quantile.fit_qr(X, names, y, levels, hyper.steps, noise_seed=seed if hyper.noise else None)
        return FittedModel(engine, m, tuple(sorted(m.selection())))
    if engine == "MCQRNN":
        m = quantile.fit_mcqrnn(X, names, y, levels, hyper, seed=seed)
        return FittedModel(engine, m, tuple(sorted(m.selection())))
    if engine in ("QRF", "GRF"):
        m = trees.fit_forest(X, names, y, hyper, seed=seed)
        return FittedModel(engine, m, (), _normalised(m.importance()))
    m = trees.fit_gbdt(X, names, y, levels, hyper, seed=seed)
    return FittedModel(engine, m, (), _normalised(m.importance()))
