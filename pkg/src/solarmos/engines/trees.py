"""Tree ensembles: quantile regression forests (QRF), generalised random
forests with a distributional split rule (GRF), and gradient-boosted
stumps on the pinball loss (GBDT).

Every random draw comes from a per-tree (or per-level) Philox stream keyed
on the root seed, so serial and parallel runs agree bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..domain import sanitize_array
from . import _treekernel as K
from ._common import as_levels, select_columns

PILOT_LEVELS = np.array([0.1, 0.5, 0.9])


class PredictionError(RuntimeError):
    pass


def _stream(seed, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def _name_ranks(names) -> np.ndarray:
    order = sorted(range(len(names)), key=lambda i: names[i])
    rank = np.empty(len(names), dtype=np.int64)
    rank[order] = np.arange(len(names))
    return rank


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 500
    min_leaf: int = 5
    sample_fraction: float = 0.5
    predictor_fraction: float = 1.0 / 3.0
    replace: bool = True
    criterion: str = "variance"  # or "distribution"
    max_depth: int = 10_000

    def __post_init__(self):
        if self.n_trees < 1 or self.min_leaf < 1:
            raise ValueError("n_trees and min_leaf must be positive")
        if not 0 < self.sample_fraction <= 1 or not 0 < self.predictor_fraction <= 1:
            raise ValueError("sampling fractions must lie in (0, 1]")
        if self.criterion not in ("variance", "distribution"):
            raise ValueError(f"unknown split criterion {self.criterion!r}")

    @classmethod
    def qrf(cls, **kw):
        return cls(**{"replace": True, "criterion": "variance", **kw})

    @classmethod
    def grf(cls, **kw):
        return cls(**{"replace": False, "criterion": "distribution", **kw})


@dataclass
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    members: np.ndarray  # training case indices, grouped by leaf
    importance: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.left == -1))

    def leaf_of(self, x) -> int:
        return int(K.find_leaf(np.asarray(x, dtype=float), self.feature, self.threshold, self.left, self.right))

    def leaf_members(self, node) -> np.ndarray:
        return self.members[self.lo[node]:self.hi[node]]

    def leaves(self):
        return [i for i in range(self.left.size) if self.left[i] == -1]


def grow_tree(X, y, sample, config: ForestConfig, rng: np.random.Generator, rank=None) -> RegressionTree:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    sample = np.asarray(sample, dtype=np.int64)
    p = X.shape[1]
    rank = _name_ranks([f"{i:06d}" for i in range(p)]) if rank is None else rank
    mtry = max(1, int(np.floor(p * config.predictor_fraction + 1e-9)))
    max_nodes = 2 * (sample.size // config.min_leaf) + 3
    keys = rng.random((max_nodes, p))
    crit = K.VARIANCE if config.criterion == "variance" else K.DISTRIBUTION
    out = K.grow_tree(X, y, sample, keys, mtry, config.min_leaf, crit, rank, PILOT_LEVELS, config.max_depth)
    return RegressionTree(*out)


def _draw_sample(n, config, rng):
    size = max(1, int(round(n * config.sample_fraction)))
    if config.replace:
        return np.sort(rng.integers(0, n, size=size))
    if size == n:
        return np.arange(n)
    return np.sort(rng.choice(n, size=size, replace=False))


@dataclass
class Forest:
    config: ForestConfig
    predictors: tuple
    trees: list
    y: np.ndarray
    seed: int = 0

    def _flat(self):
        offs = np.cumsum([0] + [t.left.size for t in self.trees])
        moffs = np.cumsum([0] + [t.members.size for t in self.trees])
        cat = lambda attr: np.concatenate([getattr(t, attr) for t in self.trees])
        return offs, moffs, cat

    def predict_matrix(self, Xsel, levels) -> np.ndarray:
        levels = as_levels(levels)
        offs, moffs, cat = self._flat()
        order = np.argsort(self.y, kind="stable")
        return K.forest_weights_quantiles(
            np.ascontiguousarray(Xsel, dtype=float), self.y, order, levels, offs,
            cat("feature"), cat("threshold"), cat("left"), cat("right"), cat("lo"), cat("hi"),
            moffs, cat("members"), len(self.trees),
        )

    def predict(self, X, names, levels) -> np.ndarray:
        if not self.trees:
            raise PredictionError("forest has no trees")
        return sanitize_array(self.predict_matrix(select_columns(X, names, self.predictors), levels))

    def importance(self) -> dict:
        total = np.mean([t.importance for t in self.trees], axis=0)
        return {p: float(v) for p, v in zip(self.predictors, total)}

    def to_dict(self):
        return {
            "config": self.config.__dict__,
            "predictors": list(self.predictors),
            "y": self.y.tolist(),
            "seed": self.seed,
            "trees": [
                {k: getattr(t, k).tolist() for k in ("feature", "threshold", "left", "right", "lo", "hi", "members", "importance")}
                for t in self.trees
            ],
        }

    @classmethod
    def from_dict(cls, d):
        trees = []
        for t in d["trees"]:
            ints = {k: np.asarray(t[k], dtype=np.int64) for k in ("feature", "left", "right", "lo", "hi", "members")}
            trees.append(RegressionTree(ints["feature"], np.asarray(t["threshold"], float), ints["left"], ints["right"],
                                        ints["lo"], ints["hi"], ints["members"], np.asarray(t["importance"], float)))
        return cls(ForestConfig(**d["config"]), tuple(d["predictors"]), trees, np.asarray(d["y"], float), d["seed"])


def fit_forest(X, names: Sequence[str], y, config: ForestConfig, seed=0) -> Forest:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    names = tuple(names)
    rank = _name_ranks(names)
    trees = []
    for t in range(config.n_trees):
        rng = _stream(seed, t)
        sample = _draw_sample(y.size, config, rng)
        trees.append(grow_tree(X, y, sample, config, rng, rank))
    return Forest(config, names, trees, y, int(seed))


def forest_quantiles(forest: Forest, X, names, levels) -> np.ndarray:
    return forest.predict(X, names, levels)


# --------------------------------------------------------------------------
# boosting


@dataclass(frozen=True)
class BoostConfig:
    n_trees: int = 100
    min_leaf: int = 5
    sample_fraction: float = 0.5
    learning_rate: float = 0.1
    depth: int = 1

    def __post_init__(self):
        if self.depth != 1:
            raise ValueError("only depth-1 trees are supported")
        if self.n_trees < 0 or self.min_leaf < 1 or self.learning_rate < 0:
            raise ValueError("invalid boosting hyper-parameters")
        if not 0 < self.sample_fraction <= 1:
            raise ValueError("sample_fraction must lie in (0, 1]")


@dataclass
class BoostedQuantileModel:
    config: BoostConfig
    predictors: tuple
    levels: np.ndarray
    init: np.ndarray  # (L,)
    stump_feature: np.ndarray  # (L, T), -1 for a skipped iteration
    stump_threshold: np.ndarray
    stump_left: np.ndarray
    stump_right: np.ndarray
    importances: np.ndarray  # (p,)
    seed: int = 0

    def predict_raw(self, X, names, n_iter=None) -> np.ndarray:
        Xs = select_columns(X, names, self.predictors)
        T = self.stump_feature.shape[1] if n_iter is None else n_iter
        out = np.tile(self.init, (Xs.shape[0], 1))
        for j in range(self.levels.size):
            for it in range(T):
                f = self.stump_feature[j, it]
                if f < 0:
                    continue
                go_left = Xs[:, f] <= self.stump_threshold[j, it]
                out[:, j] += np.where(go_left, self.stump_left[j, it], self.stump_right[j, it])
        return out

    def predict(self, X, names, levels=None) -> np.ndarray:
        return sanitize_array(self.predict_raw(X, names))

    def importance(self) -> dict:
        return {p: float(v) for p, v in zip(self.predictors, self.importances)}

    def to_dict(self):
        return {
            "config": self.config.__dict__,
            "predictors": list(self.predictors),
            "levels": self.levels.tolist(),
            "init": self.init.tolist(),
            "stump_feature": self.stump_feature.tolist(),
            "stump_threshold": self.stump_threshold.tolist(),
            "stump_left": self.stump_left.tolist(),
            "stump_right": self.stump_right.tolist(),
            "importances": self.importances.tolist(),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d):
        L = len(d["levels"])
        arr = lambda k, dt=float: np.asarray(d[k], dtype=dt).reshape(L, -1)
        return cls(BoostConfig(**d["config"]), tuple(d["predictors"]), np.asarray(d["levels"], float),
                   np.asarray(d["init"], float), arr("stump_feature", np.int64), arr("stump_threshold"),
                   arr("stump_left"), arr("stump_right"), np.asarray(d["importances"], float), d["seed"])


def fit_gbdt(X, names: Sequence[str], y, levels, config: BoostConfig | None = None, seed=0) -> BoostedQuantileModel:
    config = config or BoostConfig()
    levels = as_levels(levels)
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    n, p = X.shape
    if n < 10:
        raise ValueError("boosting needs at least 10 training cases")
    names = tuple(names)
    rank = _name_ranks(names)
    presorted = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)
    size = max(1, int(round(n * config.sample_fraction)))
    L, T = levels.size, config.n_trees
    feat = np.full((L, T), -1, dtype=np.int64)
    thr = np.zeros((L, T))
    left = np.zeros((L, T))
    right = np.zeros((L, T))
    importance = np.zeros(p)
    init = np.quantile(y, levels)
    for j, q in enumerate(levels):
        rng = _stream(seed, j)
        masks = np.zeros((T, n), dtype=np.bool_)
        for it in range(T):
            masks[it, rng.choice(n, size=size, replace=False)] = True
        out = K.boost_level(X, presorted, y, float(q), float(init[j]), masks, config.learning_rate, config.min_leaf, rank)
        feat[j], thr[j], left[j], right[j] = out[:4]
        importance += out[4]
    return BoostedQuantileModel(config, names, levels, init, feat, thr, left, right, importance / L, int(seed))


def predictor_importance_trees(importances: Sequence[dict]) -> list:
    """Rank predictors by mean improvement across fits (descending, ties by name)."""
    total: dict = {}
    for imp in importances:
        for name, v in imp.items():
            total[name] = total.get(name, 0.0) + v
    n = max(len(importances), 1)
    return sorted(((k, v / n) for k, v in total.items()), key=lambda kv: (-kv[1], kv[0]))


def predictor_importance_stepwise(selections: Sequence[set], names: Sequence[str] = ()) -> list:
    """Rank predictors by how many fits selected them (ties by name)."""
    count = {n: 0 for n in names}
    for sel in selections:
        for name in sel:
            count[name] = count.get(name, 0) + 1
    return sorted(count.items(), key=lambda kv: (-kv[1], kv[0]))
