"""Predictor-importance rankings aggregated over many fits."""
from __future__ import annotations

from typing import Mapping, Sequence

import pandas as pd

from ..engines import STEPWISE_ENGINES, TREE_ENGINES
from ..engines.trees import predictor_importance_stepwise, predictor_importance_trees

COLUMNS = ["family", "engine", "rank", "predictor", "score"]


def _rows(family, engine, ranking):
    return [(family, engine, i + 1, name, float(score)) for i, (name, score) in enumerate(ranking)]


def aggregate_importance(models: Mapping, names: Sequence[str]) -> pd.DataFrame:
    """Stepwise selection counts and tree improvement scores.

    ``models`` maps ``(engine, season, lead, fold)`` to fitted models. The
    stepwise family counts how many fits chose each predictor; the tree
    family averages each fit's normalised improvement shares. Rows for a
    single engine sit next to the family-wide ranking (engine ``"all"``).
    """
    rows = []
    step = {e: [] for e in STEPWISE_ENGINES}
    tree = {e: [] for e in TREE_ENGINES}
    for key in sorted(models, key=str):
        m = models[key]
        if m.engine in step:
            step[m.engine].append(set(m.selected))
        elif m.engine in tree:
            tree[m.engine].append(dict(m.importance))
    all_sel = [s for e in STEPWISE_ENGINES for s in step[e]]
    all_imp = [i for e in TREE_ENGINES for i in tree[e]]
    if all_sel:
        rows += _rows("stepwise", "all", predictor_importance_stepwise(all_sel, names))
    for e in STEPWISE_ENGINES:
        if step[e]:
            rows += _rows("stepwise", e, predictor_importance_stepwise(step[e], names))
    if all_imp:
        rows += _rows("trees", "all", predictor_importance_trees(all_imp))
    for e in TREE_ENGINES:
        if tree[e]:
            rows += _rows("trees", e, predictor_importance_trees(tree[e]))
    return pd.DataFrame(rows, columns=COLUMNS)
