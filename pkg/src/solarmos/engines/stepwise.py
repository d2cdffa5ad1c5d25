"""Forward/backward stepwise predictor selection on an information criterion."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence


@dataclass(frozen=True)
class StepRecord:
    move: str  # "start", "add" or "drop"
    predictor: str | None
    aic: float
    selected: tuple


@dataclass
class StepwiseResult:
    selected: tuple
    aic: float
    history: list = field(default_factory=list)


def stepwise_aic(
    candidates: Iterable[str],
    current: Sequence[str],
    scorer: Callable[[tuple], float],
    steps: int,
) -> StepwiseResult:
    """Greedy stepwise search.

    At each of at most ``steps`` moves every single addition from
    ``candidates`` and every single removal from the current set is scored;
    the best one is accepted only if it strictly lowers the criterion.
    Candidates are visited in name order and the first of equal scores wins,
    so the search is deterministic. ``scorer`` maps a predictor tuple to its
    AIC (``inf`` for a fit that failed).
    """
    pool = sorted(set(candidates))
    chosen = tuple(current)
    best = scorer(chosen)
    history = [StepRecord("start", None, best, chosen)]
    for _ in range(max(0, int(steps))):
        moves = []
        for name in pool:
            if name in chosen:
                trial = tuple(c for c in chosen if c != name)
                moves.append(("drop", name, trial))
            else:
                moves.append(("add", name, chosen + (name,)))
        top = None
        for move, name, trial in moves:
            score = scorer(trial)
            if math.isnan(score):
                continue
            if top is None or score < top[0]:
                top = (score, move, name, trial)
        if top is None or not top[0] < best:
            break
        best, move, name, chosen = top
        history.append(StepRecord(move, name, best, chosen))
    return StepwiseResult(chosen, best, history)

