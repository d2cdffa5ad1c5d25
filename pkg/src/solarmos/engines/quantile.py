"""Linear quantile regression and the monotone composite quantile
regression neural network.

Both engines share one predictor subset across all quantile levels, chosen
by stepwise search on the level-averaged AIC
``AIC_q = 2k + 2n log(mean pinball loss at q)``.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, sparse, special

from ..domain import sanitize_array
from ._common import as_levels, select_columns
from .stepwise import stepwise_aic

logger = logging.getLogger(__name__)

NOISE_VARIANCE = 0.001


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


def inject_noise(matrix, seed) -> np.ndarray:
    """Add i.i.d. N(0, 0.001) noise to every cell."""
    X = np.asarray(matrix, dtype=float)
    rng = np.random.default_rng(seed)
    return X + rng.normal(0.0, np.sqrt(NOISE_VARIANCE), size=X.shape)


def mean_pinball(levels, y, F) -> np.ndarray:
    """Mean pinball loss per level for forecasts ``F`` of shape (n, L)."""
    r = y[:, None] - F
    q = levels[None, :]
    return np.where(r >= 0, q * r, (q - 1.0) * r).mean(axis=0)


def quantile_aic(levels, y, F, k) -> np.ndarray:
    loss = np.maximum(mean_pinball(levels, y, F), np.finfo(float).tiny)
    return 2.0 * k + 2.0 * y.size * np.log(loss)


# --------------------------------------------------------------------------
# interior point solver


def _max_step(v, dv):
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(dv < 0, -v / dv, np.inf)
    return ratio.min(axis=1)


def solve_quantile_lp(D, y, levels, tol=1e-8, max_iter=100):
    """Frisch-Newton primal-dual interior point method, batched over levels.

    Solves, for every level q, ``max y'a`` subject to ``D'a = (1-q) D'1``
    and ``0 <= a <= 1``; the quantile regression coefficients are minus the
    equality multipliers. Mehrotra's predictor-corrector step is used.

    Returns ``(coef, info)`` with ``coef`` of shape (L, k).
    """
    n, k = D.shape
    L = levels.size
    c = -y
    one_minus = (1.0 - levels)[:, None]
    b = one_minus * D.sum(axis=0)[None, :]
    x = np.broadcast_to(one_minus, (L, n)).copy()
    s = 1.0 - x
    lam0 = np.linalg.lstsq(D, c, rcond=None)[0]
    lam = np.broadcast_to(lam0, (L, k)).copy()
    r = c - D @ lam0
    r = r + 0.001 * (r == 0)
    z = np.broadcast_to(np.maximum(r, 0.0), (L, n)).copy()
    w = z - r
    beta = 0.99995

    def gap_of():
        return x @ c - (b * lam).sum(axis=1) + w.sum(axis=1)

    gap = gap_of()
    scale = 1.0 + np.abs(x @ c)
    it = 0
    # converged levels are frozen; only the remaining ones keep iterating
    with np.errstate(all="ignore"):
        while np.any(gap > tol * scale) and it < max_iter:
            it += 1
            a = np.flatnonzero(gap > tol * scale)
            xa, sa, za, wa = x[a], s[a], z[a], w[a]
            q = 1.0 / (za / xa + wa / sa)
            r = za - wa
            M = np.einsum("nk,ln,nj->lkj", D, q, D)
            rhs = (q * r) @ D
            dlam = np.linalg.solve(M, rhs[..., None])[..., 0]
            dx = q * (dlam @ D.T - r)
            ds = -dx
            dz = -za * (dx / xa + 1.0)
            dw = -wa * (ds / sa + 1.0)
            fp = np.minimum(beta * np.minimum(_max_step(xa, dx), _max_step(sa, ds)), 1.0)[:, None]
            fd = np.minimum(beta * np.minimum(_max_step(za, dz), _max_step(wa, dw)), 1.0)[:, None]

            # centring and second-order correction
            mu = (za * xa).sum(axis=1) + (wa * sa).sum(axis=1)
            g = ((za + fd * dz) * (xa + fp * dx)).sum(axis=1) + ((wa + fd * dw) * (sa + fp * ds)).sum(axis=1)
            mu = (mu * (g / mu) ** 3 / (2.0 * n))[:, None]
            dxdz = dx * dz
            dsdw = ds * dw
            t = mu * (1.0 / xa - 1.0 / sa) - r - dxdz / xa + dsdw / sa
            dlam = np.linalg.solve(M, -((q * t) @ D)[..., None])[..., 0]
            dx = q * (dlam @ D.T + t)
            ds = -dx
            dz = mu / xa - za - dxdz / xa - (za / xa) * dx
            dw = mu / sa - wa - dsdw / sa - (wa / sa) * ds
            fp = np.minimum(beta * np.minimum(_max_step(xa, dx), _max_step(sa, ds)), 1.0)[:, None]
            fd = np.minimum(beta * np.minimum(_max_step(za, dz), _max_step(wa, dw)), 1.0)[:, None]

            x[a] = xa + fp * dx
            s[a] = sa + fp * ds
            lam[a] = lam[a] + fd * dlam
            z[a] = za + fd * dz
            w[a] = wa + fd * dw
            gap = gap_of()
            if not np.all(np.isfinite(gap)):
                raise FitError("interior point iterates became non-finite", {"iterations": it})
    info = {"iterations": it, "gap": gap, "converged": bool(np.all(gap <= tol * scale))}
    if not info["converged"]:
        raise FitError(f"interior point did not converge in {it} iterations", {"iterations": it, "max_gap": float(gap.max())})
    return -lam, info


def _standardised(X):
    center = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    return center, scale


def _simplex_quantiles(D, y, levels):
    """Per-level primal LP via HiGHS, for the rare cases the interior point fails."""
    n, k = D.shape
    A = sparse.hstack((sparse.csr_matrix(D), sparse.identity(n), -sparse.identity(n)), format="csr")
    bounds = [(None, None)] * k + [(0, None)] * (2 * n)
    out = np.empty((levels.size, k))
    for j, q in enumerate(levels):
        cost = np.concatenate((np.zeros(k), np.full(n, q), np.full(n, 1.0 - q)))
        res = optimize.linprog(cost, A_eq=A, b_eq=y, bounds=bounds, method="highs")
        if res.status != 0:
            raise FitError(f"simplex fallback failed at level {q}: {res.message}")
        out[j] = res.x[:k]
    return out


def fit_linear_quantiles(X, y, levels, tol=1e-8):
    """Per-level coefficients ``(L, 1 + p)`` (intercept first) in raw units."""
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    y = np.asarray(y, dtype=float)
    p = X.shape[1]
    if np.ptp(y) == 0 or y.size == 0:
        coef = np.zeros((levels.size, 1 + p))
        coef[:, 0] = y[0] if y.size else 0.0
        return coef
    if y.size <= p + 1:
        raise FitError(f"need more cases ({y.size}) than coefficients ({p + 1})")
    center, scale = _standardised(X)
    ys = float(np.abs(y).max()) or 1.0
    D = np.column_stack((np.ones(y.size), (X - center) / scale))
    try:
        b, _ = solve_quantile_lp(D, y / ys, levels, tol=tol)
    except (FitError, np.linalg.LinAlgError) as err:
        logger.debug("interior point failed (%s); using the simplex fallback", err)
        b = _simplex_quantiles(D, y / ys, levels)
    b = b * ys
    slopes = b[:, 1:] / scale
    intercept = b[:, 0] - slopes @ center
    return np.column_stack((intercept, slopes))


@dataclass
class LinearQuantileModel:
    levels: np.ndarray
    predictors: tuple
    coefficients: np.ndarray  # (L, 1 + p), intercept first
    aic: float = float("nan")
    history: list = field(default_factory=list)

    def predict_raw(self, X, names) -> np.ndarray:
        cols = select_columns(X, names, self.predictors)
        return self.coefficients[:, 0][None, :] + cols @ self.coefficients[:, 1:].T

    def predict(self, X, names) -> np.ndarray:
        return sanitize_array(self.predict_raw(X, names))

    def selection(self) -> set:
        return set(self.predictors)

    def to_dict(self):
        return {"levels": self.levels.tolist(), "predictors": list(self.predictors),
                "coefficients": self.coefficients.tolist(), "aic": self.aic, "history": self.history}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["levels"], dtype=float), tuple(d["predictors"]),
                   np.asarray(d["coefficients"], dtype=float).reshape(len(d["levels"]), -1),
                   d.get("aic", float("nan")), d.get("history", []))


def fit_qr(X, names: Sequence[str], y, levels, steps: int = 5, noise_seed=None) -> LinearQuantileModel:
    """Stepwise linear quantile regression with a shared predictor subset.

    With ``noise_seed`` set, the predictor cells (never the intercept) get
    N(0, 0.001) noise before fitting; predictions use the raw values.
    """
    levels = as_levels(levels)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names)
    if noise_seed is not None:
        X = inject_noise(X, noise_seed)
    usable = [n for n, sd in zip(names, X.std(axis=0)) if sd > 0]
    cache = {}

    def fit(preds):
        key = tuple(sorted(preds))
        if key not in cache:
            cols = X[:, [names.index(p) for p in key]]
            try:
                coef = fit_linear_quantiles(cols, y, levels)
                F = coef[:, 0][None, :] + cols @ coef[:, 1:].T
                score = float(quantile_aic(levels, y, F, 1 + len(preds)).mean())
            except (FitError, np.linalg.LinAlgError) as err:
                logger.debug("QR candidate %s failed: %s", list(preds), err)
                coef, score = None, float("inf")
            cache[key] = (score, coef)
        return cache[key]

    if np.ptp(y) == 0:
        search_sel, search_aic, history = (), fit(())[0], []
    else:
        search = stepwise_aic(usable, (), lambda s: fit(s)[0], steps)
        search_sel, search_aic = search.selected, search.aic
        history = [(h.move, h.predictor, h.aic) for h in search.history]
    score, coef = fit(search_sel)
    if coef is None:
        raise FitError("quantile regression failed for the selected predictors")
    order = tuple(sorted(search_sel))
    return LinearQuantileModel(levels, order, coef, score, history)


def predict_qr(model: LinearQuantileModel, X, names) -> np.ndarray:
    return model.predict(X, names)


# --------------------------------------------------------------------------
# monotone composite quantile regression network

HUBER_EPS = 2.0**-8


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _tilted_huber(levels, r, eps=HUBER_EPS):
    a = np.abs(r)
    h = np.where(a <= eps, r * r / (2.0 * eps), a - eps / 2.0)
    dh = np.where(a <= eps, r / eps, np.sign(r))
    w = np.where(r >= 0, levels, 1.0 - levels)
    return w * h, w * dh


def _level_input(levels):
    # probit scale: a monotone map that stretches the tails
    return special.ndtri(np.asarray(levels, dtype=float))


@dataclass(frozen=True)
class MCQRNNConfig:
    iterations: int = 10
    steps_per_iteration: int = 100
    hidden_cap: int = 16
    hidden_layers: int = 1
    deep_hidden_layers: int = 0
    penalty: float = 0.0
    steps: int = 5
    screen_levels: int = 9
    screen_iterations: int = 1
    screen_steps_per_iteration: int = 50

    def __post_init__(self):
        if self.hidden_layers != 1 or self.deep_hidden_layers != 0:
            raise ValueError("only a single hidden layer is supported")
        if self.penalty != 0:
            raise ValueError("weight penalties are not supported")
        for name in ("iterations", "steps_per_iteration", "hidden_cap", "screen_levels", "screen_iterations", "screen_steps_per_iteration"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.steps < 0:
            raise ValueError("steps must be non-negative")


@dataclass
class MonotoneQuantileNet:
    """One hidden sigmoid layer; the quantile level enters with nonnegative
    weights and every hidden unit feeds the output through a nonnegative
    weight, so the output is non-decreasing in the level."""

    predictors: tuple
    center: np.ndarray
    scale: np.ndarray
    input_weights: np.ndarray  # (p, H)
    level_weights: np.ndarray  # (H,) >= 0
    hidden_bias: np.ndarray  # (H,)
    output_weights: np.ndarray  # (H,) >= 0
    output_bias: float
    loss_history: list = field(default_factory=list)
    aic: float = float("nan")
    history: list = field(default_factory=list)

    def __post_init__(self):
        if np.any(self.level_weights < 0) or np.any(self.output_weights < 0):
            raise ValueError("monotone path weights must be nonnegative")

    @property
    def n_parameters(self) -> int:
        p, h = self.input_weights.shape
        return p * h + 3 * h + 1

    def _evaluate(self, Z, levels):
        pre = (Z @ self.input_weights)[:, None, :] + _level_input(levels)[None, :, None] * self.level_weights + self.hidden_bias
        return _sigmoid(pre) @ self.output_weights + self.output_bias

    def predict_raw(self, X, names, levels) -> np.ndarray:
        cols = select_columns(X, names, self.predictors)
        return self._evaluate((cols - self.center) / self.scale, as_levels(levels))

    def predict(self, X, names, levels) -> np.ndarray:
        return np.maximum(self.predict_raw(X, names, levels), 0.0)

    def selection(self) -> set:
        return set(self.predictors)

    def to_dict(self):
        return {
            "predictors": list(self.predictors),
            "center": self.center.tolist(),
            "scale": self.scale.tolist(),
            "input_weights": self.input_weights.tolist(),
            "level_weights": self.level_weights.tolist(),
            "hidden_bias": self.hidden_bias.tolist(),
            "output_weights": self.output_weights.tolist(),
            "output_bias": self.output_bias,
            "loss_history": self.loss_history,
            "aic": self.aic,
            "history": self.history,
        }

    @classmethod
    def from_dict(cls, d):
        h = len(d["hidden_bias"])
        return cls(tuple(d["predictors"]), np.asarray(d["center"], float), np.asarray(d["scale"], float),
                   np.asarray(d["input_weights"], float).reshape(len(d["predictors"]), h),
                   np.asarray(d["level_weights"], float), np.asarray(d["hidden_bias"], float),
                   np.asarray(d["output_weights"], float), float(d["output_bias"]),
                   d.get("loss_history", []), d.get("aic", float("nan")), d.get("history", []))


def _pack(theta):
    return np.concatenate([t.ravel() for t in theta])


def _unpack(vec, p, hidden):
    sizes = (p * hidden, hidden, hidden, hidden, 1)
    parts = np.split(vec, np.cumsum(sizes)[:-1])
    return [parts[0].reshape(p, hidden)] + parts[1:]


def _train_net(Z, y, levels, hidden, iterations, steps_per_iteration, rng):
    """Full-batch quasi-Newton (L-BFGS) on the composite loss.

    Monotone weights are optimised on the log scale. Each iteration is one
    warm-started L-BFGS run of at most ``steps_per_iteration`` steps; its
    line search only accepts decreasing steps, so the recorded per-iteration
    losses never increase. Returns the parameter list and that record.
    """
    n, p = Z.shape
    u = _level_input(levels)
    spread = float(np.std(y)) or 0.1
    W = rng.normal(0.0, 1.0 / np.sqrt(max(p, 1)), size=(p, hidden))
    v_log = np.log(rng.uniform(0.5, 1.5, size=hidden))
    bias = rng.normal(0.0, 0.5, size=hidden)
    a_log = np.log(np.full(hidden, 2.0 * spread / hidden) * rng.uniform(0.8, 1.2, size=hidden))
    c0 = float(np.median(y)) - 0.5 * float(np.exp(a_log).sum())
    denom = float(n * levels.size)

    def loss_grad(vec):
        W, v_log, bias, a_log, c = _unpack(vec, p, hidden)
        v = np.exp(v_log)
        a = np.exp(a_log)
        h = _sigmoid((Z @ W)[:, None, :] + u[None, :, None] * v + bias)
        out = h @ a + c[0]
        lval, dl = _tilted_huber(levels[None, :], y[:, None] - out)
        loss = float(lval.sum() / denom)
        g = -dl / denom
        dpre = (g[..., None] * a) * h * (1.0 - h)
        dpre_case = dpre.sum(axis=1)
        grads = [
            Z.T @ dpre_case,
            (u @ dpre.sum(axis=0)) * v,
            dpre_case.sum(axis=0),
            (g.reshape(-1) @ h.reshape(-1, hidden)) * a,
            np.array([g.sum()]),
        ]
        return loss, _pack(grads)

    vec = _pack([W, v_log, bias, a_log, np.array([c0])])
    loss, _ = loss_grad(vec)
    if not np.isfinite(loss):
        raise FitError("non-finite training loss at initialisation")
    history = []
    for _ in range(iterations):
        res = optimize.minimize(loss_grad, vec, jac=True, method="L-BFGS-B",
                                options={"maxiter": steps_per_iteration, "ftol": 0.0, "gtol": 1e-12})
        if not np.isfinite(res.fun):
            raise FitError("non-finite training loss")
        if res.fun <= loss:
            vec, loss = res.x, float(res.fun)
        history.append(loss)
    return _unpack(vec, p, hidden), history


def _build_net(preds, center, scale, theta, history):
    W, v_log, bias, a_log, c = theta
    return MonotoneQuantileNet(tuple(preds), center, scale, W, np.exp(v_log), bias, np.exp(a_log), float(c[0]), history)


def fit_mcqrnn(X, names: Sequence[str], y, levels, config: MCQRNNConfig | None = None, seed=0) -> MonotoneQuantileNet:
    """Stepwise-selected monotone composite quantile network.

    Predictor screening uses a reduced budget (a thinned level grid and
    ``screen_*`` training lengths); the selected set is then trained with the
    full budget on all levels.
    """
    config = config or MCQRNNConfig()
    levels = as_levels(levels)
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    names = list(names)
    ss = np.random.SeedSequence(seed) if not isinstance(seed, np.random.SeedSequence) else seed
    screen_seed, final_seed = ss.spawn(2)
    idx = np.unique(np.linspace(0, levels.size - 1, min(config.screen_levels, levels.size)).round().astype(int))
    screen_levels = levels[idx]
    center, scale = _standardised(X)
    Zall = (X - center) / scale
    usable = [n for n, sd in zip(names, X.std(axis=0)) if sd > 0]
    cache = {}

    def width(k):
        return max(1, min(k, config.hidden_cap))

    def score(preds):
        key = tuple(sorted(preds))
        if key not in cache:
            cols = [names.index(p) for p in key]
            rng = np.random.default_rng(screen_seed)
            try:
                theta, _ = _train_net(Zall[:, cols], y, screen_levels, width(len(cols)),
                                      config.screen_iterations, config.screen_steps_per_iteration, rng)
                net = _build_net(key, center[cols], scale[cols], theta, [])
                F = net._evaluate(Zall[:, cols], screen_levels)
                cache[key] = float(quantile_aic(screen_levels, y, F, net.n_parameters).mean())
            except FitError as err:
                logger.debug("MCQRNN candidate %s failed: %s", list(key), err)
                cache[key] = float("inf")
        return cache[key]

    search = stepwise_aic(usable, (), score, config.steps)
    chosen = tuple(sorted(search.selected))
    cols = [names.index(p) for p in chosen]
    theta, history = _train_net(Zall[:, cols], y, levels, width(len(cols)), config.iterations,
                                config.steps_per_iteration, np.random.default_rng(final_seed))
    net = _build_net(chosen, center[cols], scale[cols], theta, history)
    net.aic = float(quantile_aic(levels, y, net._evaluate(Zall[:, cols], levels), net.n_parameters).mean())
    net.history = [(h.move, h.predictor, h.aic) for h in search.history]
    return net


def predict_mcqrnn(model: MonotoneQuantileNet, X, names, levels) -> np.ndarray:
    return model.predict(X, names, levels)
