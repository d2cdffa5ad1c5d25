"""Distributional regression with a gamma (GA) or zero-truncated normal (NOTR)
predictive distribution.

Location and scale each get a linear predictor on their link scale,
``eta = b0 + b1*X1 + ... + bp*Xp``. The location model is selected first by
stepwise AIC with a constant scale, then the scale model is selected with the
location model held fixed.

Parameterisation (GAMLSS convention):

* GA: mean ``mu`` (log link) and coefficient of variation ``sigma`` (log
  link); shape ``1/sigma**2``, scale ``mu*sigma**2``.
* NOTR: normal ``mu`` (identity link) and ``sigma`` (log link) before
  left-truncation at zero.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import optimize, special, stats

from .stepwise import stepwise_aic

logger = logging.getLogger(__name__)

GA_ZERO_SHIFT = 1e-6
_LOG_2PI = np.log(2.0 * np.pi)


class DomainError(ValueError):
    pass


class FitError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PredictionError(ValueError):
    pass


class Gamma:
    kind = "GA"
    mu_link = "log"

    @staticmethod
    def mu_inverse(eta):
        return np.exp(eta)

    @staticmethod
    def prepare(y):
        return np.maximum(y, GA_ZERO_SHIFT)

    @staticmethod
    def init(y):
        m = y.mean()
        cv = y.std() / m if m > 0 else 1.0
        return np.log(m), np.log(max(cv, 1e-3))

    @staticmethod
    def loglik_terms(eta_mu, eta_sigma, y):
        """Per-case log density and its derivatives on the link scales."""
        mu = np.exp(eta_mu)
        alpha = np.exp(-2.0 * eta_sigma)
        r = y / mu
        base = np.log(r) - r + np.log(alpha)
        ll = alpha * base - special.gammaln(alpha) - np.log(y)
        d_mu = alpha * (r - 1.0)
        d_sigma = -2.0 * alpha * (base + 1.0 - special.digamma(alpha))
        return ll, d_mu, d_sigma

    @staticmethod
    def pdf(x, mu, sigma):
        a = 1.0 / sigma**2
        return stats.gamma.pdf(x, a, scale=mu / a)

    @staticmethod
    def ppf(levels, mu, sigma):
        a = 1.0 / sigma**2
        return stats.gamma.ppf(levels[None, :], a[:, None], scale=(mu / a)[:, None])


class TruncatedNormal:
    kind = "NOTR"
    mu_link = "identity"

    @staticmethod
    def mu_inverse(eta):
        return eta

    @staticmethod
    def prepare(y):
        return y

    @staticmethod
    def init(y):
        return y.mean(), np.log(max(y.std(), 1e-3))

    @staticmethod
    def loglik_terms(eta_mu, eta_sigma, y):
        mu = eta_mu
        sigma = np.exp(eta_sigma)
        z = (y - mu) / sigma
        t = mu / sigma
        log_cdf = special.log_ndtr(t)
        mills = np.exp(-0.5 * t * t - 0.5 * _LOG_2PI - log_cdf)
        ll = -0.5 * _LOG_2PI - eta_sigma - 0.5 * z * z - log_cdf
        d_mu = (z - mills) / sigma
        d_sigma = -1.0 + z * z + mills * t
        return ll, d_mu, d_sigma

    @staticmethod
    def pdf(x, mu, sigma):
        x = np.asarray(x, dtype=float)
        dens = stats.norm.pdf(x, mu, sigma) / stats.norm.cdf(mu / sigma)
        return np.where(x >= 0, dens, 0.0)

    @staticmethod
    def ppf(levels, mu, sigma):
        a = (-mu / sigma)[:, None]
        return stats.truncnorm.ppf(levels[None, :], a, np.inf, loc=mu[:, None], scale=sigma[:, None])


FAMILIES = {"GA": Gamma, "NOTR": TruncatedNormal}


def family(kind: str):
    try:
        return FAMILIES[kind]
    except KeyError:
        raise ValueError(f"unknown family {kind!r}; expected one of {sorted(FAMILIES)}") from None


def _check_support(y):
    y = np.asarray(y, dtype=float)
    if np.any(y < 0) or not np.all(np.isfinite(y)):
        raise DomainError("observations must be finite and non-negative")
    return y


def negloglik(fam, mu, sigma, y) -> float:
    """Summed negative log density of ``y`` under per-case parameters."""
    fam = family(fam) if isinstance(fam, str) else fam
    y = fam.prepare(_check_support(y))
    mu = np.broadcast_to(np.asarray(mu, dtype=float), y.shape)
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), y.shape)
    if np.any(sigma <= 0) or (fam is Gamma and np.any(mu <= 0)):
        raise DomainError("parameters outside the valid domain")
    eta_mu = np.log(mu) if fam is Gamma else mu
    ll, _, _ = fam.loglik_terms(eta_mu, np.log(sigma), y)
    return float(-ll.sum())


# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ParamModel:
    """Linear predictor for one distribution parameter, in raw predictor units."""

    parameter: str
    intercept: float
    predictors: tuple = ()
    coefficients: tuple = ()

    def eta(self, X: np.ndarray, names: Sequence[str]) -> np.ndarray:
        out = np.full(X.shape[0], self.intercept)
        if self.predictors:
            cols = [list(names).index(p) for p in self.predictors]
            out = out + X[:, cols] @ np.asarray(self.coefficients)
        return out


class _Design:
    """Standardised copy of the predictor matrix used during optimisation."""

    def __init__(self, X, names):
        self.names = list(names)
        self.center = X.mean(axis=0)
        scale = X.std(axis=0)
        self.usable = scale > 1e-12 * np.maximum(1.0, np.abs(self.center))
        self.scale = np.where(self.usable, scale, 1.0)
        self.Z = (X - self.center) / self.scale

    def cols(self, preds):
        return [self.names.index(p) for p in preds]

    def matrix(self, preds):
        return np.column_stack([np.ones(self.Z.shape[0])] + [self.Z[:, j] for j in self.cols(preds)])

    def to_raw(self, parameter, beta, preds) -> ParamModel:
        idx = self.cols(preds)
        slopes = beta[1:] / self.scale[idx]
        intercept = beta[0] - float(np.dot(slopes, self.center[idx]))
        return ParamModel(parameter, float(intercept), tuple(preds), tuple(float(b) for b in slopes))


_OPT = {"maxiter": 200, "ftol": 1e-8, "gtol": 1e-8}


def _minimise(fun, x0, what):
    res = optimize.minimize(fun, x0, jac=True, method="L-BFGS-B", options=_OPT)
    if not np.isfinite(res.fun):
        raise FitError(f"{what}: non-finite likelihood", {"nit": res.nit, "message": res.message})
    if res.nit >= _OPT["maxiter"] and not res.success:
        raise FitError(f"{what}: no convergence in {res.nit} iterations", {"nit": res.nit, "message": str(res.message), "nll": float(res.fun)})
    return res


@dataclass
class ParametricModel:
    kind: str
    mu: ParamModel
    sigma: ParamModel
    nll: float
    aic: float
    nll_init: float = float("nan")
    history: dict = field(default_factory=dict)

    @property
    def family(self):
        return family(self.kind)

    @property
    def n_coefficients(self) -> int:
        return 2 + len(self.mu.predictors) + len(self.sigma.predictors)

    def parameters(self, X, names):
        fam = self.family
        mu = fam.mu_inverse(self.mu.eta(X, names))
        sigma = np.exp(self.sigma.eta(X, names))
        return mu, sigma

    def predict(self, X, names, levels) -> np.ndarray:
        with np.errstate(over="ignore"):  # overflow is caught as out of domain below
            mu, sigma = self.parameters(np.asarray(X, dtype=float), names)
        bad = ~np.isfinite(mu) | ~np.isfinite(sigma) | (sigma <= 0)
        if self.kind == "GA":
            bad |= mu <= 0
        if np.any(bad):
            raise PredictionError(f"{int(bad.sum())} cases have distribution parameters outside the valid domain")
        return self.family.ppf(np.asarray(levels, dtype=float), mu, sigma)

    def selection(self) -> set:
        return set(self.mu.predictors) | set(self.sigma.predictors)

    def to_dict(self) -> dict:
        def pm(p):
            return {"intercept": p.intercept, "predictors": list(p.predictors), "coefficients": list(p.coefficients)}

        return {"kind": self.kind, "mu": pm(self.mu), "sigma": pm(self.sigma), "nll": self.nll, "aic": self.aic,
                "nll_init": self.nll_init, "history": self.history}

    @classmethod
    def from_dict(cls, d) -> "ParametricModel":
        def pm(name, p):
            return ParamModel(name, p["intercept"], tuple(p["predictors"]), tuple(p["coefficients"]))

        return cls(d["kind"], pm("mu", d["mu"]), pm("sigma", d["sigma"]), d["nll"], d["aic"], d.get("nll_init", float("nan")), d.get("history", {}))


def fit_sequential(
    kind: str,
    X: np.ndarray,
    names: Sequence[str],
    y: np.ndarray,
    steps_mu: int = 5,
    steps_sigma: int = 1,
) -> ParametricModel:
    """Fit location then scale, each with stepwise AIC selection."""
    fam = family(kind)
    X = np.asarray(X, dtype=float)
    y = fam.prepare(_check_support(y))
    if X.shape[0] == 0:
        raise FitError("empty training matrix")
    design = _Design(X, names)
    candidates = [n for n, ok in zip(design.names, design.usable) if ok]
    n = y.size

    mu0, s0 = fam.init(y)
    ll_init, _, _ = fam.loglik_terms(np.full(n, mu0), np.full(n, s0), y)
    nll_init = float(-ll_init.sum())

    # location stage: scale held to a single constant, fitted jointly
    mu_cache: dict = {}

    def fit_mu(preds):
        key = frozenset(preds)
        if key in mu_cache:
            return mu_cache[key]
        Xm = design.matrix(preds)
        k = Xm.shape[1]
        parent = max((c for c in mu_cache if c < key), key=len, default=None)
        x0 = np.zeros(k + 1)
        x0[0], x0[-1] = mu0, s0
        if parent is not None:
            pb, ps = mu_cache[parent][1], mu_cache[parent][2]
            ppreds = mu_cache[parent][3]
            x0[0] = pb[0]
            for j, p in enumerate(preds):
                if p in ppreds:
                    x0[1 + j] = pb[1 + ppreds.index(p)]
            x0[-1] = ps

        def fun(theta):
            eta_mu = Xm @ theta[:k]
            ll, dm, ds = fam.loglik_terms(eta_mu, np.full(n, theta[k]), y)
            return -ll.sum(), -np.concatenate((Xm.T @ dm, [ds.sum()]))

        try:
            res = _minimise(fun, x0, f"{kind} location {list(preds)}")
        except FitError as err:
            logger.debug("%s", err)
            mu_cache[key] = (np.inf, None, None, tuple(preds))
            return mu_cache[key]
        mu_cache[key] = (float(res.fun), res.x[:k], float(res.x[k]), tuple(preds))
        return mu_cache[key]

    def aic_mu(preds):
        nll = fit_mu(preds)[0]
        return 2.0 * (len(preds) + 2) + 2.0 * nll

    mu_search = stepwise_aic(candidates, (), aic_mu, steps_mu)
    nll_mu, beta_mu, sigma_c, mu_preds = fit_mu(mu_search.selected)
    if beta_mu is None:
        raise FitError(f"{kind}: location model failed to converge")
    eta_mu = design.matrix(mu_preds) @ beta_mu

    sig_cache: dict = {}

    def fit_sigma(preds):
        key = frozenset(preds)
        if key in sig_cache:
            return sig_cache[key]
        Xs = design.matrix(preds)
        x0 = np.zeros(Xs.shape[1])
        x0[0] = sigma_c
        parent = max((c for c in sig_cache if c < key and sig_cache[c][1] is not None), key=len, default=None)
        if parent is not None:
            pb, ppreds = sig_cache[parent][1], sig_cache[parent][2]
            x0[0] = pb[0]
            for j, p in enumerate(preds):
                if p in ppreds:
                    x0[1 + j] = pb[1 + ppreds.index(p)]

        def fun(theta):
            ll, _, ds = fam.loglik_terms(eta_mu, Xs @ theta, y)
            return -ll.sum(), -(Xs.T @ ds)

        try:
            res = _minimise(fun, x0, f"{kind} scale {list(preds)}")
        except FitError as err:
            logger.debug("%s", err)
            sig_cache[key] = (np.inf, None, tuple(preds))
            return sig_cache[key]
        sig_cache[key] = (float(res.fun), res.x, tuple(preds))
        return sig_cache[key]

    def aic_sigma(preds):
        return 2.0 * (len(mu_preds) + 1 + len(preds) + 1) + 2.0 * fit_sigma(preds)[0]

    sig_search = stepwise_aic(candidates, (), aic_sigma, steps_sigma)
    nll, beta_s, sig_preds = fit_sigma(sig_search.selected)
    if beta_s is None:
        raise FitError(f"{kind}: scale model failed to converge")

    history = {
        "mu": [(h.move, h.predictor, h.aic) for h in mu_search.history],
        "sigma": [(h.move, h.predictor, h.aic) for h in sig_search.history],
    }
    return ParametricModel(
        kind,
        design.to_raw("mu", beta_mu, mu_preds),
        design.to_raw("sigma", beta_s, sig_preds),
        nll,
        sig_search.aic,
        nll_init,
        history,
    )


def predict_quantiles_parametric(model: ParametricModel, X, names, levels) -> np.ndarray:
    return model.predict(X, names, levels)
