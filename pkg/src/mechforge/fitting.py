"""Maximum-likelihood fits of GEV, GPD, Gumbel and exponential models.

Log-likelihoods are written out here; scipy only supplies the Nelder-Mead
search. Samples are standardized before fitting and parameters mapped back,
so fits are location-scale equivariant up to the optimizer tolerance. Every
multistart includes the nested two- or one-parameter optimum as a start,
which guarantees GEV >= Gumbel and GPD >= exponential in log-likelihood.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

MIN_SAMPLES = 30
XI_BOUND = 0.9
RESTARTS = 5
_XI_ZERO = 1e-12
_OPTIONS = {"xatol": 1e-10, "fatol": 1e-10, "maxiter": 20000, "maxfev": 40000}


class FitError(ValueError):
    pass


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float


@dataclass(frozen=True)
class GpdParams:
    sigma: float
    xi: float


@dataclass(frozen=True)
class ExpParams:
    rate: float


@dataclass(frozen=True)
class GumbelParams:
    mu: float
    sigma: float


# -- log densities ---------------------------------------------------------------

def gev_logpdf(x, mu: float, sigma: float, xi: float) -> np.ndarray:
    """GEV log density; -inf outside the support 1 + xi (x - mu) / sigma > 0."""
    x = np.asarray(x, dtype=float)
    if sigma <= 0:
        return np.full(x.shape, -np.inf)
    z = (x - mu) / sigma
    if abs(xi) < _XI_ZERO:
        with np.errstate(over="ignore"):  # far left tail: exp(-z) -> inf, log density -> -inf
            return -math.log(sigma) - z - np.exp(-z)
    arg = xi * z
    out = np.full(x.shape, -np.inf)
    ok = arg > -1.0
    lt = np.log1p(arg[ok])
    with np.errstate(over="ignore"):
        out[ok] = -math.log(sigma) - (1.0 + 1.0 / xi) * lt - np.exp(-lt / xi)
    return out


def gpd_logpdf(x, sigma: float, xi: float) -> np.ndarray:
    """GPD log density with threshold 0."""
    x = np.asarray(x, dtype=float)
    if sigma <= 0:
        return np.full(x.shape, -np.inf)
    out = np.full(x.shape, -np.inf)
    if abs(xi) < _XI_ZERO:
        ok = x >= 0
        out[ok] = -math.log(sigma) - x[ok] / sigma
        return out
    arg = xi * x / sigma
    ok = (x >= 0) & (arg > -1.0)
    out[ok] = -math.log(sigma) - (1.0 + 1.0 / xi) * np.log1p(arg[ok])
    return out


def exp_logpdf(x, rate: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, math.log(rate) - rate * x, -np.inf)


def gev_loglik(x, p: GevParams) -> float:
    return float(np.sum(gev_logpdf(x, p.mu, p.sigma, p.xi)))


def gpd_loglik(x, p: GpdParams) -> float:
    return float(np.sum(gpd_logpdf(x, p.sigma, p.xi)))


def exp_loglik(x, p: ExpParams) -> float:
    return float(np.sum(exp_logpdf(x, p.rate)))


def gev_pdf(x, p: GevParams) -> np.ndarray:
    return np.exp(gev_logpdf(x, p.mu, p.sigma, p.xi))


def gpd_pdf(x, p: GpdParams) -> np.ndarray:
    return np.exp(gpd_logpdf(x, p.sigma, p.xi))


def exp_pdf(x, p: ExpParams) -> np.ndarray:
    return np.exp(exp_logpdf(x, p.rate))


# -- fitting ---------------------------------------------------------------------

def _check(samples, nonnegative: bool = False) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < MIN_SAMPLES:
        raise FitError(f"need at least {MIN_SAMPLES} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise FitError("samples must be finite")
    if nonnegative and (x < 0).any():
        raise FitError("samples must be nonnegative")
    if np.ptp(x) == 0:
        raise FitError("degenerate samples (all equal)")
    return x


def _multistart(objective, starts) -> np.ndarray:
    # the simplex keeps its best vertex, so each result is no worse than its start
    best_x, best_f = None, math.inf
    for s in starts:
        res = minimize(objective, np.asarray(s, dtype=float), method="Nelder-Mead", options=_OPTIONS)
        if best_x is None or float(res.fun) < best_f:
            best_x, best_f = res.x, float(res.fun)
    return best_x


def _gumbel_std(z: np.ndarray) -> tuple[float, float]:
    # method-of-moments start, then a 2-parameter search
    sd = float(z.std())
    s0 = sd * math.sqrt(6.0) / math.pi
    m0 = float(z.mean()) - 0.5772156649 * s0

    def nll(t):
        return -float(np.sum(gev_logpdf(z, t[0], math.exp(t[1]), 0.0)))

    t = _multistart(nll, [(m0, math.log(s0))])
    return float(t[0]), float(math.exp(t[1]))


def fit_gumbel(samples) -> tuple[GumbelParams, float]:
    x = _check(samples)
    m, s = float(x.mean()), float(x.std())
    mu, sigma = _gumbel_std((x - m) / s)
    p = GumbelParams(m + s * mu, s * sigma)
    return p, float(np.sum(gev_logpdf(x, p.mu, p.sigma, 0.0)))


def fit_gev(samples, seed: int = 0) -> tuple[GevParams, float]:
    """GEV by multistart Nelder-Mead with the shape kept inside [-0.9, 0.9]."""
    x = _check(samples)
    m, s = float(x.mean()), float(x.std())
    z = (x - m) / s
    mu0, sig0 = _gumbel_std(z)

    def nll(t):
        if abs(t[2]) > XI_BOUND:
            return math.inf
        v = -float(np.sum(gev_logpdf(z, t[0], math.exp(t[1]), t[2])))
        return v if math.isfinite(v) else math.inf

    rng = np.random.default_rng(seed)
    starts = [(mu0, math.log(sig0), 0.0)]
    for _ in range(RESTARTS - 1):
        xi = float(rng.uniform(-0.5, 0.5))
        # keep every sample inside the support at the start
        starts.append((mu0 + 0.1 * rng.normal(), math.log(sig0) + 0.1 * rng.normal(), xi))
    starts = [st for st in starts if math.isfinite(nll(st))] or starts[:1]
    t = _multistart(nll, starts)
    p = GevParams(m + s * float(t[0]), s * math.exp(float(t[1])), float(t[2]))
    return p, gev_loglik(x, p)


def fit_exponential(samples) -> tuple[ExpParams, float]:
    """Closed form: rate = 1 / mean."""
    x = _check(samples, nonnegative=True)
    p = ExpParams(1.0 / float(x.mean()))
    return p, exp_loglik(x, p)


def fit_gpd(samples, seed: int = 0) -> tuple[GpdParams, float]:
    """GPD with threshold 0 by multistart Nelder-Mead."""
    x = _check(samples, nonnegative=True)
    s = float(x.mean())
    z = x / s
    zmax = float(z.max())

    def nll(t):
        xi = t[1]
        if abs(xi) > XI_BOUND:
            return math.inf
        sigma = math.exp(t[0])
        if xi < 0 and zmax >= -sigma / xi:
            return math.inf
        v = -float(np.sum(gpd_logpdf(z, sigma, xi)))
        return v if math.isfinite(v) else math.inf

    var = float(z.var())
    xi_mom = float(np.clip(0.5 * (1.0 - 1.0 / var), -0.45, 0.45))
    sig_mom = 0.5 * (1.0 / var + 1.0)
    rng = np.random.default_rng(seed)
    starts = [(0.0, 0.0), (math.log(sig_mom), xi_mom)]
    for _ in range(RESTARTS - 2):
        starts.append((float(rng.normal(0.0, 0.3)), float(rng.uniform(0.0, 0.5))))
    starts = [st for st in starts if math.isfinite(nll(st))]
    t = _multistart(nll, starts)
    p = GpdParams(s * math.exp(float(t[0])), float(t[1]))
    return p, gpd_loglik(x, p)


def density_curve(samples, pdf, n_bins: int = 50):
    """Histogram density of ``samples`` and a fitted ``pdf`` at the bin centres.

    Returns (centres, empirical density, fitted density).
    """
    x = np.asarray(samples, dtype=float)
    hist, edges = np.histogram(x, bins=n_bins, density=True)
    centres = 0.5 * (edges[:-1] + edges[1:])
    return centres, hist, np.asarray(pdf(centres), dtype=float)
