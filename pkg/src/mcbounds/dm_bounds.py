"""Drift-and-minorization rate bounds and the Gaussian autoregression case.

The generic bound for drift constants (lambda, L), small-set level d and
minorization constant gamma is

    rho(a) = gamma^a  v  ((1 + 2L + lambda d)/(1 + d))^(1-a) (1 + 2(lambda d + L))^a

for any a in (0, 1). For the autoregression x' ~ N(x/2, 3/4 I_p) with
V(x) = |x|^2 / p the drift constants are lambda = 1/4 and L = 3/4.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from .stats_kernel import std_normal_cdf, std_normal_pdf, same_cov_gaussian_tv

AR_LAMBDA = 0.25
AR_L = 0.75
A_GRID_POINTS = 512


class InfeasibleError(ValueError):
    """Constants violate a precondition of the bound (e.g. d too small)."""


@dataclass(frozen=True)
class DmConditions:
    lambda_: float
    L: float
    d: float
    gamma: float
    a: float = 0.5

    def check(self):
        if not (0.0 <= self.lambda_ < 1.0):
            raise InfeasibleError(f"lambda={self.lambda_} must lie in [0, 1)")
        if self.L < 0:
            raise InfeasibleError("L must be nonnegative")
        if not (self.d > 2.0 * self.L / (1.0 - self.lambda_)):
            raise InfeasibleError(
                f"d={self.d} must exceed 2L/(1-lambda)={2 * self.L / (1 - self.lambda_)}"
            )
        if not (0.0 <= self.gamma < 1.0):
            raise InfeasibleError("gamma must lie in [0, 1)")
        if not (0.0 < self.a < 1.0):
            raise InfeasibleError("a must lie in (0, 1)")


def _terms(lambda_, L, d, gamma, a):
    q = (1.0 + 2.0 * L + lambda_ * d) / (1.0 + d)
    big = 1.0 + 2.0 * (lambda_ * d + L)
    a = np.asarray(a, dtype=float)
    first = np.power(gamma, a) if gamma > 0 else np.zeros_like(a)
    second = np.exp((1.0 - a) * math.log(q) + a * math.log(big))
    return first, second


def rosenthal_rate(c: DmConditions) -> float:
    """Rate of the drift-and-minorization TV bound; may be >= 1."""
    c.check()
    first, second = _terms(c.lambda_, c.L, c.d, c.gamma, c.a)
    return float(max(first, second))


@dataclass(frozen=True)
class RateChoice:
    rate: float
    a: float
    d: float | None = None

    @property
    def vacuous(self) -> bool:
        return not (self.rate < 1.0)


def a_grid(points: int = A_GRID_POINTS) -> np.ndarray:
    """Log-spaced grid on (0, 1), dense near both ends."""
    half = np.geomspace(1e-6, 0.5, points // 2)
    return np.unique(np.concatenate([half, 1.0 - half[::-1]]))


def optimize_a(lambda_: float, L: float, d: float, gamma: float,
               points: int = A_GRID_POINTS) -> RateChoice:
    """Minimise the rate over a: grid search then bounded refinement."""
    DmConditions(lambda_, L, d, gamma, 0.5).check()
    grid = a_grid(points)
    vals = np.maximum(*_terms(lambda_, L, d, gamma, grid))
    k = int(np.argmin(vals))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, grid.size - 1)]
    best_a, best = float(grid[k]), float(vals[k])
    if hi > lo:
        res = optimize.minimize_scalar(
            lambda a: float(np.maximum(*_terms(lambda_, L, d, gamma, a))),
            bounds=(lo, hi), method="bounded", options={"xatol": 1e-12},
        )
        if res.fun < best:
            best_a, best = float(res.x), float(res.fun)
    return RateChoice(rate=best, a=best_a, d=d)


def rosenthal_best_rate(lambda_: float, L: float, d_grid: Sequence[float],
                        gamma_of_d: Callable[[float], float],
                        points: int = A_GRID_POINTS) -> RateChoice:
    """Joint search over small-set level d and exponent a."""
    feasible = [float(d) for d in d_grid if d > 2.0 * L / (1.0 - lambda_)]
    if not feasible:
        raise InfeasibleError("no grid value of d exceeds 2L/(1-lambda)")
    best = None
    for d in feasible:
        g = float(gamma_of_d(d))
        if not g < 1.0:  # this level gives no minorization at all
            continue
        choice = optimize_a(lambda_, L, d, g, points)
        if best is None or choice.rate < best.rate:
            best = choice
    return best if best is not None else RateChoice(rate=1.0, a=float("nan"))


def chi2_median(p: int) -> float:
    if p < 1:
        raise ValueError("p must be >= 1")
    return float(stats.chi2.ppf(0.5, p))


def ar_gamma_lower(p: int, d: float | None = None) -> float:
    """Lower bound on the minorization constant of the autoregression.

    Two points of a small set {|x|^2 <= r2} can be 2 sqrt(r2) apart, and the
    kernel rows at such points overlap by at most 2 Phi(-sqrt(r2/3)) in
    total variation. Default r2 is the chi-square median m_p, the smallest
    radius a set of stationary mass 1/2 can have; with a drift level d the
    set is {V <= d}, i.e. r2 = p d.
    """
    r2 = chi2_median(p) if d is None else p * float(d)
    return float(1.0 - 2.0 * std_normal_cdf(-math.sqrt(r2 / 3.0)))


def ar_best_rate(p: int, d_grid: Sequence[float] | None = None) -> RateChoice:
    """Best single-step rate the drift-and-minorization route can give for the
    autoregression, using the lower bound on gamma (so a lower bound on what
    any valid choice of small set achieves)."""
    if d_grid is None:
        d_grid = np.geomspace(2.0 * AR_L / (1 - AR_LAMBDA) * (1 + 1e-9), 1e4, 400)
    return rosenthal_best_rate(AR_LAMBDA, AR_L, d_grid, lambda d: ar_gamma_lower(p, d))


def smallset_mass_check(p: int, d_level: float, lambda_: float | None = None,
                        L: float | None = None) -> float:
    """Stationary mass of {|x|^2 / p <= d_level} under N(0, I_p).

    When drift constants are supplied, d_level is first checked against
    2L/(1-lambda).
    """
    if lambda_ is not None and L is not None and not d_level > 2.0 * L / (1.0 - lambda_):
        raise InfeasibleError("d_level must exceed 2L/(1-lambda)")
    if np.isinf(d_level):
        return 1.0
    return float(stats.chi2.cdf(p * d_level, p))


@dataclass(frozen=True)
class MultistepBound:
    p: int
    gamma: float
    rho_p: float
    per_step_rate: float
    lambda_: float
    L: float
    d: float

    @property
    def vacuous(self) -> bool:
        return not (self.per_step_rate < 1.0)


def ar_multistep_bound(p: int) -> MultistepBound:
    """Bound for the p-step kernel of the p-dimensional autoregression.

    Drift lambda = 4^-p, L = 1, small set {V <= 4^(p/3)}, a = 1/2. The
    per-step rate is rho^(1/p).
    """
    if p < 1:
        raise ValueError("p must be >= 1")
    lam = 4.0 ** (-p)
    L = 1.0
    d = 4.0 ** (p / 3.0)
    if not d > 2.0 * L / (1.0 - lam):
        raise InfeasibleError(f"p={p} too small: need 4^(p/3) > 2/(1-4^-p)")
    e1 = 4.0 ** (-p / 3.0)
    log_t1 = -0.5 * p * math.log1p(e1)
    # p 4^(p/3) (1 + 4^(p/3)) / (2 (4^p - 1)), rewritten with negative powers
    log_t2 = -0.5 * p * (e1 * e1 + e1) / (-math.expm1(-p * math.log(4.0)))
    gamma = -math.expm1(log_t1 + log_t2)
    q = (1.0 + 2.0 * L + lam * d) / (1.0 + d)
    big = 1.0 + 2.0 * (lam * d + L)
    log_first = 0.5 * math.log(gamma)
    log_second = 0.5 * (math.log(q) + math.log(big))
    log_rho = max(log_first, log_second)
    return MultistepBound(p=p, gamma=gamma, rho_p=math.exp(log_rho),
                          per_step_rate=math.exp(log_rho / p), lambda_=lam, L=L, d=d)


def ar_tv_lipschitz(grid_points: int = 20001) -> float:
    """sup over delta > 0 of L1(N(x/2, 3/4), N(y/2, 3/4)) / |x - y|.

    The L1 distance only depends on delta = |x - y| and equals
    same_cov_gaussian_tv(delta / sqrt(3)); the ratio is decreasing so the
    sup is the limit at 0, 2 phi(0) / sqrt(3). The grid maximum is returned
    together with that limit (whichever is larger).
    """
    delta = np.geomspace(1e-8, 50.0, grid_points)
    ratio = same_cov_gaussian_tv(delta / math.sqrt(3.0)) / delta
    limit = 2.0 * float(std_normal_pdf(0.0)) / math.sqrt(3.0)
    return float(max(ratio.max(), limit))
