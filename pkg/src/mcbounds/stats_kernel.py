"""Scalar special functions and the replayable randomness stream.

Everything here accepts numpy arrays and broadcasts. The truncated-normal
helpers work on log probabilities so that |mu| in the tens (or much larger)
does not overflow the phi ratios.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

EPS_U = 2.0**-53
ONE_MINUS = 1.0 - 2.0**-53
TINY = np.finfo(float).tiny

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)
_LOG_SQRT_PI_2 = 0.5 * math.log(math.pi / 2.0)
_SQRT2 = math.sqrt(2.0)

# Coefficients of Var(Z | Z <= -t) in powers of 1/t^2, for large t.
_XI_TAIL = (1.0, -6.0, 50.0, -518.0, 6354.0, -89782.0, 1435330.0)
_XI_TAIL_CUTOFF = -40.0


class DomainError(ValueError):
    """Argument outside the domain of a special function."""


# ---------------------------------------------------------------------------
# Normal distribution
# ---------------------------------------------------------------------------


def std_normal_cdf(x):
    """Standard normal CDF."""
    return special.ndtr(x)


def log_std_normal_cdf(x):
    """log Phi(x), accurate in both tails."""
    return special.log_ndtr(x)


def std_normal_pdf(x):
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _HALF_LOG_2PI)


def _check_open_unit(u, name="u"):
    u = np.asarray(u, dtype=float)
    if np.any(~(u > 0.0)) or np.any(~(u < 1.0)):
        raise DomainError(f"{name} must lie in the open interval (0, 1)")
    return u


def std_normal_quantile(u):
    """Inverse of the standard normal CDF on (0, 1)."""
    u = _check_open_unit(u)
    return special.ndtri(u)


def std_normal_quantile_log(logu):
    """Quantile taking log(u) instead of u, usable far into the lower tail."""
    logu = np.asarray(logu, dtype=float)
    if np.any(logu >= 0.0):
        raise DomainError("log probability must be negative")
    return special.ndtri_exp(logu)


def log_mills_phi(x):
    """log(Phi(x) / phi(x)).

    Uses the scaled complementary error function on the negative half line,
    where both Phi and phi underflow together.
    """
    x = np.asarray(x, dtype=float)
    neg = x <= 0.0
    out = np.empty_like(x)
    xn = np.where(neg, x, 0.0)
    out = np.where(
        neg,
        _LOG_SQRT_PI_2 + np.log(special.erfcx(-xn / _SQRT2)),
        special.log_ndtr(np.where(neg, 0.0, x)) + 0.5 * x * x + _HALF_LOG_2PI,
    )
    return out


def _shift(logu, m, iters=12):
    """Solve Phi(m + delta) = u * Phi(m) for delta <= 0.

    Newton on the concave map delta -> log Phi(m + delta); after the first
    step the iterates approach the root from the left, so a fixed iteration
    count with an early exit is safe.
    """
    logu, m = np.broadcast_arrays(np.asarray(logu, float), np.asarray(m, float))
    lpm = special.log_ndtr(m)
    lmm = log_mills_phi(m)
    neg = m < 0.0
    delta = special.ndtri_exp(np.minimum(lpm + logu, -TINY)) - m
    delta = np.minimum(delta, 0.0)
    for _ in range(iters):
        z = m + delta
        lmz = log_mills_phi(z)
        # For m < 0 subtract the Gaussian exponent analytically; this keeps
        # the residual free of the m^2/2 cancellation.
        f_neg = lmz - lmm - m * delta - 0.5 * delta * delta - logu
        f_pos = special.log_ndtr(z) - lpm - logu
        f = np.where(neg, f_neg, f_pos)
        step = f * np.exp(lmz)  # f / f', with f' = phi(z)/Phi(z)
        delta = np.minimum(delta - step, 0.0)
        if np.all(np.abs(step) <= 1e-14 * (1.0 + np.abs(delta))):
            break
    return delta


def tn_inv_cdf(u, mu, side):
    """Inverse CDF of N(mu, 1) truncated to (0, inf) if side=1 or (-inf, 0) if side=0.

    Returns H(u, mu, side) = mu - Phi^{-1}(Phi(mu)(1-u)) for side 1 and
    mu + Phi^{-1}(Phi(-mu) u) for side 0.
    """
    u = _check_open_unit(u)
    mu = np.asarray(mu, dtype=float)
    side = np.asarray(side)
    u, mu, side = np.broadcast_arrays(u, mu, side)
    one = side == 1
    logu = np.where(one, np.log1p(-u), np.log(u))
    m = np.where(one, mu, -mu)
    delta = _shift(logu, m)
    out = np.where(one, -delta, delta)
    # Respect the support even when the solution is below resolution.
    out = np.where(one, np.maximum(out, TINY), np.minimum(out, -TINY))
    return out[()] if out.ndim == 0 else out


def tn_cdf(x, mu, side):
    """CDF of the unit-variance truncated normal used by tn_inv_cdf."""
    x, mu, side = np.broadcast_arrays(
        np.asarray(x, float), np.asarray(mu, float), np.asarray(side)
    )
    one = side == 1
    # side 1: 1 - Phi(mu - x)/Phi(mu);  side 0: Phi(x + (-mu) ... ) / Phi(-mu)
    c1 = -np.expm1(special.log_ndtr(mu - x) - special.log_ndtr(mu))
    c0 = np.exp(special.log_ndtr(x - mu) - special.log_ndtr(-mu))
    out = np.where(one, c1, c0)
    return out[()] if out.ndim == 0 else out


def _s_logu(logu, mu):
    logu, mu = np.broadcast_arrays(np.asarray(logu, float), np.asarray(mu, float))
    delta = _shift(logu, mu)
    neg = mu < 0.0
    expo_pos = logu + delta * (mu + 0.5 * delta)
    expo_neg = log_mills_phi(mu + delta) - log_mills_phi(mu)
    expo = np.where(neg, expo_neg, expo_pos)
    out = -np.expm1(np.minimum(expo, 0.0))
    out = np.clip(out, TINY, ONE_MINUS)
    return out[()] if out.ndim == 0 else out


def s_fn(u, mu):
    """s(u, mu) = 1 - u phi(mu) / phi(Phi^{-1}(Phi(mu) u)).

    With z = mu + delta solving Phi(z) = u Phi(mu), the ratio equals
    exp(log u + mu delta + delta^2 / 2); for mu < 0 it is computed as the
    ratio of Mills-type quantities instead. Values are kept inside the open
    unit interval: outside roughly |mu| < 9 the exact value rounds to 0 or 1.
    """
    u = _check_open_unit(u)
    return _s_logu(np.log(u), mu)


def tn_inv_cdf_dmu(u, mu, side):
    """Derivative of tn_inv_cdf in mu: s(1-u, mu) for side 1, s(u, -mu) for side 0."""
    u = _check_open_unit(u)
    u, mu, side = np.broadcast_arrays(u, np.asarray(mu, float), np.asarray(side))
    one = side == 1
    logu = np.where(one, np.log1p(-u), np.log(u))
    return _s_logu(logu, np.where(one, mu, -mu))


def xi_fn(mu):
    """Integral of s(u, mu) over u in (0, 1).

    Closed form 1 - mu R - R^2 with R = phi(mu)/Phi(mu); this is also the
    variance of Z given Z <= mu. A short asymptotic series is used far in the
    left tail where the closed form cancels.
    """
    mu = np.asarray(mu, dtype=float)
    r = np.exp(-log_mills_phi(mu))
    direct = 1.0 - r * (mu + r)
    e = 1.0 / np.maximum(mu * mu, 1.0)
    tail = np.zeros_like(e)
    for c in reversed(_XI_TAIL):
        tail = tail * e + c
    tail = tail * e
    out = np.where(mu < _XI_TAIL_CUTOFF, tail, direct)
    out = np.clip(out, TINY, ONE_MINUS)
    return out[()] if out.ndim == 0 else out


def same_cov_gaussian_tv(delta):
    """L1 distance 2 - 4 Phi(-delta/2) between two unit-variance Gaussians
    whose means are delta apart. This is twice the total variation."""
    delta = np.asarray(delta, dtype=float)
    if np.any(delta < 0.0) or np.any(np.isnan(delta)):
        raise DomainError("delta must be nonnegative")
    out = 2.0 * special.erf(delta / (2.0 * _SQRT2))
    return out[()] if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Randomness
# ---------------------------------------------------------------------------


@dataclass
class RandomStream:
    """Counter-based stream keyed by (master_seed, replicate_index).

    The draw sequence depends only on the key; ``cursor`` counts scalar draws
    taken so far.
    """

    master_seed: int
    replicate_index: int = 0
    cursor: int = 0
    _gen: np.random.Generator = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.replicate_index < 0:
            raise ValueError("replicate_index must be >= 0")
        seq = np.random.SeedSequence([int(self.master_seed) & (2**64 - 1), int(self.replicate_index)])
        self._gen = np.random.Generator(np.random.Philox(seq))

    @classmethod
    def spawn(cls, master_seed: int, n: int) -> list["RandomStream"]:
        return [cls(master_seed, i) for i in range(n)]


def draw_uniforms(stream: RandomStream, n) -> np.ndarray:
    """Uniforms on the open interval, clamped to [2^-53, 1 - 2^-53]."""
    u = stream._gen.random(n)
    stream.cursor += int(np.prod(n))
    return np.clip(u, EPS_U, ONE_MINUS)


def draw_normals(stream: RandomStream, n) -> np.ndarray:
    z = stream._gen.standard_normal(n)
    stream.cursor += int(np.prod(n))
    return z


def draw_gamma(stream: RandomStream, shape: float, rate: float = 1.0, size=None):
    """Gamma(shape, rate) draws (density proportional to x^(shape-1) e^(-rate x))."""
    if not (shape > 0.0) or not (rate > 0.0):
        raise DomainError("gamma shape and rate must be positive")
    g = stream._gen.standard_gamma(shape, size)
    stream.cursor += 1 if size is None else int(np.prod(size))
    g = np.maximum(g, TINY) / rate
    return float(g) if size is None else g
