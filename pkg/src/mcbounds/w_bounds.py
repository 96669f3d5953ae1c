"""Wasserstein contraction bounds and their conversion to total variation.

Chain-agnostic: callers supply the constants (gamma, gamma0, lambda, L, d, c)
and, for the TV conversion, the Lipschitz constant of the kernel rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from enum import Enum

import numpy as np

from .dm_bounds import InfeasibleError

A_GRID_POINTS = 256


class Distance(str, Enum):
    TV = "TV"
    W_PSI = "W_psi"
    W_PSI2 = "W_psi2"


class Provenance(str, Enum):
    ANALYTIC = "analytic"
    MONTE_CARLO = "monte_carlo"
    HEURISTIC_SUP = "heuristic_sup"


_STRENGTH = {Provenance.ANALYTIC: 0, Provenance.MONTE_CARLO: 1, Provenance.HEURISTIC_SUP: 2}


def weakest(*provs) -> Provenance:
    """The least trustworthy provenance among the inputs."""
    ps = [Provenance(p) for p in provs]
    return max(ps, key=_STRENGTH.__getitem__) if ps else Provenance.ANALYTIC


@dataclass(frozen=True)
class ContractionCertificate:
    """Constants of a local contraction plus drift condition.

    gamma: contraction on {V(x) + V(y) <= d}; gamma0: global Lipschitz
    constant of the mean coupled distance; (lambda_, L): drift for V;
    c: psi(x, y) <= c (V(x) + V(y) + 1).
    """

    gamma: float
    gamma0: float
    lambda_: float
    L: float
    d: float
    c: float = 1.0

    def __post_init__(self):
        if not (0.0 <= self.gamma < 1.0):
            raise InfeasibleError(f"gamma={self.gamma} must lie in [0, 1)")
        if not (0.0 <= self.lambda_ < 1.0):
            raise InfeasibleError(f"lambda={self.lambda_} must lie in [0, 1)")
        if self.gamma0 < 0 or self.L < 0 or self.c <= 0:
            raise InfeasibleError("gamma0, L must be >= 0 and c > 0")
        if not self.d > 2.0 * self.L / (1.0 - self.lambda_):
            raise InfeasibleError("d must exceed 2L/(1-lambda)")

    @property
    def q(self) -> float:
        return (self.lambda_ * self.d + 2.0 * self.L + 1.0) / (self.d + 1.0)


@dataclass(frozen=True)
class GeomBound:
    rate: float
    distance: Distance
    provenance: Provenance
    prefactor_params: dict = field(default_factory=dict)
    a: float | None = None
    interval: tuple | None = None

    @property
    def geometric(self) -> bool:
        return self.rate < 1.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["distance"] = Distance(self.distance).value
        d["provenance"] = Provenance(self.provenance).value
        d["interval"] = list(self.interval) if self.interval is not None else None
        d["geometric"] = self.geometric
        return d


def classical_bound(c_x: float, gamma: float, m):
    """c(x) / (1 - gamma) * gamma^m for a chain that contracts everywhere."""
    if not gamma < 1.0:
        raise InfeasibleError("gamma must be < 1")
    if c_x < 0:
        raise ValueError("c_x must be >= 0")
    out = c_x / (1.0 - gamma) * np.power(gamma, np.asarray(m, dtype=float))
    return float(out) if np.ndim(out) == 0 else out


def admissible_a_interval(cert: ContractionCertificate):
    """Open interval of exponents a for which the combined rate is < 1, or None."""
    l5 = math.log(2.0 * cert.L + 1.0)
    if cert.gamma == 0.0 or l5 == 0.0:
        lo = 0.0
    else:
        lo = l5 / (l5 - math.log(cert.gamma))
    lq = math.log(cert.q)
    if cert.gamma0 <= 1.0:
        hi = 1.0
    else:
        hi = -lq / (math.log(cert.gamma0) - lq)
    if not lo < hi:
        return None
    return (lo, hi)


def _rate(cert, a):
    a = np.asarray(a, dtype=float)
    t1 = np.power(cert.gamma, a) * np.power(2.0 * cert.L + 1.0, 1.0 - a)
    t2 = np.power(cert.gamma0, a) * np.power(cert.q, 1.0 - a)
    return np.maximum(t1, t2)


def general_rate(cert: ContractionCertificate, a: float) -> float:
    """[gamma^a (2L+1)^(1-a)] v [gamma0^a q^(1-a)], q = (lambda d + 2L + 1)/(d + 1)."""
    iv = admissible_a_interval(cert)
    if iv is None or not (iv[0] < a < iv[1]):
        raise InfeasibleError(f"a={a} outside admissible interval {iv}")
    return float(_rate(cert, a))


@dataclass(frozen=True)
class RateCurve:
    rate: float
    a: float
    interval: tuple
    grid: np.ndarray
    curve: np.ndarray


def best_general_rate(cert: ContractionCertificate, points: int = A_GRID_POINTS,
                      upper: float | None = None) -> RateCurve:
    """Minimise the rate over an evenly spaced grid strictly inside the interval
    (optionally intersected with (0, upper))."""
    iv = admissible_a_interval(cert)
    if iv is None:
        raise InfeasibleError("admissible interval for a is empty")
    lo, hi = iv
    if upper is not None:
        hi = min(hi, upper)
        if not lo < hi:
            raise InfeasibleError("admissible interval is empty after restriction")
    grid = np.linspace(lo, hi, points + 2)[1:-1]
    curve = _rate(cert, grid)
    k = int(np.argmin(curve))
    return RateCurve(rate=float(curve[k]), a=float(grid[k]), interval=(lo, hi),
                     grid=grid, curve=curve)


def general_prefactor(cert: ContractionCertificate, V_x: float, rho_a: float) -> float:
    """c ((lambda + 1) V(x) + L + 1) / (1 - rho_a)."""
    if not rho_a < 1.0:
        raise InfeasibleError("rho_a must be < 1")
    return cert.c * ((cert.lambda_ + 1.0) * V_x + cert.L + 1.0) / (1.0 - rho_a)


def bound_curve(prefactor: float, rate: float, m_max: int) -> np.ndarray:
    return prefactor * np.power(rate, np.arange(m_max + 1, dtype=float))


@dataclass(frozen=True)
class TvCurve:
    steps: np.ndarray  # m = 1, 2, ...
    values: np.ndarray
    clamped: bool
    raw: np.ndarray


def madras_tv_from_w(c_lip: float, w_curve) -> TvCurve:
    """TV bound at step m from a Wasserstein bound at step m - 1.

    If the kernel rows satisfy int |k(x, .) - k(y, .)| <= c_lip psi(x, y), then
    TV(m) <= (c_lip / 2) W(m - 1). Values above 1 are clamped and flagged.
    """
    if c_lip < 0:
        raise ValueError("c_lip must be >= 0")
    w = np.asarray(w_curve, dtype=float)
    if np.any(w < 0):
        raise ValueError("w_curve must be nonnegative")
    raw = 0.5 * c_lip * w[:-1]
    vals = np.minimum(raw, 1.0)
    return TvCurve(steps=np.arange(1, w.size), values=vals,
                   clamped=bool(np.any(raw > 1.0)), raw=raw)
