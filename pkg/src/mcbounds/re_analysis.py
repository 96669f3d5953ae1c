"""Closed-form convergence constants for the random-effects marginal Gibbs chain.

Drift function V(eta) = (1/p) sum_i (eta_i + ybar - ybar_i)^2 + (eta_0/sqrt(p) - ybar)^2.
Small set C = {V(eta) + V(eta') <= d} with d = p^(delta/2); c = 2p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .chains import REData
from .dm_bounds import InfeasibleError
from .w_bounds import (
    ContractionCertificate,
    admissible_a_interval,
    bound_curve,
    general_prefactor,
    madras_tv_from_w,
)

A_GRID_POINTS = 128


def _pos(x, what):
    if not x > 0:
        raise InfeasibleError(f"{what} must be positive (got {x})")
    return x


def re_drift_constants(data: REData) -> tuple[float, float]:
    """(lambda, L) with E V(f(eta)) <= lambda V(eta) + L."""
    p, r, a1, b1, a2, b2 = data.p, data.r, data.a1, data.b1, data.a2, data.b2
    den1 = _pos(p + 2 * a1 - 2, "p + 2a1 - 2")
    den2 = _pos(r * p + 2 * a2 - 2, "rp + 2a2 - 2")
    lam = (2 * p + 4) / den2 + 4 / den1
    L = ((p + 2 * a1 + 2) * data.between_ss + 4 * b1) / (p * den1) \
        + (p + 2) / (p * r) * (data.ssw + 2 * b2) / den2
    return float(lam), float(L)


def V_re(data: REData, eta) -> float | np.ndarray:
    eta = np.asarray(eta, dtype=float)
    if eta.shape[-1] != data.p + 1:
        raise ValueError(f"eta must have length p+1={data.p + 1}")
    ybar = data.grand_mean
    dev = eta[..., 1:] + ybar - data.group_means
    out = np.mean(dev * dev, axis=-1) + (eta[..., 0] / math.sqrt(data.p) - ybar) ** 2
    return float(out) if np.ndim(out) == 0 else out


def re_varrho(data: REData, b2_val: float, caps: bool = False) -> float:
    """Bound on the squared mean contraction coefficient along a path whose
    points all have b2^(eta) <= b2_val. With ``caps`` both minimum terms are
    replaced by their constant caps (valid for every path)."""
    p, r, a1, b1, a2 = data.p, data.r, data.a1, data.b1, data.a2
    if p < 4:
        raise InfeasibleError("contraction constants need p >= 4")
    if b2_val < data.b2:
        raise ValueError("b2_val must be >= b2")
    h1 = p / 2 + a1
    h2 = p * r / 2 + a2
    _pos(h2 - 2, "pr/2 + a2 - 2")
    _pos(h1 - 1, "p/2 + a1 - 1")
    den2 = _pos(r * p + 2 * a2 - 2, "rp + 2a2 - 2")
    den1 = _pos(p + 2 * a1 - 2, "p + 2a1 - 2")
    if caps:
        m1 = 1.0
        m2 = 2 * p / den1
    else:
        m1 = min(b2_val**2 * h1 * (h1 + 1) / (r**2 * b1**2 * (h2 - 1) * (h2 - 2)), 1.0)
        m2 = min(2 * b2_val * p / (b1 * r * den2), 2 * p / den1)
    brace = 4 / b1 * m1 + 8 * (p + 2 * a1) / (b1 * den2)
    return float(brace * data.between_ss + 5 / (h1 - 1) + 4 / (h2 - 1) + m2 + 4 * p / den2)


def re_b2_cap(data: REData, delta: float) -> float:
    """b2 + ssw/2 + r p^(1 + delta/2): bound on b2^(eta) over paths in C."""
    return data.b2 + 0.5 * data.ssw + data.r * data.p ** (1 + delta / 2)


def re_contraction(data: REData, delta: float = 0.5) -> tuple[float, float]:
    """(gamma, gamma0): mean contraction inside C and globally."""
    g = math.sqrt(re_varrho(data, re_b2_cap(data, delta)))
    g0 = math.sqrt(re_varrho(data, data.b2, caps=True))
    return g, g0


def re_tv_lipschitz(data: REData) -> float:
    """(c1 + c2) r^(3/2) p evaluated at this instance's p and r."""
    p, r, a1, b1, a2, b2 = data.p, data.r, data.a1, data.b1, data.a2, data.b2
    s1 = math.sqrt(2 / b1)
    c1 = 2 / p * (p / 2 + a1) * math.exp((p / 2 + a1 - 1) * math.log1p(s1 / p + 1 / (2 * b1 * p * p))) \
        * (s1 + 1 / (b1 * p))
    rp = r * p
    c2 = 2 * r ** -1.5 / p * (rp / 2 + a2) \
        * math.exp((rp / 2 + a2 - 1) * math.log1p(2 / (math.sqrt(b2) * rp) + 1 / (b2 * rp * rp))) \
        * (2 * math.sqrt(r / b2) + 2 / (b2 * math.sqrt(r) * p))
    return float((c1 + c2) * r**1.5 * p)


@dataclass
class ReCertificate:
    p: int
    r: int
    lambda_: float
    L: float
    gamma: float
    gamma0: float
    delta: float
    d: float
    a: float | None
    rho_a: float | None
    interval: tuple | None
    tv_coeff: float
    valid: dict
    e1_ratio: float

    @property
    def feasible(self) -> bool:
        return self.rho_a is not None

    def prefactor(self, data: REData, eta) -> float:
        """2p ((lambda + 1) V(eta) + L + 1) / (1 - rho_a)."""
        if not self.feasible:
            raise InfeasibleError("certificate has no valid rate")
        cert = ContractionCertificate(self.gamma, self.gamma0, self.lambda_, self.L, self.d,
                                      c=2.0 * self.p)
        return general_prefactor(cert, V_re(data, eta), self.rho_a)

    def w_curve(self, data: REData, eta, m_max: int) -> np.ndarray:
        return bound_curve(self.prefactor(data, eta), self.rho_a, m_max)

    def tv_curve(self, data: REData, eta, m_max: int):
        return madras_tv_from_w(self.tv_coeff, self.w_curve(data, eta, m_max))

    def to_json(self) -> dict:
        out = asdict(self)
        out["interval"] = list(self.interval) if self.interval else None
        out["provenance"] = {
            "lambda": "analytic: drift bound for V",
            "L": "analytic: drift bound for V",
            "gamma": "analytic: contraction functional at the in-set cap of b2",
            "gamma0": "analytic: contraction functional with both minima capped",
            "rho_a": "analytic: combined contraction/drift rate, minimised over a-grid",
            "tv_coeff": "analytic: (c1 + c2) r^(3/2) p at this instance's p",
        }
        return out


def re_rate(data: REData, delta: float = 0.5, a_points: int = A_GRID_POINTS) -> ReCertificate:
    """Assemble the W_psi rate. Infeasible cases return a certificate with
    rho_a = None and the failing checks recorded in ``valid``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    lam, L = re_drift_constants(data)
    g, g0 = re_contraction(data, delta)
    d = data.p ** (delta / 2)
    valid = {
        "lambda_lt_1": lam < 1.0,
        "gamma_lt_1": g < 1.0,
        "d_gt_2L_over_1_minus_lambda": bool(lam < 1.0 and d > 2 * L / (1 - lam)),
    }
    a_cap = min(delta / (1 + delta), 2.0 / 3.0)
    best_a = rate = iv = None
    if all(valid.values()):
        cert = ContractionCertificate(g, g0, lam, L, d, c=2.0 * data.p)
        full = admissible_a_interval(cert)
        if full is not None:
            lo, hi = full[0], min(full[1], a_cap)
            if lo < hi:
                iv = (lo, hi)
                grid = np.linspace(lo, hi, a_points + 2)[1:-1]
                t1 = g**grid * (2 * L + 1) ** (1 - grid)
                t2 = g0**grid * cert.q ** (1 - grid)
                curve = np.maximum(t1, t2)
                k = int(np.argmin(curve))
                best_a, rate = float(grid[k]), float(curve[k])
    valid["a_interval_nonempty"] = iv is not None
    return ReCertificate(p=data.p, r=data.r, lambda_=lam, L=L, gamma=g, gamma0=g0, delta=delta,
                         d=d, a=best_a, rho_a=rate, interval=iv, tv_coeff=re_tv_lipschitz(data),
                         valid=valid, e1_ratio=data.r**2 / data.p ** (3 + delta))
