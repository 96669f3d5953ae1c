"""Synthetic data generators, assumption checkers and file ingestion.

Generators are pure functions of their arguments and a seed. Each uses
separate counter-based streams for covariates and responses, so a run with
n' < n rows is an exact prefix of a run with n rows.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, asdict, field
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable

import numpy as np
from scipy.special import expit

from .chains import ProbitData, REData
from .matrix_kernel import eig_extremes, inv_sqrt, lambda_max
from .stats_kernel import RandomStream, draw_normals, draw_uniforms, std_normal_cdf

log = logging.getLogger(__name__)

LINKS: dict[str, Callable] = {"probit": std_normal_cdf, "logit": expit}

_X_STREAM, _Y_STREAM, _AUX_STREAM = 0, 1, 2


class Regime(str, Enum):
    FIXED_P = "fixed_p_growing_n"
    SHRINKAGE = "shrinkage"
    REPEATED = "repeated_measures"
    RANDOM_EFFECTS = "random_effects"


def link_fn(G) -> Callable:
    if callable(G):
        return G
    try:
        return LINKS[G]
    except KeyError:
        raise ValueError(f"unknown inverse link {G!r}; choose from {sorted(LINKS)}") from None


def g_bar(G, mu):
    """G(mu) ^ (1 - G(mu))."""
    g = link_fn(G)(np.asarray(mu, dtype=float))
    return np.minimum(g, 1.0 - g)


def normal_rows(stream: RandomStream, n: int, p: int) -> np.ndarray:
    """Default covariate sampler: iid N(0, I_p) rows, drawn row-major."""
    return draw_normals(stream, n * p).reshape(n, p)


@dataclass(frozen=True)
class GenSpec:
    """Declarative description of a synthetic data set.

    ``beta_star`` overrides the default sparse coefficient, which has its
    first ``k`` entries equal to ``beta_k_value`` and the rest zero.
    ``kappa`` sets a prior precision Q = kappa I (0 means a flat prior).
    """

    regime: Regime
    p: int
    n: int | None = None
    q: int | None = None
    r: int | None = None
    k: int = 0
    beta_star: tuple | None = None
    beta_k_value: float = 1.0
    link: str = "probit"
    kappa: float = 0.0
    mu_star: float = 1.0
    lam_theta_star: float = 1.0
    lam_e_star: float = 1.0
    seed: int = 0
    one_way: bool = False

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        for name in ("p", "n", "q", "r"):
            val = getattr(self, name)
            if val is not None and int(val) < 1:
                raise ValueError(f"{name} must be >= 1 (got {val})")
        if not 0 <= self.k <= self.p:
            raise ValueError(f"k={self.k} must lie in [0, p={self.p}]")
        if self.beta_star is not None:
            b = tuple(float(x) for x in self.beta_star)
            if len(b) != self.p:
                raise ValueError("beta_star must have length p")
            object.__setattr__(self, "beta_star", b)
        link_fn(self.link)
        if self.kappa < 0:
            raise ValueError("kappa must be >= 0")
        if min(self.lam_theta_star, self.lam_e_star) <= 0:
            raise ValueError("precisions must be positive")

    def beta(self) -> np.ndarray:
        if self.beta_star is not None:
            return np.array(self.beta_star)
        b = np.zeros(self.p)
        b[: self.k] = self.beta_k_value
        return b

    def prior_Q(self) -> np.ndarray | None:
        return self.kappa * np.eye(self.p) if self.kappa > 0 else None

    def to_dict(self) -> dict:
        d = asdict(self)
        d["regime"] = self.regime.value
        return d


def _responses(stream, probs):
    u = draw_uniforms(stream, probs.shape[0])
    return (u < probs).astype(np.int8)


def gen_probit_sequence(spec: GenSpec, n: int | None = None,
                        sampler: Callable = normal_rows) -> ProbitData:
    """Rows x_i from ``sampler`` and y_i ~ Bernoulli(G(x_i^T beta*)).

    A custom sampler must draw sequentially from the stream it is given to
    keep the prefix property.
    """
    if spec.regime not in (Regime.FIXED_P, Regime.SHRINKAGE):
        raise ValueError(f"gen_probit_sequence does not apply to regime {spec.regime.value}")
    n = spec.n if n is None else n
    if n is None or n < 1:
        raise ValueError("n must be >= 1")
    X = np.asarray(sampler(RandomStream(spec.seed, _X_STREAM), n, spec.p), dtype=float)
    if X.shape != (n, spec.p):
        raise ValueError(f"sampler returned shape {X.shape}, expected {(n, spec.p)}")
    probs = link_fn(spec.link)(X @ spec.beta())
    y = _responses(RandomStream(spec.seed, _Y_STREAM), probs)
    return ProbitData.make(X, y, spec.prior_Q())


def gen_repeated_design(q: int, reps_per_row, p: int, beta_star, G="probit", seed: int = 0,
                        one_way: bool = False, Q=None, v=None) -> ProbitData:
    """q distinct rows, row i repeated r_i times (copies are consecutive).

    Distinct rows are N(0, I_p) unless ``one_way``, which uses the unit
    vectors e_1..e_p and needs q = p.
    """
    if q < 1 or p < 1:
        raise ValueError("q and p must be >= 1")
    reps = np.broadcast_to(np.asarray(reps_per_row, dtype=int), (q,)).copy()
    if np.any(reps < 1):
        raise ValueError("every row needs at least one repetition")
    beta = np.asarray(beta_star, dtype=float).reshape(-1)
    if beta.shape != (p,):
        raise ValueError("beta_star must have length p")
    if one_way:
        if q != p:
            raise ValueError("one-way design needs q = p")
        rows = np.eye(p)
    else:
        rows = normal_rows(RandomStream(seed, _X_STREAM), q, p)
    X = np.repeat(rows, reps, axis=0)
    probs = link_fn(G)(X @ beta)
    y = _responses(RandomStream(seed, _Y_STREAM), probs)
    return ProbitData.make(X, y, Q, v)


def gen_repeated_from_spec(spec: GenSpec) -> ProbitData:
    if spec.regime is not Regime.REPEATED or spec.q is None or spec.r is None:
        raise ValueError("repeated design needs regime repeated_measures with q and r")
    return gen_repeated_design(spec.q, spec.r, spec.p, spec.beta(), spec.link, spec.seed,
                               one_way=spec.one_way, Q=spec.prior_Q())


def gen_re_data(p: int, r: int, mu_star: float = 1.0, lam_theta_star: float = 1.0,
                lam_e_star: float = 1.0, seed: int = 0, **hyper) -> REData:
    """Simulate y_ij = mu + theta_i + e_ij and reduce to sufficient statistics.

    ``lam_theta_star = inf`` gives theta = 0.
    """
    if not (lam_theta_star > 0 and lam_e_star > 0):
        raise ValueError("precisions must be positive")
    st = RandomStream(seed, _X_STREAM)
    theta = draw_normals(st, p) / math.sqrt(lam_theta_star)
    e = draw_normals(st, p * r).reshape(p, r) / math.sqrt(lam_e_star)
    return REData.from_observations(mu_star + theta[:, None] + e, **hyper)


def gen_re_from_spec(spec: GenSpec, **hyper) -> REData:
    if spec.regime is not Regime.RANDOM_EFFECTS or spec.r is None:
        raise ValueError("random-effects data needs regime random_effects and r")
    return gen_re_data(spec.p, spec.r, spec.mu_star, spec.lam_theta_star, spec.lam_e_star,
                       spec.seed, **hyper)


# ---------------------------------------------------------------------------
# Assumption checks
# ---------------------------------------------------------------------------

PASS, FAIL, INDETERMINATE = "pass", "fail", "indeterminate"
_ALL = ("B1", "B2", "B3", "B4", "C1", "C2", "D1", "D2", "D3", "D4", "E1", "E2")
_FAMILY = {"B": GenSpec, "C": ProbitData, "D": ProbitData, "E": REData}


@dataclass
class AssumptionResult:
    name: str
    statistic: object
    status: str
    se: float | None = None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return jsonable(asdict(self))


def jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, Enum):
        return obj.value
    return obj


def _covariate_sample(spec: GenSpec, budget: int):
    st = RandomStream(spec.seed, _AUX_STREAM)
    return normal_rows(st, budget, spec.p)


def _b4_stat(X, gb):
    M = X.T @ X / X.shape[0]
    A = (X.T * gb) @ X / X.shape[0]
    R = inv_sqrt(M)
    return eig_extremes(R @ A @ R)[0]


def b4_statistic(spec: GenSpec, mc_budget: int = 100_000, batches: int = 20):
    """MC estimate of lambda_min[M^-1/2 E(x x^T Gbar(x^T beta*)) M^-1/2], M = E x x^T,
    with a batch-means standard error."""
    X = _covariate_sample(spec, mc_budget)
    gb = g_bar(spec.link, X @ spec.beta())
    est = _b4_stat(X, gb)
    size = mc_budget // batches
    parts = [_b4_stat(X[i * size:(i + 1) * size], gb[i * size:(i + 1) * size])
             for i in range(batches)]
    se = float(np.std(parts, ddof=1) / math.sqrt(batches))
    return float(est), se


def fixed_p_target(spec: GenSpec, mc_budget: int = 100_000):
    """p-free asymptotic level 1 - stat/2 with stat the (B4) quantity."""
    est, se = b4_statistic(spec, mc_budget)
    return 1.0 - 0.5 * est, 0.5 * se


def _distinct_rows(X):
    rows, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    return rows, inverse.reshape(-1), counts


def _check_B(name, spec, budget):
    if name == "B1":
        X = _covariate_sample(spec, budget)
        lo, hi = eig_extremes(X.T @ X / budget)
        return AssumptionResult(name, {"lambda_min": lo, "lambda_max": hi}, INDETERMINATE)
    if name == "B2":
        X = _covariate_sample(spec, budget)
        f = np.sum(X * X, axis=1) ** 2
        return AssumptionResult(name, float(f.mean()), INDETERMINATE,
                                se=float(f.std(ddof=1) / math.sqrt(budget)),
                                detail={"note": "empirical fourth moment only"})
    if name == "B3":
        X = _covariate_sample(spec, budget)
        A = normal_rows(RandomStream(spec.seed + 1, _AUX_STREAM), 100, spec.p)
        A /= np.linalg.norm(A, axis=1, keepdims=True)
        cos = np.abs(X @ A.T) / np.linalg.norm(X, axis=1, keepdims=True)
        deltas = [0.5, 0.2, 0.1, 0.05, 0.02, 0.01]
        probe = {d: float(np.max(np.mean(cos <= d, axis=0))) for d in deltas}
        return AssumptionResult(name, probe, INDETERMINATE,
                                detail={"directions": 100, "note": "sup over a finite direction set"})
    est, se = b4_statistic(spec, budget)
    return AssumptionResult(name, est, INDETERMINATE, se=se,
                            detail={"target_rate": 1.0 - 0.5 * est})


def _check_C(name, data: ProbitData, ell):
    lo_q = eig_extremes(data.Q)[0]
    if name == "C1":
        return AssumptionResult(name, lo_q, PASS if lo_q > 0 else FAIL)
    if not lo_q > 0:
        return AssumptionResult(name, math.inf, FAIL, detail={"reason": "Q is not positive definite"})
    R = inv_sqrt(data.Q)
    stat = lambda_max(R @ (data.X.T @ data.X) @ R)
    Rs = inv_sqrt(data.X.T @ data.X + data.Q)
    ratio = lambda_max(Rs @ (data.X.T @ data.X) @ Rs)
    ok = ell is None or stat <= ell
    return AssumptionResult(name, stat, PASS if ok else FAIL,
                            detail={"lambda_max_X_Sigma_inv_Xt": ratio, "ell": ell})


def _check_D(name, data: ProbitData, beta_star, G):
    if name == "D1":
        lo = eig_extremes(data.X.T @ data.X + data.Q)[0]
        return AssumptionResult(name, lo, PASS if lo > 0 else FAIL)
    rows, _, counts = _distinct_rows(data.X)
    q, r = rows.shape[0], int(counts.min())
    if name == "D2":
        from .ac_analysis import SpectralContext, hoeffding_sigma

        sig = hoeffding_sigma(SpectralContext(data))
        stat = sig * math.sqrt(2.0 * math.log(data.p)) if data.p > 1 else 0.0
        return AssumptionResult(name, stat, INDETERMINATE, detail={"sigma": sig})
    if name == "D3":
        stat = math.inf if q == 1 else r / math.log(q)
        return AssumptionResult(name, stat, INDETERMINATE, detail={"q": q, "r": r})
    if beta_star is None:
        raise ValueError("D4 needs beta_star")
    mu = rows @ np.asarray(beta_star, float)
    ell = float(np.max(np.abs(mu)))
    g = float(np.min(g_bar(G, mu)))
    return AssumptionResult(name, g, INDETERMINATE,
                            detail={"max_abs_xbeta": ell, "target_rate": 1.0 - 0.5 * g})


def _check_E(name, data: REData, delta):
    if name == "E1":
        return AssumptionResult(name, data.r**2 / data.p ** (3.0 + delta), INDETERMINATE,
                                detail={"delta": delta})
    s1 = data.between_ss / data.p
    s2 = data.ssw / (data.r * data.p)
    ok = math.isfinite(s1) and math.isfinite(s2)
    return AssumptionResult(name, {"between_mean_sq": s1, "within_mean_sq": s2},
                            PASS if ok else FAIL)


def check_assumptions(obj, which: str | Iterable[str] = _ALL, mc_budget: int = 100_000, *,
                      beta_star=None, link="probit", ell: float | None = None,
                      delta: float = 0.5) -> dict[str, AssumptionResult]:
    """Finite-instance statistics for the named assumptions.

    B-checks take a GenSpec (they concern the covariate law), C/D-checks a
    ProbitData and E-checks an REData. Asymptotic conditions are always
    reported as indeterminate; C1, C2, D1 and E2 get pass/fail.
    """
    names = [which] if isinstance(which, str) else list(which)
    if mc_budget < 1:
        raise ValueError("mc_budget must be >= 1")
    out = {}
    for name in names:
        if name not in _ALL:
            raise ValueError(f"unknown assumption {name!r}")
        fam = name[0]
        if not isinstance(obj, _FAMILY[fam]):
            raise TypeError(f"{name} does not apply to {type(obj).__name__}")
        if fam == "B":
            if obj.regime is not Regime.FIXED_P:
                raise ValueError("B-checks need regime fixed_p_growing_n")
            out[name] = _check_B(name, obj, mc_budget)
        elif fam == "C":
            out[name] = _check_C(name, obj, ell)
        elif fam == "D":
            out[name] = _check_D(name, obj, beta_star, link)
        else:
            out[name] = _check_E(name, obj, delta)
    return out


# ---------------------------------------------------------------------------
# Files
# ---------------------------------------------------------------------------


def _read_matrix(path, what):
    rows = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(t) for t in line.split(",")])
            except ValueError:
                raise ValueError(f"{what}: non-numeric entry in row {i}") from None
            if len(rows[-1]) != len(rows[0]):
                raise ValueError(f"{what}: row {i} has {len(rows[-1])} columns, expected {len(rows[0])}")
    if not rows:
        raise ValueError(f"{what}: file is empty")
    return np.array(rows)


def load_probit_csv(path_X, path_y, path_Q=None, v=None) -> ProbitData:
    """Headerless comma-separated files. Missing Q means a flat prior."""
    X = _read_matrix(path_X, "X")
    y = _read_matrix(path_y, "y")
    if y.shape[1] != 1:
        raise ValueError(f"y must have a single column (got {y.shape[1]})")
    y = y[:, 0]
    if y.shape[0] != X.shape[0]:
        raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]}")
    bad = np.flatnonzero((y != 0) & (y != 1))
    if bad.size:
        raise ValueError(f"y row {bad[0]} has value {y[bad[0]]:g}; responses must be 0 or 1")
    Q = None if path_Q is None else _read_matrix(path_Q, "Q")
    if v is not None and not isinstance(v, np.ndarray) and isinstance(v, (str, Path)):
        v = _read_matrix(v, "v").reshape(-1)
    data = ProbitData.make(X, y, Q, v)
    lo = eig_extremes(data.X.T @ data.X + data.Q)[0]
    if not lo > data.p * 1e-12 * max(1.0, abs(lo)):
        log.warning("X^T X + Q is singular (lambda_min=%g); the sampler is undefined", lo)
    return data


def save_probit_csv(data: ProbitData, path_X, path_y, path_Q=None) -> None:
    """Write with repr-precision floats so a reload is bit-identical."""
    def dump(path, M):
        with open(path, "w") as fh:
            for row in np.atleast_2d(M):
                fh.write(",".join(repr(float(x)) for x in row) + "\n")

    dump(path_X, data.X)
    dump(path_y, data.y.reshape(-1, 1))
    if path_Q is not None:
        dump(path_Q, data.Q)


def save_report(path, report) -> None:
    if isinstance(report, dict):
        report = {k: (v.to_json() if isinstance(v, AssumptionResult) else v) for k, v in report.items()}
    Path(path).write_text(json.dumps(jsonable(report), indent=2, sort_keys=True) + "\n")
