"""Markov chains as one-step samplers and as random mappings.

A random mapping is split into ``draw_theta(stream)``, which consumes the
randomness for one step, and ``apply(states, theta)``, which pushes any number
of states through the same realisation. Coupled chains are obtained by
applying one theta to a stack of states.

Batched convention for ``apply``: states have shape (B, K, dim) and every
theta component has leading dimension B. Single-state helpers such as
:func:`ac_map` wrap this.
"""

from __future__ import annotations

import io
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .matrix_kernel import as_sym, inv_sqrt, SingularMatrixError
from .stats_kernel import (
    RandomStream,
    draw_gamma,
    draw_normals,
    draw_uniforms,
    tn_inv_cdf,
    tn_inv_cdf_dmu,
)

BLOCK = 64  # replicates per vectorised block; fixed so results never depend on threads
BURNIN_SALT = 0x9E3779B97F4A7C15


# ---------------------------------------------------------------------------
# Problem instances
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbitData:
    """Bayesian probit instance: design X (n x p), responses y, prior N(v, Q^-1)."""

    X: np.ndarray
    y: np.ndarray
    Q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y).reshape(-1)
        p = X.shape[1]
        Q = np.zeros((p, p)) if self.Q is None else as_sym(self.Q)
        v = np.zeros(p) if self.v is None else np.asarray(self.v, dtype=float).reshape(-1)
        if y.shape[0] != X.shape[0]:
            raise ValueError(f"X has {X.shape[0]} rows but y has {y.shape[0]} entries")
        if Q.shape != (p, p) or v.shape != (p,):
            raise ValueError("prior dimensions do not match X")
        bad = np.flatnonzero((y != 0) & (y != 1))
        if bad.size:
            raise ValueError(f"response at row {bad[0]} is not 0/1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y.astype(np.int8))
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "v", v)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def flat_prior(self) -> bool:
        return not np.any(self.Q)

    @classmethod
    def make(cls, X, y, Q=None, v=None) -> "ProbitData":
        return cls(X, y, Q, v)


@dataclass(frozen=True)
class REData:
    """Sufficient statistics of a balanced one-way random-effects data set."""

    p: int
    r: int
    group_means: np.ndarray
    ssw: float
    a1: float = 1.0
    b1: float = 1.0
    a2: float = 1.0
    b2: float = 1.0

    def __post_init__(self):
        gm = np.asarray(self.group_means, dtype=float).reshape(-1)
        object.__setattr__(self, "group_means", gm)
        if gm.shape[0] != self.p:
            raise ValueError("group_means must have length p")
        if self.p < 2 or self.r < 1:
            raise ValueError("need p >= 2 and r >= 1")
        if self.ssw < 0:
            raise ValueError("ssw must be nonnegative")
        if min(self.a1, self.b1, self.a2, self.b2) <= 0:
            raise ValueError("hyperparameters must be positive")

    @property
    def grand_mean(self) -> float:
        return float(np.mean(self.group_means))

    @property
    def between_ss(self) -> float:
        """sum_i (ybar_i - ybar)^2"""
        return float(np.sum((self.group_means - self.grand_mean) ** 2))

    @classmethod
    def from_observations(cls, y, **hyper) -> "REData":
        """Build from a p x r array of observations y[i, j]."""
        y = np.asarray(y, dtype=float)
        p, r = y.shape
        gm = y.mean(axis=1)
        ssw = float(np.sum((y - gm[:, None]) ** 2))
        return cls(p=p, r=r, group_means=gm, ssw=ssw, **hyper)


# ---------------------------------------------------------------------------
# Chains
# ---------------------------------------------------------------------------


def _batched(states):
    s = np.asarray(states, dtype=float)
    return s[None, None, :] if s.ndim == 1 else s


class ArChain:
    """Gaussian autoregression x' ~ N(x/2, 3/4 I_p)."""

    kind = "ar"
    _scale = math.sqrt(0.75)

    def __init__(self, p: int):
        if p < 1:
            raise ValueError("p must be >= 1")
        self.p = int(p)
        self.dim = self.p

    def draw_theta(self, stream: RandomStream):
        return draw_normals(stream, self.p)

    def stack_theta(self, thetas):
        return np.stack(thetas)

    def apply(self, states, theta):
        return 0.5 * states + self._scale * theta[:, None, :]

    def distance(self, a, b):
        return np.linalg.norm(a - b, axis=-1)

    def stationary_draw(self, stream: RandomStream):
        return draw_normals(stream, self.p)


class AcChain:
    """Albert and Chib data augmentation for Bayesian probit regression."""

    kind = "ac"

    def __init__(self, data: ProbitData):
        self.data = data
        X, Q = data.X, data.Q
        self.sigma = X.T @ X + Q
        try:
            self.sigma_inv_sqrt = inv_sqrt(self.sigma)
        except SingularMatrixError as exc:
            raise SingularMatrixError(exc.lambda_min, "X^T X + Q is singular") from None
        self.sigma_inv = self.sigma_inv_sqrt @ self.sigma_inv_sqrt
        self.sigma_inv = 0.5 * (self.sigma_inv + self.sigma_inv.T)
        self.prior_shift = np.zeros(data.p) if data.flat_prior else self.sigma_inv @ (Q @ data.v)
        self._x_sinv = X @ self.sigma_inv  # rows x_i^T Sigma^-1
        self.whitened = X @ self.sigma_inv_sqrt
        self.dim = data.p

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.data.p

    def draw_theta(self, stream: RandomStream):
        u = draw_uniforms(stream, self.n)
        z = draw_normals(stream, self.p)
        return u, z

    def stack_theta(self, thetas):
        return np.stack([t[0] for t in thetas]), np.stack([t[1] for t in thetas])

    def latent(self, states, u):
        """H(U_i, x_i^T beta, y_i) for batched states."""
        mu = states @ self.data.X.T
        return tn_inv_cdf(u[:, None, :], mu, self.data.y)

    def apply(self, states, theta):
        u, z = theta
        h = self.latent(states, u)
        noise = z @ self.sigma_inv_sqrt
        return h @ self._x_sinv + self.prior_shift + noise[:, None, :]

    def s_diag(self, beta, u):
        """Diagonal of S(beta, u), i.e. dH/dmu at mu = x_i^T beta."""
        beta = np.asarray(beta, dtype=float)
        mu = beta @ self.data.X.T
        return tn_inv_cdf_dmu(u, mu, self.data.y)

    def path_derivative(self, beta, alpha, t, theta):
        u = theta[0]
        b = np.asarray(beta, float) + t * np.asarray(alpha, float)
        s = self.s_diag(b, u)
        return (s * (self.data.X @ alpha)) @ self._x_sinv

    def distance(self, a, b):
        d = a - b
        return np.sqrt(np.maximum(np.einsum("...i,ij,...j->...", d, self.sigma, d), 0.0))


class ReChain:
    """Marginal Gibbs chain on eta = (sqrt(p) mu, theta_1..theta_p) for the
    balanced one-way random-effects model."""

    kind = "re"

    def __init__(self, data: REData):
        self.data = data
        self.p = data.p
        self.dim = data.p + 1
        self._sqp = math.sqrt(data.p)
        self.shape1 = data.p / 2.0 + data.a1
        self.shape2 = data.r * data.p / 2.0 + data.a2

    def draw_theta(self, stream: RandomStream):
        z = draw_normals(stream, self.dim)
        j1 = draw_gamma(stream, self.shape1, 1.0)
        j2 = draw_gamma(stream, self.shape2, 1.0)
        return z, j1, j2

    def stack_theta(self, thetas):
        return (
            np.stack([t[0] for t in thetas]),
            np.array([t[1] for t in thetas]),
            np.array([t[2] for t in thetas]),
        )

    def residual_ss(self, eta):
        """sum_ij (y_ij - eta_0/sqrt(p) - eta_i)^2 via ssw + r sum_i (eta_i + eta_0/sqrt(p) - ybar_i)^2."""
        d = self.data
        eta = np.asarray(eta, dtype=float)
        dev = eta[..., 1:] + eta[..., :1] / self._sqp - d.group_means
        return d.ssw + d.r * np.sum(dev * dev, axis=-1)

    def precisions(self, eta, j1, j2):
        d = self.data
        lam_e = j2 / (d.b2 + 0.5 * self.residual_ss(eta))
        lam_t = j1 / (d.b1 + 0.5 * np.sum(eta[..., 1:] ** 2, axis=-1))
        return lam_t, lam_e

    def apply(self, states, theta):
        z, j1, j2 = theta
        d = self.data
        lam_t, lam_e = self.precisions(states, j1[:, None], j2[:, None])
        tot = lam_t + d.r * lam_e
        ybar = d.grand_mean
        eta0 = self._sqp * ybar + np.sqrt(tot / (d.r * lam_e * lam_t)) * z[:, None, :1].squeeze(-1)
        rest = (d.r * lam_e / tot)[..., None] * (d.group_means - (eta0 / self._sqp)[..., None])
        rest = rest + z[:, None, 1:] / np.sqrt(tot)[..., None]
        return np.concatenate([eta0[..., None], rest], axis=-1)

    def distance(self, a, b):
        return np.linalg.norm(a - b, axis=-1)


# ---------------------------------------------------------------------------
# Single-step entry points
# ---------------------------------------------------------------------------


def _one(chain, x, theta):
    th = chain.stack_theta([theta])
    return chain.apply(_batched(x), th)[0, 0]


def ar_map(chain: ArChain, x, stream: RandomStream):
    return _one(chain, x, chain.draw_theta(stream))


def ac_map(chain: AcChain, beta, stream: RandomStream):
    return _one(chain, beta, chain.draw_theta(stream))


def re_map(chain: ReChain, eta, stream: RandomStream):
    return _one(chain, eta, chain.draw_theta(stream))


def ac_gibbs_step(chain: AcChain, beta, stream: RandomStream):
    """One sweep of the two-block sampler: latent truncated normals, then beta."""
    d = chain.data
    u = draw_uniforms(stream, d.n)
    z_lat = tn_inv_cdf(u, d.X @ np.asarray(beta, float), d.y)
    mean = chain.sigma_inv @ (d.X.T @ z_lat + d.Q @ d.v)
    return mean + chain.sigma_inv_sqrt @ draw_normals(stream, d.p)


def ac_path_derivative(chain: AcChain, beta, alpha, t: float, stream: RandomStream):
    """d/dt of ac_map(beta + t alpha) under the randomness drawn from ``stream``."""
    return chain.path_derivative(beta, alpha, t, chain.draw_theta(stream))


# ---------------------------------------------------------------------------
# Coupled simulation
# ---------------------------------------------------------------------------


@dataclass
class CurveResult:
    curve: np.ndarray
    se: np.ndarray
    paths: np.ndarray | None = None  # (reps, m+1) per-path distances
    flags: dict = field(default_factory=dict)

    def fitted_rate(self, start: int = 1) -> float:
        return fit_rate(self.curve, start=start)


def fit_rate(curve, start: int = 1) -> float:
    """exp of the least-squares slope of log(curve) against step index."""
    c = np.asarray(curve, dtype=float)
    idx = np.arange(c.size)
    keep = (idx >= start) & (c > 0) & np.isfinite(c)
    if keep.sum() < 2:
        return float("nan")
    slope = np.polyfit(idx[keep], np.log(c[keep]), 1)[0]
    return float(math.exp(slope))


def _run_blocks(worker, reps: int, threads: int):
    starts = list(range(0, reps, BLOCK))
    if threads <= 1 or len(starts) == 1:
        parts = [worker(s, min(s + BLOCK, reps)) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            parts = list(ex.map(lambda s: worker(s, min(s + BLOCK, reps)), starts))
    return np.concatenate(parts, axis=0)


def _coupled_block(chain, starts, m, streams):
    """Run coupled paths for a block. starts: (B, 2, dim). Returns (B, m+1)."""
    states = np.array(starts, dtype=float)
    out = np.empty((states.shape[0], m + 1))
    out[:, 0] = chain.distance(states[:, 0], states[:, 1])
    for k in range(1, m + 1):
        theta = chain.stack_theta([chain.draw_theta(s) for s in streams])
        states = chain.apply(states, theta)
        out[:, k] = chain.distance(states[:, 0], states[:, 1])
    return out


def _summarise(paths, keep_paths):
    reps = paths.shape[0]
    curve = paths.mean(axis=0)
    se = paths.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.zeros_like(curve)
    return CurveResult(curve=curve, se=se, paths=paths if keep_paths else None)


def simulate_coupled(chain, x0, y0, m: int, reps: int, master_seed: int,
                     threads: int = 1, keep_paths: bool = False) -> CurveResult:
    """Mean distance between two chains driven by common random mappings."""
    if m < 0 or reps < 1:
        raise ValueError("need m >= 0 and reps >= 1")
    x0 = np.asarray(x0, dtype=float)
    y0 = np.asarray(y0, dtype=float)

    def work(lo, hi):
        streams = [RandomStream(master_seed, i) for i in range(lo, hi)]
        starts = np.broadcast_to(np.stack([x0, y0]), (hi - lo, 2, x0.size))
        return _coupled_block(chain, starts, m, streams)

    return _summarise(_run_blocks(work, reps, threads), keep_paths)


def _burnin_block(chain, x0, burnin, streams):
    states = np.broadcast_to(x0, (len(streams), 1, x0.size)).copy()
    for _ in range(burnin):
        theta = chain.stack_theta([chain.draw_theta(s) for s in streams])
        states = chain.apply(states, theta)
    return states[:, 0]


def estimate_w_to_pi(chain, x0, m: int, reps: int, burnin: int, master_seed: int,
                     threads: int = 1, rate_hint: float | None = None,
                     start=None, keep_paths: bool = False) -> CurveResult:
    """Coupled distance between a chain from x0 and one from an approximate
    stationary draw (``burnin`` steps from ``start``, default x0).

    The proxy is not an exact stationary draw, so the curve is an upward-
    biased estimate of the Wasserstein distance to stationarity.
    """
    if burnin < 0:
        raise ValueError("burnin must be >= 0")
    x0 = np.asarray(x0, dtype=float)
    s0 = x0 if start is None else np.asarray(start, dtype=float)
    proxy_seed = (int(master_seed) + BURNIN_SALT) % 2**64

    def work(lo, hi):
        pstreams = [RandomStream(proxy_seed, i) for i in range(lo, hi)]
        ys = _burnin_block(chain, s0, burnin, pstreams)
        streams = [RandomStream(master_seed, i) for i in range(lo, hi)]
        starts = np.stack([np.broadcast_to(x0, ys.shape), ys], axis=1)
        return _coupled_block(chain, starts, m, streams)

    res = _summarise(_run_blocks(work, reps, threads), keep_paths)
    res.flags["stationary_proxy"] = "burnin"
    res.flags["upward_biased"] = True
    if rate_hint is not None and rate_hint < 1:
        res.flags["burnin_short"] = bool(burnin < 10.0 / (1.0 - rate_hint))
    elif rate_hint is not None:
        res.flags["burnin_short"] = True
    return res


# ---------------------------------------------------------------------------
# Trace persistence
# ---------------------------------------------------------------------------

TRACE_MAGIC = b"MCBTRACE"
TRACE_VERSION = 1
_KIND_CODE = {"ar": 1, "ac": 2, "re": 3}
_HEADER = struct.Struct("<8sHHIIIIQ")


def write_trace_csv(path, paths: np.ndarray) -> None:
    """Per-path distances as rows (replicate, step, distance)."""
    paths = np.asarray(paths, dtype=float)
    buf = io.StringIO()
    buf.write("replicate,step,distance\n")
    for r in range(paths.shape[0]):
        for k in range(paths.shape[1]):
            buf.write(f"{r},{k},{float(paths[r, k])!r}\n")
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


def write_trace_binary(path, paths: np.ndarray, kind: str, p: int, n: int, seed: int) -> None:
    """Binary dump: fixed little-endian header then float64 distances (reps x (m+1))."""
    paths = np.ascontiguousarray(paths, dtype="<f8")
    reps, m1 = paths.shape
    header = _HEADER.pack(TRACE_MAGIC, TRACE_VERSION, _KIND_CODE[kind], p, n, m1 - 1, reps,
                          int(seed) % 2**64)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(paths.tobytes())


def read_trace_binary(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    magic, ver, kind, p, n, m, reps, seed = _HEADER.unpack_from(raw)
    if magic != TRACE_MAGIC:
        raise ValueError("not a trace file")
    if ver != TRACE_VERSION:
        raise ValueError(f"unsupported trace version {ver}")
    kinds = {v: k for k, v in _KIND_CODE.items()}
    data = np.frombuffer(raw, dtype="<f8", offset=_HEADER.size).reshape(reps, m + 1)
    meta = dict(kind=kinds[kind], p=p, n=n, m=m, reps=reps, seed=seed, version=ver)
    return meta, data.copy()
