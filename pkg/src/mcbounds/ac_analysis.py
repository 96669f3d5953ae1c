"""Convergence constants for the Albert and Chib probit sampler.

Most quantities are extreme eigenvalues of W^T D W, where W = X Sigma^{-1/2}
holds the whitened design rows and D is a diagonal weight matrix:

* S(beta, u): derivative of the latent map, entries in (0, 1)
* E S(beta, U): entries xi(x_i^T beta) (y=1) or xi(-x_i^T beta) (y=0)
* Lambda(beta): the drift diagonal, which has the same entries as E S.

Sups over beta are found by search and labelled heuristic.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .chains import AcChain, ProbitData, estimate_w_to_pi
from .dm_bounds import InfeasibleError
from .matrix_kernel import lambda_max, lambda_max_batch, sigma_norm
from .stats_kernel import (
    RandomStream,
    draw_normals,
    draw_uniforms,
    log_mills_phi,
    xi_fn,
)
from .w_bounds import (
    ContractionCertificate,
    Distance,
    GeomBound,
    Provenance,
    best_general_rate,
    bound_curve,
    general_prefactor,
    madras_tv_from_w,
    weakest,
)

TV_CONST = 1.0 / math.sqrt(2.0 * math.pi)
AC_L = 2.0
AC_GAMMA0 = 1.0
GRAM_CHUNK = 2_000_000  # elements of the (batch, n, p) intermediate per chunk


class SpectralContext:
    """Precomputed Sigma, Sigma^{-1/2} and whitened rows for one instance."""

    def __init__(self, data: ProbitData):
        self.chain = AcChain(data)
        self.data = data
        self.sigma = self.chain.sigma
        self.sigma_inv_sqrt = self.chain.sigma_inv_sqrt
        self.whitened_rows = self.chain.whitened
        self._sign = np.where(data.y == 1, 1.0, -1.0)

    @property
    def n(self):
        return self.data.n

    @property
    def p(self):
        return self.data.p

    def weighted_gram(self, w):
        """W^T diag(w) W for w of shape (..., n)."""
        W = self.whitened_rows
        w = np.asarray(w, float)
        lead = w.shape[:-1]
        flat = w.reshape(-1, self.n)
        out = np.empty((flat.shape[0], self.p, self.p))
        step = max(1, GRAM_CHUNK // (self.n * self.p))
        for lo in range(0, flat.shape[0], step):
            blk = flat[lo:lo + step]
            out[lo:lo + step] = np.matmul((blk[:, :, None] * W).transpose(0, 2, 1), W)
        return out.reshape(lead + (self.p, self.p))

    def signed_mu(self, beta):
        """(2y - 1) x_i^T beta."""
        return (np.asarray(beta, float) @ self.data.X.T) * self._sign

    def instance_hash(self) -> str:
        h = hashlib.sha256()
        for arr in (self.data.X, self.data.y.astype(float), self.data.Q, self.data.v):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()[:16]


@dataclass
class SearchConfig:
    directions: int = 64
    ladder: tuple = tuple(np.geomspace(1e-2, 1e6, 25))
    refine_steps: int = 60
    seed: int = 0


def _search_directions(ctx, k, seed):
    """Unit directions in the whitened coordinates; prefix-stable in k."""
    st = RandomStream(seed, 0)
    e = draw_normals(st, (k, ctx.p))
    return e / np.linalg.norm(e, axis=1, keepdims=True)


# ---------------------------------------------------------------------------
# S, Lambda and spectral statistics
# ---------------------------------------------------------------------------


def s_diag(ctx: SpectralContext, beta, u):
    return ctx.chain.s_diag(beta, u)


def spectral_stat(ctx: SpectralContext, beta, u):
    """lambda_max(Sigma^{-1/2} X^T S(beta, u) X Sigma^{-1/2}); batched over
    leading axes of beta / u."""
    s = s_diag(ctx, beta, u)
    if np.ndim(s) == 1:
        return lambda_max(ctx.weighted_gram(s))
    return lambda_max_batch(ctx.weighted_gram(s))


def mc_expected_spectral(ctx: SpectralContext, beta, reps: int = 512, seed: int = 0):
    """Monte Carlo mean and standard error of spectral_stat over U.

    The same uniforms are used for every beta given the seed (common random
    numbers across candidates). ``beta`` may be a stack (k, p)."""
    if reps < 2:
        raise ValueError("reps must be >= 2")
    u = draw_uniforms(RandomStream(seed, 0), (reps, ctx.n))
    beta = np.asarray(beta, float)
    if beta.ndim == 1:
        vals = spectral_stat(ctx, np.broadcast_to(beta, (reps, ctx.p)), u)
        return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(reps))
    vals = np.stack([spectral_stat(ctx, np.broadcast_to(b, (reps, ctx.p)), u) for b in beta])
    return vals.mean(axis=1), vals.std(axis=1, ddof=1) / math.sqrt(reps)


def lambda_diag(ctx: SpectralContext, beta):
    """Diagonal of Lambda(beta).

    For y=1 the entry is 1 - [mu R + R^2] with R = phi(mu)/Phi(mu), i.e. the
    variance of N(0,1) truncated to (-inf, mu], which is xi(mu); for y=0 the
    bracket has -mu and 1 - Phi, giving xi(-mu).
    """
    return xi_fn(ctx.signed_mu(beta))


def expected_s_diag(ctx: SpectralContext, beta):
    """Diagonal of E S(beta, U)."""
    return xi_fn(ctx.signed_mu(beta))


def gamma_hat(ctx: SpectralContext, beta):
    """lambda_max(Sigma^{-1/2} X^T E S(beta, U) X Sigma^{-1/2})."""
    w = expected_s_diag(ctx, beta)
    if np.ndim(w) == 1:
        return lambda_max(ctx.weighted_gram(w))
    return lambda_max_batch(ctx.weighted_gram(w))


def hoeffding_sigma(ctx: SpectralContext) -> float:
    """sqrt(lambda_max(sum_i (w_i w_i^T)^2)) with w_i the whitened rows."""
    W = ctx.whitened_rows
    lev = np.sum(W * W, axis=1)
    return math.sqrt(max(lambda_max(ctx.weighted_gram(lev)), 0.0))


def shrinkage_bound(ctx: SpectralContext) -> float:
    """lambda_max(X Sigma^{-1} X^T); certified cap on every E S-weighted gram."""
    if ctx.data.flat_prior:
        raise InfeasibleError("shrinkage bound needs a positive definite prior precision Q")
    W = ctx.whitened_rows
    return lambda_max(W.T @ W)


def expected_spectral_cap(ctx: SpectralContext, beta) -> float:
    """gamma_hat(beta) + sigma sqrt(2 log p), an upper bound on the expected spectral statistic."""
    return gamma_hat(ctx, beta) + hoeffding_sigma(ctx) * math.sqrt(2.0 * math.log(ctx.p))


# ---------------------------------------------------------------------------
# Sup searches
# ---------------------------------------------------------------------------


@dataclass
class SupResult:
    value: float
    argmax: np.ndarray | None
    provenance: Provenance = Provenance.HEURISTIC_SUP
    ray_limit: bool = False


def _ray_limit_gamma(ctx, dirs_beta):
    """Limit of gamma_hat along beta = t * alpha, t -> inf.

    Rows with (2y-1) x_i^T alpha > 0 get weight 1, negative ones weight 0,
    and rows orthogonal to alpha keep xi(0)."""
    m = ctx.signed_mu(dirs_beta)
    w = np.where(m > 0, 1.0, np.where(m < 0, 0.0, float(xi_fn(0.0))))
    return lambda_max_batch(ctx.weighted_gram(w))


def sup_gamma_hat(ctx: SpectralContext, cfg: SearchConfig | None = None) -> SupResult:
    """Best found sup over beta of gamma_hat(beta).

    Candidates: beta = 0, directions x magnitude ladder, ray limits, then a
    local random search started from the best candidate of every dyadic
    prefix of the direction list (so doubling the budget only adds work).
    """
    cfg = cfg or SearchConfig()
    dirs = _search_directions(ctx, cfg.directions, cfg.seed) @ ctx.sigma_inv_sqrt
    ladder = np.asarray(cfg.ladder, dtype=float)
    best_val = float(gamma_hat(ctx, np.zeros(ctx.p)))
    best_arg = np.zeros(ctx.p)
    ray = False
    cands = (dirs[:, None, :] * ladder[None, :, None]).reshape(-1, ctx.p)
    vals = gamma_hat(ctx, cands).reshape(cfg.directions, ladder.size)
    ray_vals = _ray_limit_gamma(ctx, dirs)
    per_dir = vals.max(axis=1)
    per_arg = vals.argmax(axis=1)
    # prefix maxima used as refinement starts
    k = 1
    starts = []
    while True:
        kk = min(k, cfg.directions)
        j = int(np.argmax(per_dir[:kk]))
        starts.append(dirs[j] * ladder[per_arg[j]])
        if kk == cfg.directions:
            break
        k *= 2
    j = int(np.argmax(per_dir))
    if per_dir[j] > best_val:
        best_val, best_arg = float(per_dir[j]), dirs[j] * ladder[per_arg[j]]
    jr = int(np.argmax(ray_vals))
    if ray_vals[jr] > best_val:
        best_val, best_arg, ray = float(ray_vals[jr]), dirs[jr], True
    st = RandomStream(cfg.seed, 1)
    for s0 in starts:
        x, fx = s0.copy(), float(gamma_hat(ctx, s0))
        scale = 0.25 * max(1.0, float(np.linalg.norm(s0)))
        for _ in range(cfg.refine_steps):
            prop = x + scale * (draw_normals(st, ctx.p) @ ctx.sigma_inv_sqrt)
            fp = float(gamma_hat(ctx, prop))
            if fp > fx:
                x, fx = prop, fp
            else:
                scale *= 0.8
        if fx > best_val:
            best_val, best_arg, ray = fx, x, False
    return SupResult(value=best_val, argmax=best_arg, ray_limit=ray)


def rho_hat_2(ctx: SpectralContext, cfg: SearchConfig | None = None) -> SupResult:
    """sup_beta gamma_hat(beta) + sigma sqrt(2 log p) (heuristic sup)."""
    sup = sup_gamma_hat(ctx, cfg)
    val = sup.value + hoeffding_sigma(ctx) * math.sqrt(2.0 * math.log(ctx.p))
    return SupResult(value=val, argmax=sup.argmax, ray_limit=sup.ray_limit)


def drift_ratio(ctx: SpectralContext, mode_beta, tau, e):
    """|Sigma^-1 X^T Lambda(b) X alpha|^2 / |alpha|^2 in Sigma-norms.

    alpha = Sigma^{-1/2} e with |e| = 1 and b = mode + tau alpha; the ratio
    equals |W^T Lambda(b) W e|^2.
    """
    e = np.asarray(e, float)
    e = e / np.linalg.norm(e, axis=-1, keepdims=True)
    alpha = e @ ctx.sigma_inv_sqrt
    b = np.asarray(mode_beta, float) + np.asarray(tau, float)[..., None] * alpha
    lam = lambda_diag(ctx, b)
    W = ctx.whitened_rows
    v = np.einsum("...i,ij,...i->...j", lam, W, e @ W.T)
    return np.sum(v * v, axis=-1)


def drift_lambda_estimate(ctx: SpectralContext, mode_beta, cfg: SearchConfig | None = None) -> SupResult:
    """Best found value of the drift sup over t in (0,1) and alpha != 0.

    Only t |alpha| matters for the evaluation point, so the search runs over
    Sigma-unit directions and a ladder of offsets tau >= 0."""
    cfg = cfg or SearchConfig()
    E = _search_directions(ctx, cfg.directions, cfg.seed + 1)
    taus = np.concatenate([[0.0], np.asarray(cfg.ladder, float)])
    vals = drift_ratio(ctx, mode_beta, taus[None, :], E[:, None, :])
    i, j = np.unravel_index(int(np.argmax(vals)), vals.shape)
    best = float(vals[i, j])
    x_e, x_tau = E[i].copy(), float(taus[j])
    st = RandomStream(cfg.seed, 2)
    scale = 0.3
    for _ in range(cfg.refine_steps):
        pe = x_e + scale * draw_normals(st, ctx.p)
        pe /= np.linalg.norm(pe)
        pt = abs(x_tau * math.exp(scale * float(draw_normals(st, 1)[0])))
        f = float(drift_ratio(ctx, mode_beta, np.array(pt), pe))
        if f > best:
            best, x_e, x_tau = f, pe, pt
        else:
            scale *= 0.9
    alpha = (x_e @ ctx.sigma_inv_sqrt) * x_tau
    return SupResult(value=best, argmax=alpha)


def posterior_mode(ctx: SpectralContext, tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Damped Newton ascent on the log posterior."""
    d = ctx.data
    X, Q, v = d.X, d.Q, d.v
    kappa = ctx._sign

    def logpost(b):
        z = kappa * (X @ b)
        return float(np.sum(log_ndtr(z)) - 0.5 * (b - v) @ Q @ (b - v))

    b = np.zeros(d.p) if d.flat_prior else v.copy()
    sinv = ctx.sigma_inv_sqrt @ ctx.sigma_inv_sqrt
    for it in range(max_iter):
        z = kappa * (X @ b)
        r = np.exp(-log_mills_phi(z))  # phi(z)/Phi(z)
        grad = X.T @ (kappa * r) - Q @ (b - v)
        gnorm = math.sqrt(max(grad @ sinv @ grad, 0.0))
        if gnorm <= tol:
            return b
        w = r * (z + r)
        H = (X.T * w) @ X + Q
        step = np.linalg.solve(H, grad)
        f0 = logpost(b)
        t = 1.0
        while t > 1e-12:
            nb = b + t * step
            if logpost(nb) >= f0 - 1e-12 * abs(f0):
                break
            t *= 0.5
        b = nb
    raise RuntimeError(f"posterior mode did not converge; last iterate {b.tolist()}")


def V_ac(ctx: SpectralContext, mode_beta, beta) -> float:
    return sigma_norm(np.asarray(beta, float) - mode_beta, ctx.sigma) ** 2 / ctx.p


def ball_gamma_estimate(ctx: SpectralContext, mode_beta, d: float, reps: int = 512,
                        cfg: SearchConfig | None = None, lambda_drift: float | None = None,
                        points: int = 64):
    """Best found sup of E lambda_max(...) over the ball where V(beta) <= d.

    V = |beta - mode|_Sigma^2 / p, so the ball has Sigma-radius sqrt(p d).
    80% of the candidates sit on the boundary, the rest inside.
    Returns (value, standard error at the maximiser, provenance)."""
    if lambda_drift is not None and not d > 4.0 / (1.0 - lambda_drift):
        raise InfeasibleError("d must exceed 4/(1-lambda)")
    cfg = cfg or SearchConfig()
    rad = math.sqrt(ctx.p * d)
    E = _search_directions(ctx, points, cfg.seed + 3)
    n_in = points // 5
    radii = np.full(points, rad)
    if n_in:
        uu = draw_uniforms(RandomStream(cfg.seed, 4), n_in)
        radii[:n_in] = rad * uu ** (1.0 / ctx.p)
    cands = mode_beta + (E * radii[:, None]) @ ctx.sigma_inv_sqrt
    cands = np.vstack([mode_beta[None, :], cands])
    est, se = mc_expected_spectral(ctx, cands, reps, cfg.seed)
    k = int(np.argmax(est))
    return float(est[k]), float(se[k]), Provenance.HEURISTIC_SUP


def mc_c_beta(ctx: SpectralContext, beta, reps: int = 512, seed: int = 0):
    """E |beta - f(beta)|_Sigma, by Monte Carlo (mean, se)."""
    ch = ctx.chain
    streams = [RandomStream(seed, i) for i in range(reps)]
    th = ch.stack_theta([ch.draw_theta(s) for s in streams])
    b = np.broadcast_to(np.asarray(beta, float), (reps, 1, ctx.p))
    nxt = ch.apply(b, th)
    dist = ch.distance(nxt[:, 0], b[:, 0])
    return float(dist.mean()), float(dist.std(ddof=1) / math.sqrt(reps))


# ---------------------------------------------------------------------------
# Certificate
# ---------------------------------------------------------------------------


@dataclass
class AcConfig:
    search: SearchConfig = field(default_factory=SearchConfig)
    mc_reps: int = 512
    d_factors: tuple = (1.05, 1.25, 1.5, 2.0, 3.0, 5.0, 10.0, 20.0)
    a_points: int = 256
    start: np.ndarray | None = None  # starting state for the bound curve
    m_max: int = 50
    ball_points: int = 64


@dataclass
class AcCertificate:
    lambda_drift: float
    gamma_ball: float
    gamma_ball_se: float
    d: float
    a: float
    rho0: float
    interval: tuple
    mode: np.ndarray
    prefactor: float
    V_start: float
    sigma: float
    rho_hat_2: float
    shrinkage_bound: float | None
    provenance: dict
    instance_hash: str
    w_bound: GeomBound
    tv_bound: GeomBound
    w_curve: np.ndarray
    tv_curve: np.ndarray
    tv_clamped: bool
    classical: dict | None = None

    @property
    def rho1_bound(self) -> float:
        return self.shrinkage_bound if self.shrinkage_bound is not None else self.rho_hat_2

    def report(self) -> dict:
        return {
            "instance_hash": self.instance_hash,
            "lambda": self.lambda_drift,
            "gamma": self.gamma_ball,
            "gamma_se": self.gamma_ball_se,
            "d": self.d,
            "a": self.a,
            "a_interval": list(self.interval),
            "rho0": self.rho0,
            "rho1_bound": self.rho1_bound,
            "rho2": self.rho_hat_2,
            "shrinkage_bound": self.shrinkage_bound,
            "sigma": self.sigma,
            "mode": self.mode.tolist(),
            "V_start": self.V_start,
            "prefactor": self.prefactor,
            "provenance": self.provenance,
            "w_bound": self.w_bound.to_json(),
            "tv_bound": self.tv_bound.to_json(),
            "tv_clamped": self.tv_clamped,
            "classical": self.classical,
        }


def ac_certificate(ctx: SpectralContext, cfg: AcConfig | None = None) -> AcCertificate:
    """Assemble the W_psi and TV bounds with L = 2, c = 2p, gamma0 = 1."""
    cfg = cfg or AcConfig()
    mode = posterior_mode(ctx)
    lam = drift_lambda_estimate(ctx, mode, cfg.search)
    if not lam.value < 1.0:
        raise InfeasibleError(f"drift lambda estimate {lam.value} is not < 1")
    base = 4.0 / (1.0 - lam.value)
    best = None
    for f in cfg.d_factors:
        d = base * f
        g, gse, _ = ball_gamma_estimate(ctx, mode, d, cfg.mc_reps, cfg.search,
                                        lam.value, cfg.ball_points)
        if not g < 1.0:
            continue
        cert = ContractionCertificate(gamma=g, gamma0=AC_GAMMA0, lambda_=lam.value,
                                      L=AC_L, d=d, c=2.0 * ctx.p)
        try:
            rc = best_general_rate(cert, cfg.a_points)
        except InfeasibleError:
            continue
        if best is None or rc.rate < best[1].rate:
            best = (cert, rc, gse)
    if best is None:
        raise InfeasibleError("no small-set level gives a nonempty a-interval")
    cert, rc, gse = best
    start = mode if cfg.start is None else np.asarray(cfg.start, float)
    V0 = V_ac(ctx, mode, start)
    pref = general_prefactor(cert, V0, rc.rate)
    w_curve = bound_curve(pref, rc.rate, cfg.m_max)
    tv = madras_tv_from_w(2.0 * TV_CONST, w_curve)
    prov = {
        "lambda": Provenance.HEURISTIC_SUP.value,
        "gamma": Provenance.HEURISTIC_SUP.value,
        "mode": Provenance.ANALYTIC.value,
        "L": Provenance.ANALYTIC.value,
        "c": Provenance.ANALYTIC.value,
        "gamma0": Provenance.ANALYTIC.value,
    }
    overall = weakest(*prov.values())
    params = {"c": cert.c, "lambda": cert.lambda_, "L": cert.L, "a": rc.a,
              "rho_a": rc.rate, "V_start": V0, "prefactor": pref}
    wb = GeomBound(rate=rc.rate, distance=Distance.W_PSI, provenance=overall,
                   prefactor_params=params, a=rc.a, interval=rc.interval)
    tb = GeomBound(rate=rc.rate, distance=Distance.TV, provenance=overall,
                   prefactor_params={**params, "tv_const": TV_CONST}, a=rc.a,
                   interval=rc.interval)
    sig = hoeffding_sigma(ctx)
    r2 = rho_hat_2(ctx, cfg.search).value
    shr = None if ctx.data.flat_prior else shrinkage_bound(ctx)
    classical = None
    rho1 = shr if shr is not None else r2
    if rho1 < 1.0:
        cb, cse = mc_c_beta(ctx, start, cfg.mc_reps, cfg.search.seed)
        classical = {
            "rate": rho1,
            "c_beta": cb,
            "c_beta_se": cse,
            "prefactor": cb / (1.0 - rho1),
            "provenance": (Provenance.MONTE_CARLO if shr is not None else Provenance.HEURISTIC_SUP).value,
        }
    return AcCertificate(
        lambda_drift=lam.value, gamma_ball=cert.gamma, gamma_ball_se=gse, d=cert.d, a=rc.a,
        rho0=rc.rate, interval=rc.interval, mode=mode, prefactor=pref, V_start=V0,
        sigma=sig, rho_hat_2=r2, shrinkage_bound=shr, provenance=prov,
        instance_hash=ctx.instance_hash(), w_bound=wb, tv_bound=tb, w_curve=w_curve,
        tv_curve=tv.raw, tv_clamped=tv.clamped, classical=classical,
    )


def empirical_w_curve(ctx: SpectralContext, start, m: int, reps: int, burnin: int,
                      seed: int, rate_hint=None, threads: int = 1):
    """Coupled distance-to-stationarity estimate (burn-in proxy, biased upward)."""
    mode = posterior_mode(ctx)
    return estimate_w_to_pi(ctx.chain, start, m, reps, burnin, seed, threads=threads,
                            rate_hint=rate_hint, start=mode)
