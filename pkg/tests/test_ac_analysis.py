import math

import numpy as np
import pytest
from scipy import optimize, stats

from conftest import random_probit
from mcbounds.ac_analysis import (
    TV_CONST,
    AcConfig,
    SearchConfig,
    SpectralContext,
    ac_certificate,
    ball_gamma_estimate,
    drift_lambda_estimate,
    empirical_w_curve,
    gamma_hat,
    hoeffding_sigma,
    lambda_diag,
    expected_spectral_cap,
    mc_expected_spectral,
    posterior_mode,
    rho_hat_2,
    s_diag,
    shrinkage_bound,
    spectral_stat,
)
from mcbounds.chains import ProbitData, ac_path_derivative
from mcbounds.dm_bounds import InfeasibleError
from mcbounds.matrix_kernel import sigma_norm
from mcbounds.stats_kernel import RandomStream, s_fn, xi_fn

XI_0 = 1 - 2 / math.pi
GAMMA_HAT_0 = 0.1816901138162093  # xi(0)/2
MODE_1D = 0.50605  # grid oracle, 5 digits


def scalar_ctx():
    return SpectralContext(ProbitData.make(np.ones((1, 1)), np.array([1]), np.eye(1), np.zeros(1)))


def shrink_ctx():
    return SpectralContext(ProbitData.make(np.eye(2), np.array([1, 0]), 9 * np.eye(2), np.zeros(2)))


def test_scalar_spectral_stat():
    ctx = scalar_ctx()
    r = np.random.default_rng(1)
    for _ in range(50):
        b, u = r.normal(0, 3, 1), r.uniform(0.01, 0.99, 1)
        val = spectral_stat(ctx, b, u)
        assert val == pytest.approx(0.5 * s_fn(1 - u[0], b[0]), rel=1e-10)
        assert val < 0.5


def test_s_diag_below_u_for_negative_mu():
    ctx = SpectralContext(ProbitData.make(np.ones((1, 1)), np.array([1]), None, None))
    u = np.linspace(0.01, 0.99, 99)
    s = np.array([s_diag(ctx, np.array([-10.0]), np.array([ui]))[0] for ui in u])
    assert np.all(s <= u + 1e-15) and np.all(s > 0)


def test_spectral_stat_below_one(rng):
    # flat prior with n = p makes the cap exactly 1, so extreme draws land
    # within rounding of 1; proper priors keep a margin below the cap
    worst = 0.0
    for k in range(200):
        n, p = int(rng.integers(1, 30)), int(rng.integers(1, 6))
        prior = "flat" if k % 2 else "gauss"
        if prior == "flat" and n < p:
            n = p
        ctx = SpectralContext(random_probit(rng, n, p, prior))
        beta = rng.normal(0, 3, (10, p))
        u = rng.uniform(size=(10, n))
        u = np.clip(u, 1e-12, 1 - 1e-12)
        vals = spectral_stat(ctx, beta, u)
        worst = max(worst, float(np.max(vals)))
        if prior == "gauss":
            assert np.all(vals < shrinkage_bound(ctx) + 1e-12)
            assert np.all(vals < 1 - 1e-12)
    assert worst < 1 + 1e-12


def test_spectral_stat_cap():
    ctx = shrink_ctx()
    W = ctx.whitened_rows
    assert float(np.linalg.eigvalsh(ctx.weighted_gram(np.ones(2)))[-1]) == pytest.approx(
        float(np.linalg.eigvalsh(W @ W.T)[-1]))
    u = np.full(2, 0.5)
    assert spectral_stat(ctx, np.array([50.0, -50.0]), u) < shrinkage_bound(ctx)


def test_mc_expected_scalar():
    ctx = scalar_ctx()
    for b in (-1.0, 0.0, 2.0):
        est, se = mc_expected_spectral(ctx, np.array([b]), reps=4000, seed=3)
        assert abs(est - xi_fn(b) / 2) <= 4 * se
    a = mc_expected_spectral(ctx, np.zeros(1), reps=64, seed=9)
    assert a == mc_expected_spectral(ctx, np.zeros(1), reps=64, seed=9)
    with pytest.raises(ValueError):
        mc_expected_spectral(ctx, np.zeros(1), reps=1)


def test_expected_spectral_cap_sample(rng):
    for _ in range(20):
        n, p = int(rng.integers(2, 50)), int(rng.integers(2, 8))
        ctx = SpectralContext(random_probit(rng, max(n, p), p, "gauss"))
        beta = rng.normal(0, 1, p)
        est, se = mc_expected_spectral(ctx, beta, reps=256, seed=1)
        assert 0 < est < 1
        assert est <= expected_spectral_cap(ctx, beta) + 3 * se


def test_path_derivative_consequence(rng):
    data = random_probit(rng, 15, 3, "gauss")
    ctx = SpectralContext(data)
    beta, alpha, t = rng.normal(size=3), rng.normal(size=3), 0.4
    norms = np.array([sigma_norm(ac_path_derivative(ctx.chain, beta, alpha, t, RandomStream(5, i)), ctx.sigma)
                      for i in range(2000)])
    est, se = mc_expected_spectral(ctx, beta + t * alpha, reps=2000, seed=6)
    lhs_se = norms.std(ddof=1) / math.sqrt(norms.size)
    assert norms.mean() <= est * sigma_norm(alpha, ctx.sigma) + 3 * math.hypot(se * sigma_norm(alpha, ctx.sigma), lhs_se)


def test_gamma_hat_scalar_and_permutation(rng):
    assert gamma_hat(scalar_ctx(), np.zeros(1)) == pytest.approx(GAMMA_HAT_0, abs=1e-12)
    assert GAMMA_HAT_0 == pytest.approx(XI_0 / 2, abs=1e-15)
    d = random_probit(rng, 12, 3, "gauss")
    perm = rng.permutation(12)
    d2 = ProbitData.make(d.X[perm], d.y[perm], d.Q, d.v)
    b = rng.normal(size=3)
    assert gamma_hat(SpectralContext(d2), b) == pytest.approx(gamma_hat(SpectralContext(d), b), rel=1e-12)


def test_hoeffding_sigma():
    assert hoeffding_sigma(scalar_ctx()) == pytest.approx(0.5, abs=1e-14)
    ctx = SpectralContext(ProbitData.make(np.eye(4), np.array([1, 0, 1, 0]), None, None))
    assert hoeffding_sigma(ctx) == pytest.approx(1.0, abs=1e-12)
    for r in (2, 5, 9):
        X = np.kron(np.eye(3), np.ones((r, 1)))
        ctx = SpectralContext(ProbitData.make(X, np.tile([0, 1], 3 * r)[: 3 * r], None, None))
        assert hoeffding_sigma(ctx) == pytest.approx(1 / math.sqrt(r), rel=1e-12)


def test_rho_hat_2_scalar_ray_limit():
    res = rho_hat_2(scalar_ctx(), SearchConfig(directions=8))
    # xi increases to 1, so gamma_hat climbs to 1/2 along the positive ray
    assert res.value == pytest.approx(0.5, abs=1e-3)
    assert res.provenance.value == "heuristic_sup"


def test_rho_hat_2_shrinkage_and_budget(rng):
    ctx = shrink_ctx()
    cap = shrinkage_bound(ctx) + hoeffding_sigma(ctx) * math.sqrt(2 * math.log(2))
    assert rho_hat_2(ctx).value <= cap + 1e-12
    ctx = SpectralContext(random_probit(rng, 20, 3, "gauss"))
    vals = [rho_hat_2(ctx, SearchConfig(directions=k, refine_steps=20)).value for k in (4, 8, 16, 32)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_shrinkage_bound():
    ctx = shrink_ctx()
    assert shrinkage_bound(ctx) == pytest.approx(0.1, abs=1e-14)
    r = np.random.default_rng(2)
    X, Q = r.normal(size=(7, 3)), np.diag([1.0, 2.0, 4.0])
    ctx = SpectralContext(ProbitData.make(X, r.integers(0, 2, 7), Q, None))
    Sih = ctx.sigma_inv_sqrt
    assert shrinkage_bound(ctx) == pytest.approx(np.linalg.eigvalsh(Sih @ X.T @ X @ Sih)[-1], abs=1e-10)
    dup = SpectralContext(ProbitData.make(np.vstack([X, X]), np.concatenate([ctx.data.y] * 2), 2 * Q, None))
    assert shrinkage_bound(dup) == pytest.approx(shrinkage_bound(ctx), abs=1e-12)
    with pytest.raises(InfeasibleError):
        shrinkage_bound(SpectralContext(ProbitData.make(np.eye(2), np.array([1, 0]), None, None)))


def test_lambda_diag(rng):
    ctx = SpectralContext(ProbitData.make(np.eye(2), np.array([1, 0]), None, None))
    assert lambda_diag(ctx, np.zeros(2)) == pytest.approx([XI_0, XI_0], abs=1e-14)
    d = random_probit(rng, 10, 2, "gauss")
    b = rng.normal(size=2)
    flip = ProbitData.make(d.X, 1 - d.y, d.Q, d.v)
    assert lambda_diag(SpectralContext(flip), -b) == pytest.approx(lambda_diag(SpectralContext(d), b), rel=1e-12)
    # variance of the latent truncated normal
    ctx = SpectralContext(ProbitData.make(np.ones((1, 1)), np.array([1]), None, None))
    for mu in (-1.5, 0.3):
        z = stats.truncnorm.rvs(-mu, np.inf, size=200_000, random_state=11)
        var = z.var()
        se = math.sqrt(np.mean((z - z.mean()) ** 4) - var**2) / math.sqrt(z.size)
        assert abs(lambda_diag(ctx, np.array([mu]))[0] - var) <= 3 * se
        assert 0 < lambda_diag(ctx, np.array([mu]))[0] < 1


def test_drift_lambda_scalar_and_cap(rng):
    ctx = scalar_ctx()
    mode = posterior_mode(ctx)
    est = drift_lambda_estimate(ctx, mode, SearchConfig(directions=8)).value
    grid = np.concatenate([-np.geomspace(1e-3, 1e6, 4000), np.geomspace(1e-3, 1e6, 4000)])
    scan = np.max((xi_fn(mode[0] + grid) / 2) ** 2)
    assert est == pytest.approx(scan, abs=1e-3)
    ctx = SpectralContext(random_probit(rng, 15, 3, "gauss"))
    mode = posterior_mode(ctx)
    vals = [drift_lambda_estimate(ctx, mode, SearchConfig(directions=k, refine_steps=0)).value for k in (4, 8, 16)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert vals[-1] <= shrinkage_bound(ctx) ** 2 + 1e-12
    assert vals[-1] < 1


def test_posterior_mode():
    X = np.array([[1.0, 0.0], [1.0, 0.0], [0.0, 1.0], [0.0, 1.0]])
    ctx = SpectralContext(ProbitData.make(X, np.array([1, 0, 1, 0]), np.eye(2), np.zeros(2)))
    assert np.allclose(posterior_mode(ctx), 0.0, atol=1e-12)
    ctx = scalar_ctx()
    m = posterior_mode(ctx)[0]
    res = optimize.minimize_scalar(lambda b: -(stats.norm.logcdf(b) - 0.5 * b * b),
                                   bounds=(-5, 5), method="bounded", options={"xatol": 1e-12})
    assert m == pytest.approx(res.x, abs=1e-6)
    assert m == pytest.approx(MODE_1D, abs=1e-5)
    grad = stats.norm.pdf(m) / stats.norm.cdf(m) - m
    assert abs(grad) < 1e-8


def test_ball_gamma():
    ctx = shrink_ctx()
    mode = posterior_mode(ctx)
    g0, se0, prov = ball_gamma_estimate(ctx, mode, 1e-14, reps=256)
    est, _ = mc_expected_spectral(ctx, mode, 256, 0)
    assert g0 == pytest.approx(est, abs=1e-6) and prov.value == "heuristic_sup"
    gs = [ball_gamma_estimate(ctx, mode, d, reps=256)[0] for d in (0.5, 5.0, 50.0)]
    assert all(b >= a - 1e-3 for a, b in zip(gs, gs[1:]))
    g, se, _ = ball_gamma_estimate(ctx, mode, 50.0, reps=256)
    assert g <= shrinkage_bound(ctx) + 3 * se
    with pytest.raises(InfeasibleError):
        ball_gamma_estimate(ctx, mode, 4.0, lambda_drift=0.5)


def test_certificate_small_instance():
    r = np.random.default_rng(7)
    X = r.normal(size=(20, 2))
    y = (X @ np.array([1.0, -0.5]) + r.normal(size=20) > 0).astype(int)
    ctx = SpectralContext(ProbitData.make(X, y, np.eye(2), np.zeros(2)))
    cert = ac_certificate(ctx, AcConfig(search=SearchConfig(directions=16, refine_steps=20),
                                        mc_reps=256, m_max=20))
    assert cert.rho0 < 1
    assert cert.interval[0] < cert.a < cert.interval[1]
    assert cert.d > 4 / (1 - cert.lambda_drift)
    assert np.allclose(cert.tv_curve, TV_CONST * cert.w_curve[:-1], rtol=1e-14)
    rep = cert.report()
    assert rep["w_bound"]["provenance"] == "heuristic_sup"
    emp = empirical_w_curve(ctx, cert.mode + 2.0, 20, 400, 100, seed=1)
    start_cert = ac_certificate(ctx, AcConfig(search=SearchConfig(directions=16, refine_steps=20),
                                              mc_reps=256, m_max=20, start=cert.mode + 2.0))
    assert np.all(emp.curve <= start_cert.w_curve + 3 * emp.se)
