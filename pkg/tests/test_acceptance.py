"""Acceptance checks, one per criterion.

Each check prints a single PASS/FAIL line with its measured values and
runtime. Run under pytest, or directly with ``python tests/test_acceptance.py``.
Tolerances are fixed here and are not tuned to the results.
"""

import json
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

sys.path.insert(0, str(Path(__file__).parent))

from conftest import random_probit  # noqa: E402
from oracles import ac_gibbs_reference, re_gibbs_reference  # noqa: E402

from mcbounds.ac_analysis import (  # noqa: E402
    TV_CONST,
    AcConfig,
    SearchConfig,
    SpectralContext,
    ac_certificate,
    empirical_w_curve,
    expected_spectral_cap,
    mc_expected_spectral,
    shrinkage_bound,
    spectral_stat,
)
from mcbounds.chains import (  # noqa: E402
    AcChain,
    ArChain,
    ProbitData,
    REData,
    ReChain,
    ac_map,
    ac_path_derivative,
    estimate_w_to_pi,
    re_map,
    simulate_coupled,
)
from mcbounds.datagen_io import GenSpec, gen_probit_sequence, gen_re_data  # noqa: E402
from mcbounds.dm_bounds import ar_best_rate, ar_gamma_lower, ar_multistep_bound  # noqa: E402
from mcbounds.experiments import main as cli  # noqa: E402
from mcbounds.re_analysis import (  # noqa: E402
    V_re,
    re_contraction,
    re_drift_constants,
    re_rate,
    re_tv_lipschitz,
)
from mcbounds.stats_kernel import RandomStream, s_fn, tn_cdf, tn_inv_cdf, xi_fn  # noqa: E402

LIMITS = {1: 30, 2: 5, 3: 1, 4: 60, 5: 300, 6: 180, 7: 120, 8: 300, 9: 180, 10: 60, 11: 900, 12: 600}
TITLES = {
    1: "AR exactness",
    2: "drift-and-minorization degradation",
    3: "multi-step rescue",
    4: "special-function properties",
    5: "spectral inequalities",
    6: "derivative and mapping correctness",
    7: "shrinkage certification",
    8: "A&C full certificate",
    9: "random-effects constants",
    10: "random-effects regime",
    11: "A&C regime scans",
    12: "CLI determinism",
}


def _line(k, ok, detail, elapsed):
    in_time = elapsed < LIMITS[k]
    status = "PASS" if ok and in_time else "FAIL"
    timing = f"{elapsed:.1f}s of {LIMITS[k]}s"
    if not in_time:
        timing += " (too slow)"
    return status, f"criterion {k:2d} {status}  {TITLES[k]}: {detail} [{timing}]"


# ---------------------------------------------------------------------------
# 1. AR exactness
# ---------------------------------------------------------------------------

def crit_1():
    worst, det = 0.0, True
    for p in (1, 10, 100):
        x0, y0 = np.linspace(-1.0, 2.0, p), np.zeros(p)
        res = simulate_coupled(ArChain(p), x0, y0, 30, 256, 11)
        exact = np.linalg.norm(x0 - y0) * 0.5 ** np.arange(31)
        worst = max(worst, float(np.max(np.abs(res.curve - exact))))
        again = simulate_coupled(ArChain(p), x0, y0, 30, 256, 11, threads=2)
        det &= res.curve.tobytes() == again.curve.tobytes()
    emp = estimate_w_to_pi(ArChain(10), np.full(10, 3.0), 12, 10_000, 60, 5)
    rate = emp.fitted_rate()
    ok = worst <= 1e-12 and det and abs(rate - 0.5) <= 0.05
    return ok, f"max |curve - 2^-m d0| = {worst:.1e} (tol 1e-12), bit-identical={det}, fitted stationarity rate {rate:.4f} (0.5 +- 0.05)"


# ---------------------------------------------------------------------------
# 2. drift-and-minorization degradation
# ---------------------------------------------------------------------------

def crit_2():
    ps = np.array([5, 10, 20, 40])
    g = np.array([ar_gamma_lower(int(p)) for p in ps])
    y = np.log1p(-g)
    slope, icpt = np.polyfit(ps, y, 1)
    r2 = 1 - np.sum((y - slope * ps - icpt) ** 2) / np.sum((y - y.mean()) ** 2)
    rho = np.array([ar_best_rate(int(p)).rate for p in ps])
    ok = bool(np.all(np.diff(g) > 0) and r2 > 0.99 and slope < 0 and np.all(np.diff(rho) > 0))
    return ok, (f"gamma_lower {np.round(g, 6).tolist()}, log(1-gamma) slope {slope:.4f} R^2 {r2:.5f} (> 0.99), "
                f"best rate {[f'{v:.6f}' for v in rho]}")


# ---------------------------------------------------------------------------
# 3. multi-step rescue
# ---------------------------------------------------------------------------

def crit_3():
    rate = ar_multistep_bound(30).per_step_rate
    limit = 4.0 ** (-1.0 / 6.0)
    ok = abs(rate - limit) <= 0.02
    return ok, f"per-step rate at p=30 is {rate:.5f}, limit {limit:.5f}, gap {abs(rate - limit):.4f} (tol 0.02)"


# ---------------------------------------------------------------------------
# 4. special-function properties
# ---------------------------------------------------------------------------

def crit_4():
    r = np.random.default_rng(4)
    u = r.uniform(size=100_000)
    u = np.clip(u, 1e-300, None)
    mu = r.uniform(-40, 40, 100_000)
    s = s_fn(u, mu)
    in_range = bool(np.all((s > 0) & (s < 1)))
    neg = mu <= 0
    s_below = bool(np.all(s[neg] <= 1 - u[neg]))
    grid = np.linspace(-8, 8, 33)
    quad_err = max(abs(integrate.quad(lambda t: float(s_fn(t, m)), 0, 1, epsabs=1e-13, epsrel=1e-12, limit=200)[0]
                       - float(xi_fn(m))) for m in grid)
    half = bool(np.all(xi_fn(-np.geomspace(1e-6, 1e3, 500)) <= 0.5) and xi_fn(0.0) <= 0.5)
    uu = r.uniform(0.001, 0.999, 100_000)
    mm = r.uniform(-8, 8, 100_000)
    rt = max(float(np.max(np.abs(tn_cdf(tn_inv_cdf(uu, mm, side), mm, side) - uu))) for side in (0, 1))
    ok = in_range and s_below and quad_err <= 1e-8 and half and rt <= 1e-9
    return ok, (f"s in (0,1): {in_range}, s <= 1-u for mu <= 0: {s_below}, |xi - quad| max {quad_err:.1e} (1e-8), "
                f"xi <= 1/2 for mu <= 0: {half}, CDF round trip {rt:.1e} (1e-9)")


# ---------------------------------------------------------------------------
# 5. spectral inequalities
# ---------------------------------------------------------------------------

def crit_5():
    r = np.random.default_rng(5)
    worst, draws, flat = 0.0, 0, 0
    for k in range(1000):
        p = int(r.integers(1, 7))
        n = int(r.integers(p, 40))
        prior = "flat" if k % 2 == 0 else "gauss"
        flat += prior == "flat"
        ctx = SpectralContext(random_probit(r, n, p, prior))
        beta = r.normal(0, 2, (10, p))
        u = np.clip(r.uniform(size=(10, n)), 2.0**-53, 1 - 2.0**-53)
        worst = max(worst, float(np.max(spectral_stat(ctx, beta, u))))
        draws += 10
    viol, margin = 0, math.inf
    for _ in range(100):
        p = int(r.integers(1, 9))
        n = int(r.integers(max(p, 2), 51))
        ctx = SpectralContext(random_probit(r, n, p, "gauss" if r.random() < 0.5 else "flat"))
        beta = r.normal(0, 1.5, p)
        est, se = mc_expected_spectral(ctx, beta, reps=512, seed=int(r.integers(1 << 30)))
        gap = expected_spectral_cap(ctx, beta) + 3 * se - est
        margin = min(margin, gap)
        viol += gap < 0
    ok = worst < 1 + 1e-12 and viol == 0
    return ok, (f"max spectral stat {worst:.15f} over {draws} draws ({flat} flat-prior instances), "
                f"approximation inequality violations {viol}/100 (min slack {margin:.3e})")


# ---------------------------------------------------------------------------
# 6. derivative and mapping correctness
# ---------------------------------------------------------------------------

def crit_6():
    r = np.random.default_rng(6)
    worst = 0.0
    for i in range(100):
        p = int(r.integers(1, 5))
        d = random_probit(r, int(r.integers(p, 10)), p, "gauss" if i % 2 else "flat")
        ch = AcChain(d)
        beta, alpha = r.standard_normal(d.p), r.standard_normal(d.p)
        h = 1e-5
        f = lambda t: ac_map(ch, beta + t * alpha, RandomStream(60, i))
        fd = (f(0.5 + h) - f(0.5 - h)) / (2 * h)
        an = ac_path_derivative(ch, beta, alpha, 0.5, RandomStream(60, i))
        worst = max(worst, float(np.linalg.norm(fd - an) / max(np.linalg.norm(an), 1e-3)))
    pv = []
    for prior in ("flat", "gauss"):
        d = random_probit(np.random.default_rng(606), 8, 2, prior)
        ch, beta, n = AcChain(d), np.array([0.3, -0.2]), 10_000
        th = ch.stack_theta([ch.draw_theta(RandomStream(61, j)) for j in range(n)])
        ours = ch.apply(np.broadcast_to(beta, (n, 1, 2)), th)[:, 0]
        ref = ac_gibbs_reference(d.X, d.y, d.Q, d.v, beta, np.random.default_rng(62), n)
        pv += [stats.ks_2samp(ours[:, j], ref[:, j]).pvalue for j in range(2)]
    y = 1.0 + np.random.default_rng(63).standard_normal((5, 8))
    red = REData.from_observations(y)
    ch = ReChain(red)
    eta = np.concatenate([[0.5], 0.2 * np.ones(5)])
    ours = np.array([re_map(ch, eta, RandomStream(64, j)) for j in range(10_000)])
    ref = re_gibbs_reference(y, eta, np.random.default_rng(65), 10_000)
    pv += [stats.ks_2samp(ours[:, j], ref[:, j]).pvalue for j in range(6)]
    ok = worst <= 1e-5 and min(pv) > 0.01
    return ok, f"max relative FD error {worst:.1e} (1e-5) over 100 instances, min KS p-value {min(pv):.3f} over {len(pv)} margins (> 0.01)"


# ---------------------------------------------------------------------------
# 7. shrinkage certification
# ---------------------------------------------------------------------------

def _step_factor(ctx, x0, y0, reps, m, seed):
    res = simulate_coupled(ctx.chain, x0, y0, m, reps, seed, keep_paths=True)
    P = res.paths
    ratio = (P[:, 1:] / P[:, :-1]).reshape(-1)
    return float(ratio.mean()), float(ratio.std(ddof=1) / math.sqrt(ratio.size))


def crit_7():
    ctx = SpectralContext(ProbitData.make(np.eye(2), np.array([1, 0]), 9 * np.eye(2), np.zeros(2)))
    bound = shrinkage_bound(ctx)
    fac, se = _step_factor(ctx, np.array([3.0, -2.0]), np.array([-1.0, 1.5]), 1000, 10, 70)
    first = abs(bound - 0.1) <= 1e-12 and fac <= 0.1 + 3 * se
    r = np.random.default_rng(7)
    bad = 0
    for i in range(20):
        n, p = int(r.integers(2, 15)), int(r.integers(1, 5))
        X = r.normal(size=(n, p))
        Q = float(r.uniform(0.5, 10)) * np.eye(p)
        c = SpectralContext(ProbitData.make(X, r.integers(0, 2, n), Q, r.normal(size=p)))
        b = shrinkage_bound(c)
        f, s = _step_factor(c, r.normal(0, 3, p), r.normal(0, 3, p), 500, 4, 700 + i)
        bad += f > b + 3 * s
    ok = first and bad == 0
    return ok, (f"bound {bound:.12f} (0.1), empirical factor {fac:.5f} +- {se:.5f} over 10^4 coupled steps, "
                f"random instances dominated {20 - bad}/20")


# ---------------------------------------------------------------------------
# 8. A&C full certificate
# ---------------------------------------------------------------------------

def crit_8():
    details, ok = [], True
    for seed in (0, 1, 2):
        spec = GenSpec("shrinkage", p=2, n=20, k=2, kappa=1.0, seed=seed)
        ctx = SpectralContext(gen_probit_sequence(spec))
        start = np.array([2.0, -2.0])
        cert = ac_certificate(ctx, AcConfig(m_max=50, start=start))
        emp = empirical_w_curve(ctx, start, 50, 512, 200, seed=seed)
        dom = bool(np.all(emp.curve <= cert.w_curve))
        tv_exact = bool(np.all(cert.tv_curve == 0.5 * (2.0 * TV_CONST) * cert.w_curve[:-1]))
        ok &= cert.rho0 < 1 and dom and tv_exact
        details.append(f"seed {seed}: rho0 {cert.rho0:.4f}, dominates={dom}, tv=shifted W/sqrt(2pi) {tv_exact}")
    return ok, "; ".join(details)


# ---------------------------------------------------------------------------
# 9. random-effects constants
# ---------------------------------------------------------------------------

def _re_one_step(data, states, reps, seed):
    ch = ReChain(data)
    th = ch.stack_theta([ch.draw_theta(RandomStream(seed, i)) for i in range(reps)])
    return ch.apply(np.broadcast_to(states, (reps,) + np.shape(states)), th)


def crit_9():
    null = REData(10, 100, np.zeros(10), 0.0)
    lam, L = re_drift_constants(null)
    exact = abs(lam - 0.424) <= 1e-12 and abs(L - 0.040024) <= 1e-12
    r = np.random.default_rng(9)
    drift_bad = 0
    for k in range(20):
        eta = r.normal(0, 0.3 * (k + 1), 11)
        v = V_re(null, _re_one_step(null, eta[None], 2000, 90 + k)[:, 0])
        drift_bad += v.mean() > lam * V_re(null, eta) + L + 3 * v.std(ddof=1) / math.sqrt(v.size)
    data = REData(16, 256, np.zeros(16), 0.0)
    g, _ = re_contraction(data, 0.5)
    d = 16**0.25
    con_bad = 0
    for k in range(20):
        a, b = r.normal(size=(2, 17))
        a *= math.sqrt(0.45 * d / V_re(data, a)) * r.uniform(0.2, 1)
        b *= math.sqrt(0.45 * d / V_re(data, b)) * r.uniform(0.2, 1)
        out = _re_one_step(data, np.stack([a, b]), 2000, 190 + k)
        dist = np.linalg.norm(out[:, 0] - out[:, 1], axis=-1)
        con_bad += dist.mean() > g * np.linalg.norm(a - b) + 3 * dist.std(ddof=1) / math.sqrt(dist.size)
    ok = exact and drift_bad == 0 and con_bad == 0
    return ok, (f"(lambda, L) = ({lam:.6f}, {L:.6f}) vs (0.424, 0.040024), drift violations {drift_bad}/20, "
                f"contraction violations {con_bad}/20 (gamma {g:.4f} at p=16, r=256)")


# ---------------------------------------------------------------------------
# 10. random-effects regime
# ---------------------------------------------------------------------------

def crit_10():
    ps = (8, 16, 32, 64, 128)
    gen = [re_rate(gen_re_data(p, p * p, seed=0), 0.5).rho_a for p in ps]
    null = [re_rate(REData(p, p * p, np.zeros(p), 0.0), 0.5).rho_a for p in ps]
    feasible = all(v is not None for v in gen)
    decreasing = feasible and all(b < a for a, b in zip(gen, gen[1:]))
    last = gen[-1]
    rs = np.array([256, 1024, 4096, 16384, 65536])
    coef = [re_tv_lipschitz(REData(16, int(rr), np.zeros(16), 0.0)) for rr in rs]
    slope = float(np.polyfit(np.log(rs), np.log(coef), 1)[0])
    ok = decreasing and last is not None and last < 0.05 and abs(slope - 1.5) <= 0.05
    fmt = lambda xs: "[" + ", ".join("infeasible" if x is None else f"{x:.4f}" for x in xs) + "]"
    return ok, (f"rho_a on generated data {fmt(gen)} (need strictly decreasing, < 0.05 at p=128); "
                f"null data {fmt(null)}; TV coefficient slope vs r {slope:.5f} (1.5 +- 0.05)")


# ---------------------------------------------------------------------------
# 11. A&C regime scans
# ---------------------------------------------------------------------------

def crit_11(out_dir):
    code = cli(["ac-regimes", "--seed", "0", "--out-dir", str(out_dir)])
    if code != 0:
        return False, f"ac-regimes exited with {code}"
    summ = json.loads((Path(out_dir) / "ac_regimes.json").read_text())["summary"]
    fp = summ["fixed_p"]
    parts, ok = [], True
    for p, fit in fp["fits"].items():
        tgt = fp["targets"][p]
        trend = fit["slope_in_n_inv_sqrt"] >= 0 and all(
            dlt <= 3 * se for dlt, se in zip(fit["diffs"], fit["diff_se"]))
        band = 3 * math.hypot(fit["plateau_se"], tgt["se"])
        below = fit["plateau"] <= tgt["target"] + band
        ok &= trend and below
        parts.append(f"p={p}: plateau {fit['plateau']:.4f} +- {fit['plateau_se']:.4f} vs target "
                     f"{tgt['target']:.4f} +- {tgt['se']:.4f} (gap {fit['plateau'] - tgt['target']:+.4f}), "
                     f"non-increasing={trend}")
    import csv
    with open(Path(out_dir) / "ac_repeated.csv") as fh:
        frac = [float(row["exceed_fraction"]) for row in csv.DictReader(fh)]
    dec = all(b <= a for a, b in zip(frac, frac[1:])) and frac[-1] < frac[0]
    ok &= dec
    parts.append(f"repeated-measures exceedance {frac} decreasing={dec}")
    return ok, "; ".join(parts)


# ---------------------------------------------------------------------------
# 12. CLI determinism
# ---------------------------------------------------------------------------

RUNS = [
    ("ar-dm-scan", []),
    ("ar-multistep-scan", []),
    ("ac-certify", ["directions=16", "refine_steps=20", "mc_reps=128", "sim_reps=128", "m_max=20"]),
    ("ac-regimes", ["fixed_p.p_grid=[2]", "fixed_p.n_grid=[100,400,1600]", "fixed_p.seeds=2",
                    "fixed_p.b4_budget=20000", "repeated.p_grid=[2,4]", "repeated.r_grid=[20,80]",
                    "repeated.seeds=3", "directions=8", "refine_steps=10"]),
    ("re-certify", ["p=32", "r=1024"]),
    ("re-regime-scan", []),
    ("couple-sim", ["chain=ar", "reps=256"]),
    ("couple-sim", ["chain=ac", "reps=256", "m=15"]),
    ("couple-sim", ["chain=re", "p=8", "reps=256", "m=15", "mode=stationary", "burnin=30"]),
]


def crit_12(out_dir):
    out_dir = Path(out_dir)
    bad = []
    for i, (cmd, sets) in enumerate(RUNS):
        flags = [x for s in sets for x in ("--set", s)]
        blobs = []
        for j, threads in enumerate((1, 3, 1)):
            d = out_dir / f"{i}_{j}"
            code = cli([cmd, "--seed", "13", "--threads", str(threads), "--out-dir", str(d)] + flags)
            if code != 0:
                bad.append(f"{cmd} exit {code}")
                break
            blobs.append({f.name: f.read_bytes() for f in sorted(d.iterdir())})
        else:
            if not (blobs[0] == blobs[1] == blobs[2]) or not blobs[0]:
                bad.append(cmd)
    ok = not bad
    return ok, f"{len(RUNS)} command configurations, 3 runs each (threads 1, 3, 1); mismatches: {bad or 'none'}"


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

CHECKS = {1: crit_1, 2: crit_2, 3: crit_3, 4: crit_4, 5: crit_5, 6: crit_6, 7: crit_7, 8: crit_8,
          9: crit_9, 10: crit_10, 11: crit_11, 12: crit_12}
NEEDS_DIR = {11, 12}


def run_check(k, tmp=None):
    t0 = time.perf_counter()
    if k in NEEDS_DIR:
        ok, detail = CHECKS[k](tmp)
    else:
        ok, detail = CHECKS[k]()
    return _line(k, ok, detail, time.perf_counter() - t0)


@pytest.mark.parametrize("k", sorted(CHECKS))
def test_criterion(k, tmp_path, capsys):
    status, line = run_check(k, tmp_path)
    with capsys.disabled():
        print("\n" + line)
    assert status == "PASS", line


if __name__ == "__main__":
    which = [int(a) for a in sys.argv[1:]] or sorted(CHECKS)
    failed = 0
    for k in which:
        with tempfile.TemporaryDirectory() as tmp:
            status, line = run_check(k, tmp)
        failed += status != "PASS"
        print(line, flush=True)
    sys.exit(1 if failed else 0)
