"""Command-line experiments: scans, certificates and coupled simulations.

Every command reads an optional YAML config, applies CLI overrides and
writes CSV tables plus a JSON summary into ``--out-dir``. Outputs depend only
on the config and seed (never on ``--threads``).

Config layout::

    schema_version: 1
    seed: 0
    threads: 1
    out_dir: results
    ar-dm-scan:
      p_grid: [5, 10, 20, 40]
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from .ac_analysis import (
    AcConfig,
    SearchConfig,
    SpectralContext,
    ac_certificate,
    empirical_w_curve,
    rho_hat_2,
    shrinkage_bound,
)
from .chains import AcChain, ArChain, REData, ReChain, estimate_w_to_pi, simulate_coupled
from .datagen_io import (
    GenSpec,
    Regime,
    jsonable,
    check_assumptions,
    fixed_p_target,
    gen_probit_sequence,
    gen_re_data,
    gen_repeated_design,
    gen_repeated_from_spec,
    load_probit_csv,
)
from .dm_bounds import InfeasibleError, ar_best_rate, ar_gamma_lower, ar_multistep_bound
from .matrix_kernel import SingularMatrixError, lambda_max
from .re_analysis import re_rate, re_tv_lipschitz
from .stats_kernel import DomainError, RandomStream

log = logging.getLogger("mcbounds")

SCHEMA_VERSION = 1
EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_NUMERIC = 0, 2, 3, 4

DEFAULTS = {
    "ar-dm-scan": {"p_grid": [5, 10, 20, 40]},
    "ar-multistep-scan": {"p_grid": [2, 5, 10, 20, 30, 40, 100]},
    "ac-certify": {
        "data": None,  # {x: path, y: path, q: path or null}
        "gen": {"regime": "shrinkage", "n": 20, "p": 2, "k": 2, "kappa": 1.0, "seed": 0},
        "directions": 64,
        "refine_steps": 60,
        "mc_reps": 512,
        "m_max": 50,
        "start": None,
        "sim_reps": 512,
        "sim_burnin": 200,
    },
    "ac-regimes": {
        "regimes": ["fixed_p", "shrinkage", "repeated"],
        "directions": 32,
        "refine_steps": 30,
        "fixed_p": {"p_grid": [2, 4, 8], "n_grid": [100, 300, 1000, 3000, 10000],
                    "k": 2, "beta_k_value": 1.0, "link": "probit", "seeds": 4,
                    "b4_budget": 200000, "fit_from_n": 1000},
        "shrinkage": {"n": 50, "p": 5, "k": 2, "kappa_grid": [0.1, 1.0, 10.0, 100.0, 1000.0]},
        "repeated": {"p_grid": [2, 4, 8, 16], "r_grid": [20, 80, 320, 1280],
                     "beta_value": 0.5, "link": "probit", "seeds": 10, "eps": 0.02},
    },
    "re-certify": {"p": 64, "r": 4096, "data": "null", "mu_star": 1.0,
                   "lam_theta_star": 1.0, "lam_e_star": 1.0, "delta": 0.5, "m_max": 50},
    "re-regime-scan": {"p_grid": [8, 16, 32, 64, 128], "r_power": 2.0, "data": "generated",
                       "mu_star": 1.0, "lam_theta_star": 1.0, "lam_e_star": 1.0, "delta": 0.5,
                       "tv_p": 16, "tv_r_grid": [256, 1024, 4096, 16384, 65536]},
    "couple-sim": {"chain": "ar", "p": 10, "m": 30, "reps": 1024, "mode": "pair",
                   "burnin": 200, "x0": None, "y0": None, "bootstrap": 200,
                   "gen": {"regime": "shrinkage", "n": 20, "p": 2, "k": 2, "kappa": 1.0, "seed": 0},
                   "re": {"r": 100, "mu_star": 1.0, "lam_theta_star": 1.0, "lam_e_star": 1.0}},
}

_POSITIVE = {"directions", "refine_steps", "mc_reps", "m_max", "sim_reps", "seeds", "b4_budget",
             "m", "reps", "n", "p", "r", "tv_p", "bootstrap"}
_NONNEG = {"sim_burnin", "burnin"}


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------


def _merge(base: dict, over: dict, where: str) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k not in base:
            raise ConfigError(f"unknown key {where}{k}")
        if isinstance(base[k], dict) and isinstance(v, dict) and k not in ("gen", "data"):
            out[k] = _merge(base[k], v, f"{where}{k}.")
        else:
            out[k] = v
    return out


def _validate(section: dict, where: str = "") -> None:
    for k, v in section.items():
        name = f"{where}{k}"
        if isinstance(v, dict) and k not in ("gen", "data"):
            _validate(v, name + ".")
        elif k.endswith("_grid") or k == "regimes":
            if not isinstance(v, list) or not v:
                raise ConfigError(f"{name} must be a nonempty list")
        elif k in _POSITIVE:
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name} must be an integer >= 1")
        elif k in _NONNEG:
            if not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name} must be an integer >= 0")


def _parse_set(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        try:
            val = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value for {key}: {exc}") from None
        node = out
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
        node[parts[-1]] = val
    return out


def load_config(command: str, path=None, overrides=None, seed=None, threads=None,
                out_dir=None) -> dict:
    """Resolve the config for ``command``: defaults <- file <- CLI."""
    raw = {}
    if path is not None:
        try:
            raw = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        ver = raw.get("schema_version")
        if ver != SCHEMA_VERSION:
            raise ConfigError(f"schema_version must be {SCHEMA_VERSION} (got {ver!r})")
    known = {"schema_version", "seed", "threads", "out_dir", *DEFAULTS}
    extra = set(raw) - known
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    section = raw.get(command) or {}
    if not isinstance(section, dict):
        raise ConfigError(f"section {command} must be a mapping")
    params = _merge(DEFAULTS[command], section, f"{command}.")
    params = _merge(params, _parse_set(overrides), f"{command}.")
    _validate(params)
    cfg = {
        "command": command,
        "schema_version": SCHEMA_VERSION,
        "seed": raw.get("seed", 0) if seed is None else seed,
        "threads": raw.get("threads", 1) if threads is None else threads,
        "out_dir": raw.get("out_dir", "results") if out_dir is None else out_dir,
        "params": params,
    }
    if not isinstance(cfg["seed"], int) or cfg["seed"] < 0:
        raise ConfigError("seed must be a nonnegative integer")
    if not isinstance(cfg["threads"], int) or cfg["threads"] < 1:
        raise ConfigError("threads must be an integer >= 1")
    return cfg


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(x) for x in row])


def recorded_config(cfg: dict) -> dict:
    """The part of the config that determines the results (no threads, no paths)."""
    return {k: v for k, v in cfg.items() if k not in ("threads", "out_dir")}


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n")


def _loglin_fit(x, y):
    """Least-squares slope, intercept and R^2 of y on x."""
    x, y = np.asarray(x, float), np.asarray(y, float)
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (slope * x + icpt)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(icpt), float(r2)


def _search(params, seed):
    return SearchConfig(directions=params["directions"], refine_steps=params["refine_steps"],
                        seed=seed)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_ar_dm_scan(cfg, out: Path) -> dict:
    rows = []
    for p in cfg["params"]["p_grid"]:
        p = int(p)
        g = ar_gamma_lower(p)
        best = ar_best_rate(p)
        rows.append((p, g, best.d, best.a, best.rate, 1.0 - best.rate, "analytic"))
    write_csv(out / "ar_dm_scan.csv",
              ["p", "gamma_lower", "d_best", "a_best", "rho_ros_best", "one_minus_rho", "provenance"],
              rows)
    ps = [r[0] for r in rows]
    summary = {
        "one_minus_rho_fit": dict(zip(("slope", "intercept", "r2"),
                                      _loglin_fit(ps, [math.log(r[5]) for r in rows]))),
        "one_minus_gamma_fit": dict(zip(("slope", "intercept", "r2"),
                                        _loglin_fit(ps, [math.log1p(-r[1]) for r in rows]))),
    } if len(rows) > 1 else {}
    write_json(out / "ar_dm_scan.json", {"config": recorded_config(cfg), "fits": summary})
    return summary


def cmd_ar_multistep_scan(cfg, out: Path) -> dict:
    rows = []
    for p in cfg["params"]["p_grid"]:
        p = int(p)
        try:
            b = ar_multistep_bound(p)
        except InfeasibleError:
            rows.append((p, None, None, None, ar_best_rate(p).rate, None, False, "analytic"))
            continue
        single = ar_best_rate(p).rate
        rows.append((p, b.gamma, b.rho_p, b.per_step_rate, single, single - b.per_step_rate,
                     True, "analytic"))
    write_csv(out / "ar_multistep_scan.csv",
              ["p", "gamma", "rho_p", "per_step_rate", "single_step_rho_ros", "gap", "feasible",
               "provenance"], rows)
    summary = {"limit": 4.0 ** (-1.0 / 6.0)}
    write_json(out / "ar_multistep_scan.json", {"config": recorded_config(cfg), "summary": summary})
    return summary


def _probit_from_params(params):
    if params.get("data"):
        d = params["data"]
        return load_probit_csv(d["x"], d["y"], d.get("q")), {"source": "csv", **d}
    try:
        spec = GenSpec(**params["gen"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad generator spec: {exc}") from None
    if spec.regime is Regime.REPEATED:
        return gen_repeated_from_spec(spec), spec.to_dict()
    return gen_probit_sequence(spec), spec.to_dict()


def cmd_ac_certify(cfg, out: Path) -> dict:
    P = cfg["params"]
    data, source = _probit_from_params(P)
    ctx = SpectralContext(data)
    acfg = AcConfig(search=_search(P, cfg["seed"]), mc_reps=P["mc_reps"], m_max=P["m_max"],
                    start=None if P["start"] is None else np.asarray(P["start"], float))
    cert = ac_certificate(ctx, acfg)
    start = cert.mode if P["start"] is None else np.asarray(P["start"], float)
    emp = empirical_w_curve(ctx, start, P["m_max"], P["sim_reps"], P["sim_burnin"], cfg["seed"],
                            rate_hint=cert.rho0, threads=cfg["threads"])
    checks = {}
    if not data.flat_prior:
        checks = check_assumptions(data, ["C1", "C2"])
    shrink = bool(checks and checks["C1"].status == "pass" and checks["C2"].statistic < 1.0)
    report = cert.report()
    report["source"] = source
    report["assumptions"] = {k: v.to_json() for k, v in checks.items()}
    report["shrinkage_flag"] = shrink
    if shrink:
        report["shrinkage"] = {"certified_bound": shrinkage_bound(ctx), "provenance": "analytic"}
    report["simulation"] = {"reps": P["sim_reps"], "burnin": P["sim_burnin"], **emp.flags}
    report["config"] = recorded_config(cfg)
    rows = []
    prov = cert.w_bound.provenance.value
    for m in range(P["m_max"] + 1):
        tv = cert.tv_curve[m - 1] if m >= 1 else None
        rows.append((m, cert.w_curve[m], None if tv is None else min(tv, 1.0), tv,
                     emp.curve[m], emp.se[m], prov))
    write_csv(out / "ac_curves.csv",
              ["m", "w_bound", "tv_bound", "tv_raw", "w_empirical", "w_empirical_se", "provenance"],
              rows)
    write_json(out / "ac_certificate.json", report)
    return report


def _fixed_p_scan(P, seed, search):
    F = P["fixed_p"]
    rows, targets = [], {}
    fits = {}
    for p in F["p_grid"]:
        spec = GenSpec(Regime.FIXED_P, p=int(p), k=min(F["k"], int(p)),
                       beta_k_value=F["beta_k_value"], link=F["link"], seed=seed)
        tgt, tse = fixed_p_target(spec, F["b4_budget"])
        targets[int(p)] = {"target": tgt, "se": tse}
        means = {}
        for n in F["n_grid"]:
            vals = []
            for s in range(F["seeds"]):
                sp = GenSpec(Regime.FIXED_P, p=int(p), k=spec.k, beta_k_value=F["beta_k_value"],
                             link=F["link"], seed=seed * 1000 + s)
                ctx = SpectralContext(gen_probit_sequence(sp, int(n)))
                vals.append(rho_hat_2(ctx, search).value)
            vals = np.array(vals)
            se = float(vals.std(ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else 0.0
            means[int(n)] = (float(vals.mean()), se)
            rows.append((int(p), int(n), float(vals.mean()), se, tgt, tse, "heuristic_sup"))
        ns = [n for n in means if n >= F["fit_from_n"]]
        if len(ns) >= 2:
            x = [n ** -0.5 for n in ns]
            y = [means[n][0] for n in ns]
            slope, icpt, _ = _loglin_fit(x, y)
            # standard error of the intercept from the per-n MC errors
            Xd = np.column_stack([np.ones(len(x)), x])
            cov = np.linalg.pinv(Xd.T @ Xd) @ Xd.T @ np.diag([means[n][1] ** 2 for n in ns]) \
                @ Xd @ np.linalg.pinv(Xd.T @ Xd)
            fits[int(p)] = {"plateau": icpt, "plateau_se": float(math.sqrt(max(cov[0, 0], 0.0))),
                            "slope_in_n_inv_sqrt": slope,
                            "diffs": [means[b][0] - means[a][0] for a, b in zip(ns, ns[1:])],
                            "diff_se": [math.hypot(means[a][1], means[b][1]) for a, b in zip(ns, ns[1:])]}
    return rows, {"targets": targets, "fits": fits}


def _shrinkage_scan(P, seed):
    S = P["shrinkage"]
    base = gen_probit_sequence(GenSpec(Regime.FIXED_P, p=S["p"], k=min(S["k"], S["p"]), seed=seed),
                               S["n"])
    s = lambda_max(base.X.T @ base.X)
    rows = []
    for kappa in S["kappa_grid"]:
        data = base.make(base.X, base.y, float(kappa) * np.eye(base.p))
        b = shrinkage_bound(SpectralContext(data))
        rows.append((float(kappa), b, s / (s + float(kappa)), "analytic"))
    return rows, {"lambda_max_XtX": s}


def _repeated_scan(P, seed, search):
    R = P["repeated"]
    if len(R["p_grid"]) != len(R["r_grid"]):
        raise ConfigError("repeated.p_grid and repeated.r_grid must have equal length")
    rows = []
    for k, (p, r) in enumerate(zip(R["p_grid"], R["r_grid"])):
        p, r = int(p), int(r)
        beta = np.full(p, float(R["beta_value"]))
        exceed, vals, tgt = 0, [], None
        for s in range(R["seeds"]):
            data = gen_repeated_design(p, r, p, beta, R["link"], seed=seed * 1000 + s, one_way=True)
            if tgt is None:
                g = check_assumptions(data, "D4", beta_star=beta, link=R["link"])["D4"].statistic
                tgt = 1.0 - 0.5 * g
            v = rho_hat_2(SpectralContext(data), search).value
            vals.append(v)
            exceed += v > tgt + R["eps"]
        rows.append((k, p, r, r / math.log(p) if p > 1 else math.inf, tgt, R["eps"],
                     float(np.mean(vals)), exceed / R["seeds"], "heuristic_sup"))
    return rows, {}


def cmd_ac_regimes(cfg, out: Path) -> dict:
    P = cfg["params"]
    search = _search(P, cfg["seed"])
    summary = {}
    unknown = set(P["regimes"]) - {"fixed_p", "shrinkage", "repeated"}
    if unknown:
        raise ConfigError(f"unknown regimes {sorted(unknown)}")
    if "fixed_p" in P["regimes"]:
        rows, info = _fixed_p_scan(P, cfg["seed"], search)
        write_csv(out / "ac_fixed_p.csv",
                  ["p", "n", "rho_hat_2", "rho_hat_2_se", "target", "target_se", "provenance"], rows)
        summary["fixed_p"] = info
    if "shrinkage" in P["regimes"]:
        rows, info = _shrinkage_scan(P, cfg["seed"])
        write_csv(out / "ac_shrinkage.csv", ["kappa", "certified_bound", "eig_oracle", "provenance"],
                  rows)
        summary["shrinkage"] = info
    if "repeated" in P["regimes"]:
        rows, info = _repeated_scan(P, cfg["seed"], search)
        write_csv(out / "ac_repeated.csv",
                  ["k", "p", "r", "r_over_log_q", "target", "eps", "mean_rho_hat_2",
                   "exceed_fraction", "provenance"], rows)
        summary["repeated"] = info
    write_json(out / "ac_regimes.json", {"config": recorded_config(cfg), "summary": summary})
    return summary


def _re_data(P, p, r, seed) -> REData:
    if P["data"] == "null":
        return REData(p=p, r=r, group_means=np.zeros(p), ssw=0.0)
    if P["data"] != "generated":
        raise ConfigError("data must be 'generated' or 'null'")
    return gen_re_data(p, r, P["mu_star"], P["lam_theta_star"], P["lam_e_star"], seed)


def _re_row(data, delta):
    cert = re_rate(data, delta)
    chk = check_assumptions(data, ["E1", "E2"], delta=delta)
    e2 = chk["E2"].statistic
    return cert, (data.p, data.r, cert.lambda_, cert.L, cert.gamma, cert.gamma0, cert.d, cert.a,
                  cert.rho_a, cert.feasible, cert.tv_coeff, chk["E1"].statistic,
                  e2["between_mean_sq"], e2["within_mean_sq"], "analytic")


_RE_HEADER = ["p", "r", "lambda", "L", "gamma", "gamma0", "d", "a", "rho_a", "feasible",
              "tv_coeff", "e1_ratio", "e2_between", "e2_within", "provenance"]


def cmd_re_certify(cfg, out: Path) -> dict:
    P = cfg["params"]
    data = _re_data(P, P["p"], P["r"], cfg["seed"])
    cert, row = _re_row(data, P["delta"])
    rep = cert.to_json()
    rep["assumptions"] = {k: v.to_json() for k, v in
                          check_assumptions(data, ["E1", "E2"], delta=P["delta"]).items()}
    rep["config"] = recorded_config(cfg)
    write_csv(out / "re_certificate.csv", _RE_HEADER, [row])
    if cert.feasible:
        eta0 = np.concatenate([[data.grand_mean * math.sqrt(data.p)], data.group_means - data.grand_mean])
        w = cert.w_curve(data, eta0, P["m_max"])
        tv = cert.tv_curve(data, eta0, P["m_max"])
        write_csv(out / "re_curves.csv", ["m", "w_bound", "tv_bound", "tv_raw", "provenance"],
                  [(m, w[m], tv.values[m - 1] if m else None, tv.raw[m - 1] if m else None,
                    "analytic") for m in range(w.size)])
    write_json(out / "re_certificate.json", rep)
    if not cert.feasible:
        failed = [k for k, v in cert.valid.items() if not v]
        raise InfeasibleError(f"random-effects certificate infeasible: {failed}")
    return rep


def cmd_re_regime_scan(cfg, out: Path) -> dict:
    P = cfg["params"]
    rows = []
    for p in P["p_grid"]:
        p = int(p)
        r = int(math.ceil(p ** P["r_power"] - 1e-9))
        rows.append(_re_row(_re_data(P, p, r, cfg["seed"]), P["delta"])[1])
    write_csv(out / "re_regime_scan.csv", _RE_HEADER, rows)
    tv_rows = []
    for r in P["tv_r_grid"]:
        data = _re_data(P, P["tv_p"], int(r), cfg["seed"])
        tv_rows.append((P["tv_p"], int(r), re_tv_lipschitz(data), "analytic"))
    write_csv(out / "re_tv_scan.csv", ["p", "r", "tv_coeff", "provenance"], tv_rows)
    summary = {}
    if len(tv_rows) > 1:
        slope, _, r2 = _loglin_fit([math.log(t[1]) for t in tv_rows], [math.log(t[2]) for t in tv_rows])
        summary["tv_loglog_slope_vs_r"] = {"slope": slope, "r2": r2}
    write_json(out / "re_regime_scan.json", {"config": recorded_config(cfg), "summary": summary})
    return summary


def _bootstrap_ci(paths, B, seed, level=0.95):
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 0xB007])))
    reps = paths.shape[0]
    means = np.empty((B, paths.shape[1]))
    for b in range(B):
        means[b] = paths[gen.integers(0, reps, reps)].mean(axis=0)
    lo, hi = np.quantile(means, [(1 - level) / 2, (1 + level) / 2], axis=0)
    return lo, hi


def cmd_couple_sim(cfg, out: Path) -> dict:
    P = cfg["params"]
    kind = P["chain"]
    exact = None
    if kind == "ar":
        chain = ArChain(P["p"])
        dim = P["p"]
        x0 = np.ones(dim) if P["x0"] is None else np.asarray(P["x0"], float)
        y0 = np.zeros(dim) if P["y0"] is None else np.asarray(P["y0"], float)
        exact = np.linalg.norm(x0 - y0) * 0.5 ** np.arange(P["m"] + 1)
    elif kind == "ac":
        data, _ = _probit_from_params(P)
        chain = AcChain(data)
        dim = data.p
        x0 = np.ones(dim) if P["x0"] is None else np.asarray(P["x0"], float)
        y0 = np.zeros(dim) if P["y0"] is None else np.asarray(P["y0"], float)
    elif kind == "re":
        R = P["re"]
        data = gen_re_data(P["p"], R["r"], R["mu_star"], R["lam_theta_star"], R["lam_e_star"],
                           cfg["seed"])
        chain = ReChain(data)
        dim = data.p + 1
        x0 = np.ones(dim) if P["x0"] is None else np.asarray(P["x0"], float)
        y0 = np.zeros(dim) if P["y0"] is None else np.asarray(P["y0"], float)
    else:
        raise ConfigError("chain must be one of ar, ac, re")
    if x0.shape != (dim,) or y0.shape != (dim,):
        raise ConfigError(f"x0 and y0 must have length {dim}")
    if P["mode"] == "pair":
        res = simulate_coupled(chain, x0, y0, P["m"], P["reps"], cfg["seed"], cfg["threads"],
                               keep_paths=True)
    elif P["mode"] == "stationary":
        res = estimate_w_to_pi(chain, x0, P["m"], P["reps"], P["burnin"], cfg["seed"],
                               cfg["threads"], start=y0, keep_paths=True)
    else:
        raise ConfigError("mode must be 'pair' or 'stationary'")
    lo, hi = _bootstrap_ci(res.paths, P["bootstrap"], cfg["seed"])
    rows = [(m, res.curve[m], res.se[m], lo[m], hi[m], None if exact is None else exact[m],
             "monte_carlo") for m in range(P["m"] + 1)]
    write_csv(out / "couple_sim.csv",
              ["m", "mean_distance", "se", "ci_lo", "ci_hi", "exact", "provenance"], rows)
    summary = {"fitted_rate": res.fitted_rate(), "flags": res.flags}
    write_json(out / "couple_sim.json", {"config": recorded_config(cfg), "summary": summary})
    return summary


COMMANDS = {
    "ar-dm-scan": cmd_ar_dm_scan,
    "ar-multistep-scan": cmd_ar_multistep_scan,
    "ac-certify": cmd_ac_certify,
    "ac-regimes": cmd_ac_regimes,
    "re-certify": cmd_re_certify,
    "re-regime-scan": cmd_re_regime_scan,
    "couple-sim": cmd_couple_sim,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mcbounds", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--threads", type=int, help="worker threads for replicate loops")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a command parameter (dotted keys, YAML values)")
        sp.add_argument("-v", "--verbose", action="store_true")
    return ap


def run(command: str, cfg: dict) -> dict:
    out = Path(cfg["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return COMMANDS[command](cfg, out)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.command, args.config, args.set, args.seed, args.threads,
                          args.out_dir)
        run(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SingularMatrixError, np.linalg.LinAlgError, DomainError, FloatingPointError,
            RuntimeError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
