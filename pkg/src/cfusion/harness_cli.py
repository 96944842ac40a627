"""Reproduction harness.

Subcommands (``cfusion <sub> [flags]``):

* ``toy``        -- two-component Student-T product on x1 + x2 = 0; KS report
                    of the fused marginal against the quadrature-normalized
                    target density.
* ``compare``    -- three-component sum-constrained error curves (fusion vs
                    importance sampling vs random-walk Metropolis) over an
                    N grid, against quadrature truth.
* ``nonlinear``  -- four-mode mean-and-dispersion-constrained case;
                    mode-coverage report for 600 fused draws.
* ``timing``     -- per-sampler ESS and attempt accounting at a fixed draw
                    count (wall seconds go to a separate sidecar file).
* ``mse-table``  -- analytic MSE-improvement decomposition for Gaussian rows
                    plus a Monte Carlo check of the predicted improvement.
* ``impute``     -- constrained AR imputation pipeline on synthetic data.

All primary CSV artifacts are byte-identical for a fixed (config, seed)
regardless of ``--threads``.  Wall-clock measurements are machine-dependent
by nature and are therefore written to ``*_seconds.csv`` sidecars that sit
outside the determinism contract.

Config files are INI-style (line-oriented ``key = value`` under ``[section]``
headers); unknown sections or keys are rejected.
"""

from __future__ import annotations

import argparse
import configparser
import copy
import csv
import sys
import time
from pathlib import Path

import numpy as np
from scipy import stats

from .baseline_samplers import (
    ess,
    genlog_scenario,
    importance_sampler,
    nonlinear_components,
    percentage_errors,
    rw_mh_hyperplane,
    student_t_scenario,
    tune_rw_step,
)
from .constraint_kit import GeneralConstraint, LinearConstraint, uniform_on_plane_sphere
from .density_core import GenLogDensity, GenLogParams, StudentTDensity
from .fusion_engine import FusionProblem, sample_batch, tune_horizon
from .gaussian_analysis import condition_on_sum, mse_improvement
from . import ts_imputation

__all__ = ["main", "run", "load_config", "DEFAULTS"]


# ---------------------------------------------------------------------------
# configuration

DEFAULTS = {
    "toy": {
        "n": 10000,
        "grid_half_width": 60.0,
        "grid_points": 240001,
    },
    "compare": {
        "scenario": "genlog",
        "n_grid": "100,1000,10000",
        "samplers": "cf,is,rwmh",
    },
    "nonlinear": {
        "n": 600,
        "mode_radius": 0.5,
        # stage-one tuning targets endpoint acceptance, which is the wrong
        # objective here: the thinning stage dominates, and the measured
        # per-attempt acceptance peaks near this horizon.
        "T": 0.8,
        "chunk_size": 32,
    },
    "timing": {
        "scenarios": "genlog,student_t",
        "samplers": "cf,is,rwmh",
        "n": 2000,
    },
    "mse-table": {
        "alpha": "10,-3,-5",
        "sigma2": "2,2,2",
        "mc_draws": 100000,
    },
    "impute": {
        "m": 3,
        "K": 7,
        "n_train": 400,
        "horizon": 8,
        "paths": 200,
        "spectral_radius": 0.5,
        "genlog_alpha": 2.0,
        "genlog_beta": 0.7,
        "variance_constraint": False,
        "variance_centering": "total",
        "input_csv": "",
    },
    "tuning": {
        "T": 0.0,            # 0 means auto-tune
        "stage1_target": 0.1,
        "rw_step": 0.0,      # 0 means auto-tune
        "budget": 1000000,
    },
}


class ConfigError(ValueError):
    pass


def load_config(path: str | None) -> dict:
    """Read an INI config, reject unknown keys, coerce to the default types."""
    cfg = copy.deepcopy(DEFAULTS)
    if not path:
        return cfg
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keep key case so "T" stays addressable
    read = parser.read(path)
    if not read:
        raise ConfigError(f"cannot read config file {path!r}")
    for section in parser.sections():
        if section not in cfg:
            raise ConfigError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in cfg[section]:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            default = cfg[section][key]
            try:
                if isinstance(default, bool):
                    cfg[section][key] = raw.strip().lower() in ("1", "true", "yes", "on")
                elif isinstance(default, int):
                    cfg[section][key] = int(raw)
                elif isinstance(default, float):
                    cfg[section][key] = float(raw)
                else:
                    cfg[section][key] = raw.strip()
            except ValueError as exc:
                raise ConfigError(f"bad value for [{section}] {key}: {raw!r}") from exc
    return cfg


def _int_list(raw: str) -> list[int]:
    return [int(tok) for tok in raw.split(",") if tok.strip()]


def _float_list(raw: str) -> list[float]:
    return [float(tok) for tok in raw.split(",") if tok.strip()]


def _str_list(raw: str) -> list[str]:
    return [tok.strip() for tok in raw.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# deterministic CSV emission

def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _subseed(seed: int, tag: str) -> np.random.SeedSequence:
    key = int.from_bytes(tag.encode(), "big") % (2**32)
    return np.random.SeedSequence(entropy=seed, spawn_key=(key,))


# ---------------------------------------------------------------------------
# scenario plumbing

def _scenario(name: str):
    if name == "genlog":
        return genlog_scenario()
    if name == "student_t":
        return student_t_scenario()
    raise ConfigError(f"unknown scenario {name!r}")


def _fusion_problem(scenario, tuning, seed):
    problem = FusionProblem(scenario.components, scenario.constraint, T=1.0)
    T = tuning["T"]
    if T <= 0:
        T = tune_horizon(problem, seed=seed, target=tuning["stage1_target"])
    problem.T = T
    return problem


def _cf_draws(scenario, n, seed, threads, tuning):
    problem = _fusion_problem(scenario, tuning, seed)
    samples, info = sample_batch(
        problem, n, seed=seed, threads=threads, budget=tuning["budget"]
    )
    return samples, info, problem.T


# ---------------------------------------------------------------------------
# toy

def _toy_target_cdf(half_width: float, points: int):
    """Numerically normalized CDF of (1+x^2/3)^-2 (1+x^2/5)^-3."""
    grid = np.linspace(-half_width, half_width, points)
    log_g = -2.0 * np.log1p(grid**2 / 3.0) - 3.0 * np.log1p(grid**2 / 5.0)
    g = np.exp(log_g)
    cdf = np.concatenate([[0.0], np.cumsum((g[1:] + g[:-1]) * np.diff(grid) / 2.0)])
    cdf /= cdf[-1]

    def F(x):
        return np.interp(x, grid, cdf)

    return F


def run_toy(cfg, seed, out, threads):
    sub = cfg["toy"]
    comps = [StudentTDensity.standard(0.0, 3.0), StudentTDensity.standard(0.0, 5.0)]
    constraint = LinearConstraint(np.ones((1, 2)), [0.0])
    scenario = type("S", (), {"components": comps, "constraint": constraint})
    samples, info, T = _cf_draws(scenario, sub["n"], seed, threads, cfg["tuning"])
    F = _toy_target_cdf(sub["grid_half_width"], sub["grid_points"])
    ks = stats.ks_1samp(samples[:, 0], F)
    rows = [[sub["n"], seed, T, float(ks.statistic), float(ks.pvalue)]]
    _write_csv(out / "toy.csv", ["n", "seed", "horizon", "ks_stat", "p_value"], rows)
    return 0


# ---------------------------------------------------------------------------
# compare / timing

def _run_sampler(name, scenario, n, seed, threads, tuning):
    """-> (est_means, est_vars, ess_value, attempts, wall_seconds)."""
    t0 = time.perf_counter()
    if name == "cf":
        samples, info, _ = _cf_draws(scenario, n, seed, threads, tuning)
        means = samples.mean(axis=0)
        variances = samples.var(axis=0, ddof=1)
        eff = float(n)
        attempts = info["attempts_stage1"]
    elif name == "is":
        rng = np.random.default_rng(_subseed(seed, "is"))
        res = importance_sampler(scenario, n, rng)
        means, variances, eff, attempts = res["means"], res["variances"], res["ess"], n
    elif name == "rwmh":
        rng = np.random.default_rng(_subseed(seed, "rwmh"))
        step = tuning["rw_step"]
        if step <= 0:
            step = tune_rw_step(scenario, np.random.default_rng(_subseed(seed, "rwtune")))
        chain, _ = rw_mh_hyperplane(scenario, n, step, rng)
        means = chain.mean(axis=0)
        variances = chain.var(axis=0, ddof=1)
        eff = ess(chain) if n >= 100 else 1.0
        attempts = n
    else:
        raise ConfigError(f"unknown sampler {name!r}")
    return means, variances, eff, attempts, time.perf_counter() - t0


def run_compare(cfg, seed, out, threads):
    sub = cfg["compare"]
    scenario = _scenario(sub["scenario"])
    truth = scenario.truth
    rows, wall_rows = [], []
    for n in _int_list(sub["n_grid"]):
        for name in _str_list(sub["samplers"]):
            m, v, eff, attempts, secs = _run_sampler(
                name, scenario, n, seed, threads, cfg["tuning"]
            )
            pe = percentage_errors(m, v, truth)
            rows.append([sub["scenario"], name, n, pe.mean_total, pe.var_total, eff])
            wall_rows.append([sub["scenario"], name, n, secs, secs / eff * 1e4])
    _write_csv(
        out / f"compare_{sub['scenario']}.csv",
        ["scenario", "sampler", "N", "pe_mean_total", "pe_var_total", "ess"],
        rows,
    )
    _write_csv(
        out / f"compare_{sub['scenario']}_seconds.csv",
        ["scenario", "sampler", "N", "seconds", "seconds_per_1e4_ess"],
        wall_rows,
    )
    return 0


def run_timing(cfg, seed, out, threads):
    sub = cfg["timing"]
    n = sub["n"]
    rows, wall_rows = [], []
    for scen_name in _str_list(sub["scenarios"]):
        scenario = _scenario(scen_name)
        for name in _str_list(sub["samplers"]):
            _, _, eff, attempts, secs = _run_sampler(
                name, scenario, n, seed, threads, cfg["tuning"]
            )
            rows.append([scen_name, name, n, eff, attempts])
            wall_rows.append([scen_name, name, n, secs, secs / eff * 1e4])
    _write_csv(out / "timing.csv", ["scenario", "sampler", "N", "ess", "attempts"], rows)
    _write_csv(
        out / "timing_seconds.csv",
        ["scenario", "sampler", "N", "seconds", "seconds_per_1e4_ess"],
        wall_rows,
    )
    return 0


# ---------------------------------------------------------------------------
# nonlinear four-mode case

def _plane_basis(m: int) -> np.ndarray:
    """Orthonormal basis of the sum-zero subspace of R^m, rows as vectors."""
    basis = np.linalg.svd(np.eye(m) - np.ones((m, m)) / m)[0][:, : m - 1]
    return basis.T


def find_circle_modes(components, radius: float, grid: int = 4096) -> np.ndarray:
    """Local maxima of the product density on the sum-zero sphere (m = 3)."""
    basis = _plane_basis(3)
    theta = np.linspace(0.0, 2.0 * np.pi, grid, endpoint=False)
    pts = radius * (np.cos(theta)[:, None] * basis[0] + np.sin(theta)[:, None] * basis[1])
    logf = sum(c.log_density(pts[:, i]) for i, c in enumerate(components))
    modes = []
    for k in range(grid):
        if logf[k] > logf[k - 1] and logf[k] > logf[(k + 1) % grid]:
            modes.append(pts[k])
    return np.array(modes)


def run_nonlinear(cfg, seed, out, threads):
    sub = cfg["nonlinear"]
    comps = nonlinear_components()
    radius = np.sqrt(24.0)
    constraint = GeneralConstraint(
        h=lambda y: np.array([y.sum(), y @ y / 3.0 - 8.0]),
        jacobian_h=lambda y: np.vstack([np.ones(3), 2.0 * y / 3.0]),
    )

    def source(rng, size):
        return uniform_on_plane_sphere(0.0, np.zeros(3), radius, rng, size=size)

    T = cfg["tuning"]["T"]
    problem = FusionProblem(comps, constraint, T=T if T > 0 else sub["T"])
    samples, info = sample_batch(
        problem, sub["n"], seed=seed, threads=threads,
        budget=cfg["tuning"]["budget"], uniform_source=source,
        chunk_size=sub["chunk_size"],
    )
    modes = find_circle_modes(comps, radius)
    rows = []
    for k, mode in enumerate(modes):
        dist = np.min(np.linalg.norm(samples - mode, axis=1))
        rows.append([k, *mode, float(dist), bool(dist <= sub["mode_radius"])])
    _write_csv(
        out / "nonlinear.csv",
        ["mode", "x1", "x2", "x3", "min_distance", "covered"],
        rows,
    )
    return 0


# ---------------------------------------------------------------------------
# mse-table

def run_mse_table(cfg, seed, out, threads):
    sub = cfg["mse-table"]
    alpha = np.array(_float_list(sub["alpha"]))
    sigma2 = np.array(_float_list(sub["sigma2"]))
    if alpha.size != sigma2.size:
        raise ConfigError("alpha and sigma2 must have the same length")
    dec = mse_improvement(alpha, sigma2)
    cond = condition_on_sum(np.zeros(alpha.size), sigma2, 0.0)
    var_reduction = sigma2 - np.diag(cond.sigma_star)

    # Monte Carlo check: biased noisy estimates, corrected by the known sum.
    n = sub["mc_draws"]
    rng = np.random.default_rng(_subseed(seed, "mse"))
    Z = rng.standard_normal((n, alpha.size))
    est = alpha + np.sqrt(sigma2) * Z
    corrected = est + cond.lam * (0.0 - est.sum(axis=1, keepdims=True))
    diff = np.sum(est**2, axis=1) - np.sum(corrected**2, axis=1)
    mc = float(diff.mean())
    se = float(diff.std(ddof=1) / np.sqrt(n))

    rows = [[
        ",".join(_fmt(a) for a in alpha),
        ",".join(_fmt(s) for s in sigma2),
        dec.psi1, dec.psi2, dec.total_improvement,
        *var_reduction, mc, se,
    ]]
    header = ["alpha", "sigma2", "psi1", "psi2", "total"]
    header += [f"var_reduction_{i + 1}" for i in range(alpha.size)]
    header += ["mc_improvement", "mc_se"]
    _write_csv(out / "mse_table.csv", header, rows)
    return 0


# ---------------------------------------------------------------------------
# impute

def make_synthetic_model(m, K, alpha, beta, spectral_radius, rng) -> ts_imputation.ArGenLogModel:
    """Random stable AR model with generalized-logistic errors."""
    raw = rng.uniform(0.3, 1.0, size=(m, K)) * (0.6 ** np.arange(K))
    phi = raw * (spectral_radius / np.abs(raw).sum(axis=1, keepdims=True))
    gammas = rng.uniform(0.5, 1.5, size=m)
    errors = []
    for g in gammas:
        base = GenLogDensity(alpha, beta, float(g), 0.0)
        errors.append(base.params)
    intercept = rng.uniform(-1.0, 1.0, size=m)
    return ts_imputation.ArGenLogModel(
        K, intercept, phi, np.empty((m, 0)), errors
    )


def run_impute(cfg, seed, out, threads):
    sub = cfg["impute"]
    rng = np.random.default_rng(_subseed(seed, "impute"))
    if sub["input_csv"]:
        data = np.genfromtxt(sub["input_csv"], delimiter=",", names=True)
        t_idx = data["t"].astype(int)
        s_idx = data["series"].astype(int)
        n, m = t_idx.max() + 1, s_idx.max() + 1
        Y = np.empty((n, m))
        Y[t_idx, s_idx] = data["value"]
        model = ts_imputation.fit(sub["K"], Y[: -sub["horizon"]])
        truth = Y[-sub["horizon"]:]
        history = Y[-sub["horizon"] - sub["K"]: -sub["horizon"]]
    else:
        model = make_synthetic_model(
            sub["m"], sub["K"], sub["genlog_alpha"], sub["genlog_beta"],
            sub["spectral_radius"], rng,
        )
        warm = ts_imputation.simulate(model, sub["n_train"], np.zeros((sub["K"], sub["m"])), rng)
        history = warm[-sub["K"]:]
        truth = ts_imputation.simulate(model, sub["horizon"], history, rng)
        model = ts_imputation.fit(sub["K"], warm)
    S = truth.sum(axis=1)
    Sigma = None
    if sub["variance_constraint"]:
        center = S if sub["variance_centering"] == "total" else S / truth.shape[1]
        Sigma = np.sum((truth - center[:, None]) ** 2, axis=1)
    task = ts_imputation.ImputationTask(
        history=history, S=S, Sigma=Sigma, N=sub["paths"],
        variance_centering=sub["variance_centering"],
    )
    result = ts_imputation.impute(model, task, rng)
    rows = []
    for t in range(S.size):
        for i in range(truth.shape[1]):
            rows.append([
                t, i, result.means[t, i], result.variances[t, i],
                result.q025[t, i], result.q975[t, i], truth[t, i],
            ])
    _write_csv(
        out / "impute.csv",
        ["t", "series", "mean", "var", "q025", "q975", "truth"],
        rows,
    )
    return 0


# ---------------------------------------------------------------------------
# entry points

_RUNNERS = {
    "toy": run_toy,
    "compare": run_compare,
    "nonlinear": run_nonlinear,
    "timing": run_timing,
    "mse-table": run_mse_table,
    "impute": run_impute,
}


def run(subcommand: str, cfg: dict, seed: int, out, threads: int = 1) -> int:
    if subcommand not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    return _RUNNERS[subcommand](cfg, seed, Path(out), threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cfusion", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="INI config path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=1)
        if name == "toy":
            p.add_argument("--n", type=int, default=None, help="number of draws")
        if name == "compare":
            p.add_argument("--scenario", default=None, choices=["genlog", "student_t"])
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if getattr(args, "n", None) is not None:
            cfg["toy"]["n"] = args.n
        if getattr(args, "scenario", None) is not None:
            cfg["compare"]["scenario"] = args.scenario
        return run(args.subcommand, cfg, args.seed, args.out, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
