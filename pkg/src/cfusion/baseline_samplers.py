"""Benchmark apparatus for the three-component sum-constrained studies:
numerical-integration ground truth, importance sampling with a
moment-matched constrained-Gaussian proposal, random-walk Metropolis on
the constraint hyperplane, percentage-error metrics, and ESS accounting.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, optimize

from .constraint_kit import LinearConstraint
from .density_core import (
    ComponentDensity,
    GaussianDensity,
    GenLogDensity,
    StudentTDensity,
    genlog_cumulants,
)
from .gaussian_analysis import condition_on_sum

__all__ = [
    "BenchmarkScenario",
    "genlog_scenario",
    "student_t_scenario",
    "gaussian_scenario",
    "nonlinear_components",
    "component_moments",
    "quadrature_truth",
    "importance_sampler",
    "rw_mh_hyperplane",
    "tune_rw_step",
    "percentage_errors",
    "PercentageErrors",
    "ess",
]


@dataclass
class BenchmarkScenario:
    name: str
    components: list[ComponentDensity]
    s: float
    _truth: tuple | None = field(default=None, repr=False)

    @property
    def constraint(self) -> LinearConstraint:
        return LinearConstraint(np.ones((1, len(self.components))), [self.s])

    @property
    def truth(self):
        """(means, variances) under the constrained law, quadrature-computed."""
        if self._truth is None:
            self._truth = quadrature_truth(self.components, self.s)
        return self._truth


def genlog_scenario() -> BenchmarkScenario:
    comps = [
        GenLogDensity(3.0, 0.4, 2.0, -5.0),
        GenLogDensity(3.0, 0.4, 1.0, -2.0),
        GenLogDensity(3.0, 0.4, 1.0, -3.0),
    ]
    return BenchmarkScenario("genlog", comps, 10.0)


def student_t_scenario() -> BenchmarkScenario:
    comps = [
        StudentTDensity.standard(-2.0, 2.01),
        StudentTDensity.standard(3.0, 2.01),
        StudentTDensity.standard(5.0, 2.01),
    ]
    return BenchmarkScenario("student_t", comps, 10.0)


def gaussian_scenario() -> BenchmarkScenario:
    comps = [GaussianDensity(0.0, 1.0) for _ in range(3)]
    return BenchmarkScenario("gaussian", comps, 0.0)


def nonlinear_components() -> list[ComponentDensity]:
    """Product-T factors of the mean-and-variance-constrained example."""
    return [
        StudentTDensity(0.0, 0.6, 9.0),
        StudentTDensity(0.0, 0.6, 9.0),
        StudentTDensity(0.0, 4.0, 3.0),
    ]


def component_moments(density: ComponentDensity) -> tuple[float, float]:
    """(mean, variance) of a shipped 1-d component density."""
    if isinstance(density, GaussianDensity):
        return float(density.mu[0]), float(density.sigma2[0])
    if isinstance(density, StudentTDensity):
        if density.nu <= 2:
            raise ValueError("variance undefined for nu <= 2")
        return density.mu, density.sigma**2 * density.nu / (density.nu - 2.0)
    if isinstance(density, GenLogDensity):
        k1, k2, _, _ = genlog_cumulants(density.params)
        return k1, k2
    raise TypeError("unknown component family")


def quadrature_truth(components, s: float, tol: float = 1e-4):
    """Constrained means and variances by nested adaptive quadrature.

    Substitutes x3 = s - x1 - x2 (the linear-constraint parameterization has
    a constant Jacobian, which cancels after normalization) and integrates
    the unnormalized product over the plane.  Returns (means, variances) for
    all three components with absolute error below ``tol``.
    """
    if len(components) != 3:
        raise ValueError("the quadrature oracle covers the three-component case")
    f1, f2, f3 = components

    def log_g(x1, x2):
        return float(
            f1.log_density(x1) + f2.log_density(x2) + f3.log_density(s - x1 - x2)
        )

    # scale out the peak so the integrand is O(1)
    m0 = np.array([component_moments(f1)[0], component_moments(f2)[0]])
    peak = optimize.minimize(
        lambda z: -log_g(z[0], z[1]), m0, method="Nelder-Mead",
        options={"xatol": 1e-8, "fatol": 1e-10},
    )
    shift = -peak.fun

    def integral(weight):
        err_acc = []

        def inner(x1):
            val, err = integrate.quad(
                lambda x2: np.exp(log_g(x1, x2) - shift) * weight(x1, x2),
                -np.inf, np.inf, epsabs=1e-12, epsrel=1e-10, limit=200,
            )
            err_acc.append(err)
            return val

        # heavy polynomial tails trip quadpack's convergence heuristics even
        # when the returned error estimate is fine; the explicit error budget
        # below is the real guard, so the warnings only add noise
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, err = integrate.quad(
                inner, -np.inf, np.inf, epsabs=1e-12, epsrel=1e-9, limit=200
            )
        err_acc.append(err)
        return val, max(err_acc)

    one = lambda a, b: 1.0
    Z, eZ = integral(one)
    if Z <= 0:
        raise RuntimeError("quadrature found no mass on the constraint")
    E1 = integral(lambda a, b: a)[0] / Z
    E2 = integral(lambda a, b: b)[0] / Z
    E11 = integral(lambda a, b: a * a)[0] / Z
    E22 = integral(lambda a, b: b * b)[0] / Z
    E12 = integral(lambda a, b: a * b)[0] / Z
    if eZ / Z > tol:
        raise RuntimeError("quadrature error budget exceeded")
    v1 = E11 - E1 * E1
    v2 = E22 - E2 * E2
    c12 = E12 - E1 * E2
    means = np.array([E1, E2, s - E1 - E2])
    variances = np.array([v1, v2, v1 + v2 + 2.0 * c12])
    return means, variances


def importance_sampler(scenario: BenchmarkScenario, N: int, rng: np.random.Generator):
    """Self-normalized IS with a moment-matched sum-conditioned Gaussian proposal.

    Returns a dict with draws, normalized weights, means, variances, ess.
    """
    moments = [component_moments(c) for c in scenario.components]
    mu_hat = np.array([m[0] for m in moments])
    var_hat = np.array([m[1] for m in moments])
    cond = condition_on_sum(mu_hat, var_hat, scenario.s)
    evals, evecs = np.linalg.eigh(cond.sigma_star)
    evals = np.clip(evals, 0.0, None)
    L = evecs * np.sqrt(evals)
    z = rng.standard_normal((N, len(mu_hat)))
    y = cond.mu_star + z @ L.T
    y += (scenario.s - y.sum(axis=1, keepdims=True)) / len(mu_hat)

    logw = np.zeros(N)
    for i, comp in enumerate(scenario.components):
        logw += comp.log_density(y[:, i])
        logw -= -0.5 * ((y[:, i] - mu_hat[i]) ** 2 / var_hat[i]) - 0.5 * np.log(
            2.0 * np.pi * var_hat[i]
        )
    logw -= logw.max()
    w = np.exp(logw)
    w /= w.sum()
    ess_val = 1.0 / np.sum(w**2)
    if ess_val / N < 1e-3:
        warnings.warn("importance weights are degenerate (ESS/N < 1e-3)")
    means = w @ y
    variances = w @ (y - means) ** 2
    return {
        "draws": y,
        "weights": w,
        "means": means,
        "variances": variances,
        "ess": float(ess_val),
    }


def rw_mh_hyperplane(
    scenario: BenchmarkScenario,
    N: int,
    step_scale: float,
    rng: np.random.Generator,
    burn_in: int = 10_000,
    log_target=None,
    start=None,
):
    """Random-walk Metropolis with increments in the null space of [1..1].

    Returns (chain of shape (N, m), acceptance rate).  The running state is
    re-projected to the hyperplane every step so constraint error cannot
    accumulate.
    """
    m = len(scenario.components)
    if log_target is None:
        def log_target(y):
            return sum(
                float(c.log_density(y[i])) for i, c in enumerate(scenario.components)
            )
    y = np.full(m, scenario.s / m) if start is None else np.asarray(start, dtype=float)
    ly = log_target(y)
    chain = np.empty((N, m))
    accepts = 0
    total = burn_in + N
    for step in range(total):
        z = rng.standard_normal(m) * step_scale
        z -= z.mean()  # project onto the sum-zero null space
        prop = y + z
        prop += (scenario.s - prop.sum()) / m
        lp = log_target(prop)
        if np.log(rng.random()) <= lp - ly:
            y, ly = prop, lp
            accepts += 1
        if step >= burn_in:
            chain[step - burn_in] = y
    return chain, accepts / total


def tune_rw_step(
    scenario: BenchmarkScenario,
    rng: np.random.Generator,
    target: float = 0.42,
    probe: int = 2000,
    initial: float = 1.0,
    max_rounds: int = 20,
) -> float:
    """Double/halve the step scale toward the target acceptance rate."""
    step = initial
    for _ in range(max_rounds):
        _, rate = rw_mh_hyperplane(scenario, probe, step, rng, burn_in=200)
        if rate > target + 0.08:
            step *= 2.0
        elif rate < target - 0.08:
            step *= 0.5
        else:
            break
    return step


@dataclass
class PercentageErrors:
    mean: np.ndarray
    var: np.ndarray

    @property
    def mean_total(self) -> float:
        return float(self.mean.sum())

    @property
    def var_total(self) -> float:
        return float(self.var.sum())


def percentage_errors(est_means, est_vars, truth) -> PercentageErrors:
    """Per-component percentage errors (x100) and their three-component sums."""
    true_means, true_vars = truth
    true_means = np.asarray(true_means, dtype=float)
    true_vars = np.asarray(true_vars, dtype=float)
    if np.any(np.abs(true_means) < 1e-12) or np.any(np.abs(true_vars) < 1e-12):
        raise ZeroDivisionError("percentage error undefined for (near-)zero truth")
    pe_mean = 100.0 * np.abs(np.asarray(est_means) - true_means) / np.abs(true_means)
    pe_var = 100.0 * np.abs(np.asarray(est_vars) - true_vars) / np.abs(true_vars)
    return PercentageErrors(pe_mean, pe_var)


def ess(chain) -> float:
    """Effective sample size, averaged over dimensions.

    Initial-positive-sequence truncation of the autocorrelation sums:
    consecutive even/odd autocorrelation pairs are summed until a pair goes
    non-positive, giving the integrated autocorrelation time.
    """
    X = np.asarray(chain, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    N = X.shape[0]
    if N < 100:
        raise ValueError("chain too short for ESS estimation")
    out = []
    for j in range(X.shape[1]):
        a = X[:, j] - X[:, j].mean()
        var = np.dot(a, a) / N
        if var <= 0:
            out.append(1.0)
            continue
        nfft = int(2 ** np.ceil(np.log2(2 * N)))
        fa = np.fft.rfft(a, nfft)
        acf = np.fft.irfft(fa * np.conj(fa), nfft)[:N].real / (N * var)
        tau = -acf[0]  # pairs below add 2*Gamma_t, starting with rho_0 counted twice
        for t in range(N // 2):
            gamma = acf[2 * t] + (acf[2 * t + 1] if 2 * t + 1 < N else 0.0)
            if gamma <= 0.0:
                break
            tau += 2.0 * gamma
        out.append(max(1.0, N / max(tau, 1.0 / N)))
    return float(np.mean(out))
