"""Constrained fusion samplers.

Produces i.i.d. exact draws from a product of component densities
restricted to an equality-constraint manifold.  Two endpoint routes:

* case 1 -- linear or sphere constraints, where the Gaussian proposal
  restricted to the constraint is tractable (SVD routine / vMF);
* case 2 -- general constraints, endpoints drawn uniformly on the manifold.

Both are followed by a stage-one endpoint weight and per-component
diffusion-bridge thinning.  The batch API chunks work across per-chunk RNG
substreams spawned from one master seed and reassembles results in chunk
order, so a fixed seed gives bit-identical output for any thread count.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .bridge_sim import BridgeSkeleton, LayerSequence
from .constraint_kit import (
    GeneralConstraint,
    LinearConstraint,
    SphereConstraint,
    linear_acceptance_weight,
    sample_gaussian_linear,
    sample_vmf_endpoint,
    uniform_on_manifold,
)
from .density_core import ComponentDensity
from .thinning import accept_bounded, accept_bounded_batch, accept_layered

__all__ = [
    "FusionProblem",
    "FusionDraw",
    "BudgetExhausted",
    "sample_case1",
    "sample_case2",
    "sample_batch",
    "tune_horizon",
    "make_chmc_uniform",
]

_BLOCK = 4096  # attempts per vectorized block; fixed for determinism


class BudgetExhausted(RuntimeError):
    """Raised when the attempt budget runs out; carries stage diagnostics."""

    def __init__(self, message, attempts_stage1=0, attempts_stage2=0):
        super().__init__(message)
        self.attempts_stage1 = attempts_stage1
        self.attempts_stage2 = attempts_stage2


@dataclass
class FusionProblem:
    components: list[ComponentDensity]
    constraint: object
    T: float

    def __post_init__(self):
        if not self.components:
            raise ValueError("need at least one component")
        d = self.components[0].dimension
        if any(c.dimension != d for c in self.components):
            raise ValueError("all components must share the same dimension")
        if self.T <= 0:
            raise ValueError("horizon must be positive")

    @property
    def m(self) -> int:
        return len(self.components)

    @property
    def d(self) -> int:
        return self.components[0].dimension

    @property
    def md(self) -> int:
        return self.m * self.d


@dataclass
class FusionDraw:
    y: np.ndarray
    attempts_stage1: int
    attempts_stage2: int
    wall_time: float


def _default_layers(T: float) -> LayerSequence:
    return LayerSequence.for_horizon(T)


def _sample_components(components, rng, size: int) -> np.ndarray:
    cols = []
    for comp in components:
        draw = comp.sample(rng, size=size)
        cols.append(draw[:, None] if comp.dimension == 1 else draw)
    return np.concatenate(cols, axis=1)


def _thin_component(comp, x_i, y_i, T, layers, rng) -> bool:
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    y_i = np.atleast_1d(np.asarray(y_i, dtype=float))
    skels = [BridgeSkeleton(T, float(a), float(b)) for a, b in zip(x_i, y_i)]
    target = skels if comp.dimension > 1 else skels[0]
    if comp.phi_global_bound is not None:
        return accept_bounded(comp, target, comp.phi_global_bound, rng).accepted
    return accept_layered(comp, target, layers, rng).accepted


def _thin_all(problem, x, y, rng, layers) -> bool:
    d = problem.d
    for i, comp in enumerate(problem.components):
        sl = slice(i * d, (i + 1) * d)
        if not _thin_component(comp, x[sl], y[sl], problem.T, layers, rng):
            return False
    return True


def _stage1_weights(problem, X, rng, uniform_draws):
    """(weights, endpoint info) for a block of attempts; endpoints for the
    general route are drawn up front, linear/sphere ones lazily."""
    T = problem.T
    con = problem.constraint
    if isinstance(con, LinearConstraint):
        return linear_acceptance_weight(X, T, con), None
    if isinstance(con, SphereConstraint):
        dist2 = np.sum((X - con.center) ** 2, axis=1)
        return np.exp(-dist2 / (2.0 * T)), None
    Y0 = uniform_draws(rng, X.shape[0])
    dist2 = np.sum((Y0 - X) ** 2, axis=1)
    return np.exp(-dist2 / (2.0 * T)), Y0


def _endpoints_for(problem, X_kept, Y0_kept, rng):
    con = problem.constraint
    if isinstance(con, LinearConstraint):
        return sample_gaussian_linear(X_kept, problem.T, con, rng)
    if isinstance(con, SphereConstraint):
        return np.array(
            [sample_vmf_endpoint(x, problem.T, con, rng)[0] for x in X_kept]
        ).reshape(len(X_kept), problem.md)
    return Y0_kept


def _collect(problem, quota, rng, layers, budget, uniform_draws):
    """Accept ``quota`` draws; returns (array, attempts_stage1, attempts_stage2)."""
    comps = problem.components
    T = problem.T
    d = problem.d
    fast_thin = [c.dimension == 1 and c.phi_global_bound is not None for c in comps]
    a1 = a2 = 0
    got: list[np.ndarray] = []
    while len(got) < quota:
        if a1 > budget * max(1, quota):
            raise BudgetExhausted(
                "fusion attempt budget exhausted (horizon mis-tuned or "
                "constraint far from the component mass)",
                a1, a2,
            )
        X = _sample_components(comps, rng, _BLOCK)
        w, Y0 = _stage1_weights(problem, X, rng, uniform_draws)
        keep = rng.random(_BLOCK) <= w
        a1 += _BLOCK
        idx = np.nonzero(keep)[0]
        if idx.size == 0:
            continue
        Xk = X[idx]
        Y = _endpoints_for(problem, Xk, None if Y0 is None else Y0[idx], rng)
        a2 += idx.size
        alive = np.ones(idx.size, dtype=bool)
        for i, comp in enumerate(comps):
            sub = np.nonzero(alive)[0]
            if sub.size == 0:
                break
            if fast_thin[i]:
                res = accept_bounded_batch(
                    lambda v, k, c=comp: c.phi(v),
                    Xk[sub, i], Y[sub, i], T, comp.phi_global_bound, rng,
                )
                alive[sub[~res]] = False
            else:
                sl = slice(i * d, (i + 1) * d)
                for j in sub:
                    if not _thin_component(comp, Xk[j, sl], Y[j, sl], T, layers, rng):
                        alive[j] = False
        got.extend(Y[alive])
    return np.array(got[:quota]), a1, a2


def sample_case1(
    problem: FusionProblem,
    rng: np.random.Generator,
    layers: LayerSequence | None = None,
    budget: int = 10**6,
) -> FusionDraw:
    """One exact draw for a linear or sphere constraint."""
    con = problem.constraint
    if not isinstance(con, (LinearConstraint, SphereConstraint)):
        raise TypeError("case 1 requires a linear or sphere constraint")
    layers = layers or _default_layers(problem.T)
    start = time.perf_counter()
    a1 = a2 = 0
    while a1 < budget:
        a1 += 1
        x = _sample_components(problem.components, rng, 1)[0]
        w, _ = _stage1_weights(problem, x[None, :], rng, None)
        if rng.random() > w[0]:
            continue
        y = _endpoints_for(problem, x[None, :], None, rng)[0]
        a2 += 1
        if _thin_all(problem, x, y, rng, layers):
            return FusionDraw(y, a1, a2, time.perf_counter() - start)
    raise BudgetExhausted("single-draw attempt budget exhausted", a1, a2)


def sample_case2(
    problem: FusionProblem,
    uniform_source,
    rng: np.random.Generator,
    layers: LayerSequence | None = None,
    budget: int = 10**6,
) -> FusionDraw:
    """One exact draw for a general constraint.

    ``uniform_source`` is either an iterator of on-manifold points or a
    callable (rng, size) -> array of uniform draws.
    """
    if not isinstance(problem.constraint, GeneralConstraint):
        raise TypeError("case 2 requires a general constraint")
    draws = _as_uniform_draws(uniform_source)
    layers = layers or _default_layers(problem.T)
    start = time.perf_counter()
    a1 = a2 = 0
    while a1 < budget:
        a1 += 1
        x = _sample_components(problem.components, rng, 1)[0]
        y = draws(rng, 1)[0]
        if math.log(rng.random()) > -float(np.sum((y - x) ** 2)) / (2.0 * problem.T):
            continue
        a2 += 1
        if _thin_all(problem, x, y, rng, layers):
            return FusionDraw(y, a1, a2, time.perf_counter() - start)
    raise BudgetExhausted("single-draw attempt budget exhausted", a1, a2)


def _as_uniform_draws(uniform_source):
    if uniform_source is None:
        return None
    if callable(uniform_source):
        return uniform_source
    it = iter(uniform_source)

    def draws(rng, size):
        return np.array([next(it) for _ in range(size)])

    return draws


def sample_batch(
    problem: FusionProblem,
    n: int,
    seed: int,
    threads: int = 1,
    layers: LayerSequence | None = None,
    budget: int = 10**6,
    uniform_source=None,
    chunk_size: int = 256,
):
    """n exact draws, deterministically reproducible for any thread count.

    Work is split into fixed-size chunks, chunk k running on the k-th RNG
    substream spawned from ``seed``; results concatenate in chunk order.
    Returns (samples of shape (n, md), info dict with attempt counts).
    """
    if isinstance(problem.constraint, GeneralConstraint) and uniform_source is None:
        raise ValueError("general constraints need a uniform_source")
    draws = _as_uniform_draws(uniform_source)
    layers = layers or _default_layers(problem.T)
    quotas = [chunk_size] * (n // chunk_size)
    if n % chunk_size:
        quotas.append(n % chunk_size)
    streams = np.random.SeedSequence(seed).spawn(len(quotas))

    def work(args):
        quota, ss = args
        rng = np.random.default_rng(ss)
        return _collect(problem, quota, rng, layers, budget, draws)

    jobs = list(zip(quotas, streams))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]
    samples = np.concatenate([r[0] for r in results], axis=0)
    info = {
        "attempts_stage1": sum(r[1] for r in results),
        "attempts_stage2": sum(r[2] for r in results),
    }
    return samples, info


def tune_horizon(
    problem: FusionProblem,
    seed: int = 0,
    target: float = 0.1,
    pilot: int = 2000,
    uniform_source=None,
    max_rounds: int = 40,
) -> float:
    """Smallest horizon (on a doubling grid) with stage-one acceptance >= target.

    Small horizons favor the thinning stage, so the pilot starts low and
    doubles until the endpoint weight is healthy.  The returned value is
    then frozen; tuning never touches the draws used for inference.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = _as_uniform_draws(uniform_source)
    base = FusionProblem(problem.components, problem.constraint, problem.T)
    T = problem.T / 2**10
    for _ in range(max_rounds):
        base.T = T
        X = _sample_components(base.components, rng, pilot)
        w, _ = _stage1_weights(base, X, rng, draws)
        if float(np.mean(w)) >= target:
            return T
        T *= 2.0
    return T


def make_chmc_uniform(
    constraint: GeneralConstraint,
    seed_point,
    burn_in: int = 1000,
    thin: int = 5,
    step_size: float | None = None,
):
    """Uniform-on-manifold source backed by constrained HMC.

    Returns a callable (rng, size); one chain is kept per RNG object so
    chunked batch sampling stays deterministic per substream.
    """
    chains: dict[int, object] = {}

    def draws(rng, size):
        key = id(rng)
        gen = chains.get(key)
        if gen is None:
            gen = uniform_on_manifold(
                constraint, seed_point, burn_in, thin, rng, step_size=step_size
            )
            chains[key] = gen
        return np.array([next(gen) for _ in range(size)])

    return draws
