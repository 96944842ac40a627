"""Constrained Hamiltonian Monte Carlo on {y : h(y) = 0}.

RATTLE-style integrator: each position update is pulled back to the
manifold by Newton iteration along the starting Jacobian's rows, and the
momentum is re-projected onto the tangent space.  Because the Newton solve
can find different roots forward and backward, every proposal re-runs the
trajectory in reverse and rejects unless it returns to the start --
this keeps the chain exactly reversible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constraint_kit import GeneralConstraint

__all__ = ["ChmcConfig", "ChmcState", "chmc_step", "run_chmc", "tune_step_size"]


@dataclass
class ChmcConfig:
    step_size: float
    leapfrog_steps: int = 8
    newton_tol: float = 1e-9
    newton_max_iter: int = 50

    def __post_init__(self):
        if self.step_size <= 0 or self.leapfrog_steps < 1:
            raise ValueError("step_size must be positive and leapfrog_steps >= 1")


@dataclass
class ChmcState:
    position: np.ndarray
    potential: float
    accepts: int = 0
    steps: int = 0
    reverse_failures: int = 0
    projection_failures: int = 0


def _tangent_project(J: np.ndarray, p: np.ndarray) -> np.ndarray:
    sol = np.linalg.solve(J @ J.T, J @ p)
    return p - J.T @ sol


class _ProjectionError(Exception):
    pass


def _rattle_step(q, p, potential, constraint, config):
    eps = config.step_size
    J0 = np.atleast_2d(constraint.jacobian_h(q))
    _, g = potential(q)
    p_half = p - 0.5 * eps * g
    lam = np.zeros(J0.shape[0])
    for _ in range(config.newton_max_iter):
        q_new = q + eps * (p_half - J0.T @ lam)
        hv = np.atleast_1d(constraint.h(q_new))
        if np.max(np.abs(hv)) <= config.newton_tol:
            break
        Jn = np.atleast_2d(constraint.jacobian_h(q_new))
        try:
            dlam = np.linalg.solve(eps * (Jn @ J0.T), hv)
        except np.linalg.LinAlgError as exc:
            raise _ProjectionError from exc
        lam = lam + dlam
    else:
        raise _ProjectionError
    p_half = p_half - J0.T @ lam
    q_new = q + eps * p_half
    _, g_new = potential(q_new)
    J_new = np.atleast_2d(constraint.jacobian_h(q_new))
    p_new = _tangent_project(J_new, p_half - 0.5 * eps * g_new)
    return q_new, p_new


def _trajectory(q, p, potential, constraint, config):
    for _ in range(config.leapfrog_steps):
        q, p = _rattle_step(q, p, potential, constraint, config)
    return q, p


def chmc_step(
    state: ChmcState,
    potential,
    constraint: GeneralConstraint,
    config: ChmcConfig,
    rng: np.random.Generator,
) -> ChmcState:
    """One CHMC transition.  ``potential(y)`` returns (U(y), grad U(y))."""
    q0 = state.position
    J0 = np.atleast_2d(constraint.jacobian_h(q0))
    p0 = _tangent_project(J0, rng.standard_normal(q0.size))
    state.steps += 1
    try:
        q1, p1 = _trajectory(q0, p0, potential, constraint, config)
        # reversibility check: the backward trajectory must return to the start
        q_back, _ = _trajectory(q1, -p1, potential, constraint, config)
    except _ProjectionError:
        state.projection_failures += 1
        return state
    if np.max(np.abs(q_back - q0)) > 10.0 * config.newton_tol * (1.0 + np.max(np.abs(q0))):
        state.reverse_failures += 1
        return state
    u0, _ = potential(q0)
    u1, _ = potential(q1)
    h0 = u0 + 0.5 * float(p0 @ p0)
    h1 = u1 + 0.5 * float(p1 @ p1)
    if np.log(rng.random()) <= h0 - h1:
        state.position = q1
        state.potential = u1
        state.accepts += 1
    return state


def run_chmc(
    potential,
    constraint: GeneralConstraint,
    start,
    n_steps: int,
    config: ChmcConfig,
    rng: np.random.Generator,
    burn_in: int = 0,
    thin: int = 1,
) -> tuple[np.ndarray, ChmcState]:
    """Run a chain and return (thinned positions, final state with diagnostics)."""
    start = np.asarray(start, dtype=float)
    u0, _ = potential(start)
    state = ChmcState(position=start.copy(), potential=float(u0))
    out = []
    for i in range(burn_in + n_steps * max(1, thin)):
        state = chmc_step(state, potential, constraint, config, rng)
        if i >= burn_in and (i - burn_in + 1) % max(1, thin) == 0:
            out.append(state.position.copy())
    return np.array(out), state


def tune_step_size(
    potential,
    constraint: GeneralConstraint,
    start,
    rng: np.random.Generator,
    initial: float = 0.2,
    leapfrog_steps: int = 8,
    probe_steps: int = 50,
    max_rounds: int = 20,
) -> float:
    """Double/halve the step size until acceptance lands in [0.7, 0.9]."""
    eps = initial
    start = np.asarray(start, dtype=float)
    for _ in range(max_rounds):
        config = ChmcConfig(step_size=eps, leapfrog_steps=leapfrog_steps)
        u0, _ = potential(start)
        state = ChmcState(position=start.copy(), potential=float(u0))
        for _ in range(probe_steps):
            state = chmc_step(state, potential, constraint, config, rng)
        rate = state.accepts / state.steps
        if rate > 0.9:
            eps *= 2.0
        elif rate < 0.7:
            eps *= 0.5
        else:
            return eps
    return eps
