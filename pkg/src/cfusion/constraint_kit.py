"""Equality constraints and constrained endpoint proposal samplers.

Provides the three constraint representations (linear, sphere, general
smooth), the SVD routine for a Gaussian conditioned on a linear constraint,
the stage-one acceptance weight for linear constraints, the von
Mises-Fisher proposal for sphere constraints, and a uniform-on-manifold
stream backed by constrained HMC with zero potential.
"""

from __future__ import annotations

import math

import numpy as np
from scipy import linalg

__all__ = [
    "LinearConstraint",
    "SphereConstraint",
    "GeneralConstraint",
    "VmfParams",
    "sample_gaussian_linear",
    "linear_acceptance_weight",
    "sample_vmf",
    "sample_vmf_endpoint",
    "newton_project",
    "uniform_on_manifold",
    "uniform_on_plane_sphere",
]


class LinearConstraint:
    """A y = c with A a full-row-rank k x n matrix, k <= n."""

    def __init__(self, A, c):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.atleast_1d(np.asarray(c, dtype=float))
        k, n = A.shape
        if c.shape != (k,):
            raise ValueError("c must have one entry per constraint row")
        if k > n:
            raise ValueError("more constraints than dimensions")
        U, s, Vt = np.linalg.svd(A, full_matrices=True)
        if s.size == 0 or s[-1] < 1e-10 * s[0]:
            raise ValueError("constraint matrix is rank deficient")
        self.A = A
        self.c = c
        self.k = k
        self.n = n
        self._U = U
        self._s = s
        self._Vt = Vt
        self._gram_cho = linalg.cho_factor(A @ A.T)

    def residual(self, y):
        return np.asarray(y) @ self.A.T - self.c


class SphereConstraint:
    """||y - center|| = radius."""

    def __init__(self, center, radius: float):
        center = np.atleast_1d(np.asarray(center, dtype=float))
        if radius <= 0:
            raise ValueError("radius must be positive")
        self.center = center
        self.radius = float(radius)
        self.n = center.size


class GeneralConstraint:
    """h(y) = 0 with a user-supplied Jacobian; on-manifold tolerance in sup norm."""

    def __init__(self, h, jacobian_h, tolerance: float = 1e-9):
        if tolerance <= 0:
            raise ValueError("tolerance must be positive")
        self.h = h
        self.jacobian_h = jacobian_h
        self.tolerance = float(tolerance)

    def satisfied(self, y) -> bool:
        return float(np.max(np.abs(self.h(np.asarray(y, dtype=float))))) <= self.tolerance


class VmfParams:
    """Mean direction, concentration and carrier sphere of a vMF proposal."""

    def __init__(self, mu, kappa: float, center, radius: float):
        mu = np.asarray(mu, dtype=float)
        center = np.asarray(center, dtype=float)
        if kappa < 0:
            raise ValueError("concentration must be non-negative")
        if abs(np.linalg.norm(mu - center) - radius) > 1e-10 * radius:
            raise ValueError("mean direction must lie on the sphere")
        self.mu = mu
        self.kappa = float(kappa)
        self.center = center
        self.radius = float(radius)


def sample_gaussian_linear(x, T: float, constraint: LinearConstraint, rng: np.random.Generator):
    """Draw y ~ Normal(x, T*I) conditioned on A y = c (SVD routine).

    Vectorized: ``x`` of shape (n,) gives one draw, (B, n) gives B draws.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.shape[1] != constraint.n:
        raise ValueError("dimension mismatch with the constraint")
    k, n = constraint.k, constraint.n
    sqT = math.sqrt(T)
    alpha = constraint.c - xb @ constraint.A.T            # (B, k)
    # rotated coordinates: first k fixed by the constraint, rest standard normal
    v_fixed = (alpha @ constraint._U) / (sqT * constraint._s)
    v_free = rng.standard_normal((xb.shape[0], n - k))
    v = np.concatenate([v_fixed, v_free], axis=1)
    y = xb + sqT * (v @ constraint._Vt)
    resid = np.max(np.abs(y @ constraint.A.T - constraint.c))
    if resid > 1e-8 * (1.0 + np.max(np.abs(constraint.c))):
        raise RuntimeError("constrained Gaussian draw failed the residual check")
    return y[0] if single else y


def linear_acceptance_weight(x, T: float, constraint: LinearConstraint):
    """exp(-(c - A x)' (A A')^{-1} (c - A x) / (2T)), equal to 1 on the constraint."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    alpha = constraint.c - xb @ constraint.A.T
    solved = linalg.cho_solve(constraint._gram_cho, alpha.T).T
    quad = np.sum(alpha * solved, axis=1)
    w = np.exp(-quad / (2.0 * T))
    return float(w[0]) if single else w


def _vmf_cosine(kappa: float, d: int, rng: np.random.Generator) -> float:
    """Cosine of the angle to the mean direction (Wood's rejection sampler)."""
    if kappa == 0.0:
        # uniform on the sphere: density of the cosine prop. to (1-w^2)^((d-3)/2)
        return 2.0 * rng.beta(0.5 * (d - 1), 0.5 * (d - 1)) - 1.0
    b = (-2.0 * kappa + math.sqrt(4.0 * kappa**2 + (d - 1) ** 2)) / (d - 1)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1) * math.log(1.0 - x0 * x0)
    while True:
        z = rng.beta(0.5 * (d - 1), 0.5 * (d - 1))
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        if kappa * w + (d - 1) * math.log(1.0 - x0 * w) - c >= math.log(rng.random()):
            return w


def sample_vmf(mu_dir, kappa: float, rng: np.random.Generator):
    """Unit vector from the von Mises-Fisher law with mean direction mu_dir."""
    mu_dir = np.asarray(mu_dir, dtype=float)
    d = mu_dir.size
    if d < 2:
        raise ValueError("vMF needs ambient dimension >= 2")
    w = _vmf_cosine(kappa, d, rng)
    # uniform tangential direction orthogonal to mu_dir
    g = rng.standard_normal(d)
    g -= np.dot(g, mu_dir) * mu_dir
    norm = np.linalg.norm(g)
    while norm < 1e-12:
        g = rng.standard_normal(d)
        g -= np.dot(g, mu_dir) * mu_dir
        norm = np.linalg.norm(g)
    tangent = g / norm
    return w * mu_dir + math.sqrt(max(0.0, 1.0 - w * w)) * tangent


def sample_vmf_endpoint(x, T: float, constraint: SphereConstraint, rng: np.random.Generator):
    """(y on the sphere, stage-one weight) for y ~ Normal(x, T*I) | sphere.

    The vMF concentration is r^2 ||x - c|| / T toward the radial projection
    of x; the returned weight exp(-||x-c||^2 / (2T)) has maximum 1.
    """
    x = np.asarray(x, dtype=float)
    c = constraint.center
    r = constraint.radius
    dist = float(np.linalg.norm(x - c))
    if dist < 1e-12 * r:
        raise ValueError("x at the sphere center: mean direction undefined")
    mu_dir = (x - c) / dist
    kappa = r * r * dist / T
    y = c + r * sample_vmf(mu_dir, kappa, rng)
    weight = math.exp(-dist * dist / (2.0 * T))
    return y, weight


def newton_project(constraint: GeneralConstraint, z, max_iter: int = 50):
    """Gauss-Newton projection of z onto {h = 0}; raises on failure."""
    y = np.asarray(z, dtype=float).copy()
    for _ in range(max_iter):
        hv = np.atleast_1d(constraint.h(y))
        if np.max(np.abs(hv)) <= constraint.tolerance:
            return y
        J = np.atleast_2d(constraint.jacobian_h(y))
        step, *_ = np.linalg.lstsq(J, hv, rcond=None)
        y = y - step
    raise RuntimeError("Newton projection failed to reach the manifold")


def uniform_on_manifold(
    constraint: GeneralConstraint,
    seed_point,
    burn_in: int,
    thin: int,
    rng: np.random.Generator,
    step_size: float | None = None,
    leapfrog_steps: int = 8,
):
    """Generator of points uniform on {h = 0} w.r.t. its canonical measure.

    Backed by constrained HMC with zero potential; the seed point is
    Newton-projected to the manifold first.
    """
    from .manifold_chmc import ChmcConfig, ChmcState, chmc_step, tune_step_size

    start = newton_project(constraint, seed_point)

    def zero_potential(y):
        return 0.0, np.zeros_like(y)

    if step_size is None:
        step_size = tune_step_size(zero_potential, constraint, start, rng)
    config = ChmcConfig(step_size=step_size, leapfrog_steps=leapfrog_steps)
    state = ChmcState(position=start, potential=0.0)
    for _ in range(burn_in):
        state = chmc_step(state, zero_potential, constraint, config, rng)
    while True:
        for _ in range(max(1, thin)):
            state = chmc_step(state, zero_potential, constraint, config, rng)
        yield state.position.copy()


def uniform_on_plane_sphere(
    sum_value: float,
    center,
    radius: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Uniform draws on {sum(y) = s} intersected with a sphere.

    The intersection is a round (m-2)-sphere inside the hyperplane, so
    rotation-invariant sampling is direct: project the sphere center onto
    the plane, then add a uniformly directed tangent vector of the reduced
    radius.  Raises if the plane misses the sphere.
    """
    center = np.asarray(center, dtype=float)
    m = center.size
    ones = np.ones(m) / math.sqrt(m)
    gap = (sum_value - center.sum()) / math.sqrt(m)
    rad_sq = radius * radius - gap * gap
    if rad_sq <= 0:
        raise ValueError("plane does not intersect the sphere")
    circle_center = center + gap * ones
    rho = math.sqrt(rad_sq)
    B = 1 if size is None else size
    g = rng.standard_normal((B, m))
    g -= np.outer(g @ ones, ones)
    g /= np.linalg.norm(g, axis=1, keepdims=True)
    out = circle_center + rho * g
    return out[0] if size is None else out
