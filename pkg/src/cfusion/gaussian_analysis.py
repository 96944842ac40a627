"""Closed-form sum-conditioning of independent Gaussians and the
MSE-improvement decomposition used both as analysis tooling and as the
exactness oracle for the fusion sampler."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "GaussianConditioning",
    "MseDecomposition",
    "condition_on_sum",
    "mse_improvement",
    "uncertainty_domination_check",
]


@dataclass
class GaussianConditioning:
    mu_hat: np.ndarray
    sigma2_hat: np.ndarray
    s: float
    w2: float
    lam: np.ndarray
    mu_star: np.ndarray
    sigma_star: np.ndarray


@dataclass
class MseDecomposition:
    alpha: np.ndarray
    psi1: float
    psi2: float

    @property
    def total_improvement(self) -> float:
        return self.psi1 + self.psi2


def condition_on_sum(mu_hat, sigma2_hat, s: float) -> GaussianConditioning:
    """Law of independent N(mu_i, sigma2_i) given that they sum to s.

    mu*_i = mu_i + (sigma2_i / w^2)(s - sum mu),  w^2 = sum sigma2;
    Sigma* = diag(sigma2) - [sigma2_i sigma2_j / w^2].
    """
    mu_hat = np.asarray(mu_hat, dtype=float)
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)
    if np.any(sigma2_hat <= 0):
        raise ValueError("variances must be positive")
    w2 = float(sigma2_hat.sum())
    lam = sigma2_hat / w2
    mu_star = mu_hat + lam * (s - mu_hat.sum())
    sigma_star = np.diag(sigma2_hat) - np.outer(sigma2_hat, sigma2_hat) / w2
    return GaussianConditioning(mu_hat, sigma2_hat, float(s), w2, lam, mu_star, sigma_star)


def mse_improvement(alpha, sigma2_hat) -> MseDecomposition:
    """MSE reduction from conditioning on the observed sum.

    psi1 = sum alpha_i^2 - sum (alpha_i - lambda_i sum_j alpha_j)^2 is the
    bias-correction part (sign-indefinite); psi2 = sum sigma_i^4 / w^2 is
    the variance-reduction part (always non-negative).
    """
    alpha = np.asarray(alpha, dtype=float)
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)
    if alpha.shape != sigma2_hat.shape:
        raise ValueError("dimension mismatch")
    w2 = float(sigma2_hat.sum())
    lam = sigma2_hat / w2
    corrected = alpha - lam * alpha.sum()
    psi1 = float(np.sum(alpha**2) - np.sum(corrected**2))
    psi2 = float(np.sum(sigma2_hat**2) / w2)
    return MseDecomposition(alpha, psi1, psi2)


def uncertainty_domination_check(alpha, sigma2_hat, M: float) -> bool:
    """Sufficient condition under which the total improvement is >= 0:
    |alpha_i| <= lambda_i M for all i and w^2 >= 2 |sum alpha_i| M.

    The improvement is invariant under flipping the sign of every alpha_i,
    so the condition is stated through the absolute aggregate error; with
    the signed sum a negative aggregate would vacuously pass while the
    improvement can still be negative.
    """
    if M <= 0:
        raise ValueError("M must be positive")
    alpha = np.asarray(alpha, dtype=float)
    sigma2_hat = np.asarray(sigma2_hat, dtype=float)
    w2 = float(sigma2_hat.sum())
    lam = sigma2_hat / w2
    return bool(
        np.all(np.abs(alpha) <= lam * M) and w2 >= 2.0 * abs(alpha.sum()) * M
    )
