"""Poisson thinning of diffusion-bridge proposals.

The acceptance event with probability exp(-integral of phi along the bridge)
is simulated by throwing a unit-rate Poisson process on [0,T] x [0,M] and
checking that no point falls under the curve t -> phi(bridge(t)).  The
bounded variant needs a global bound M >= sup phi; the layered variant first
conditions the bridge on a layer so a finite box bound exists even when phi
is globally unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bridge_sim import (
    BridgeSkeleton,
    LayerSequence,
    bridge_interpolate,
    build_layered_skeleton,
)
from .density_core import ComponentDensity

__all__ = ["ThinningOutcome", "accept_bounded", "accept_layered"]


@dataclass
class ThinningOutcome:
    accepted: bool
    poisson_points_used: int
    bridge_points_revealed: int


def _as_skeleton_list(skeleton) -> list[BridgeSkeleton]:
    if isinstance(skeleton, BridgeSkeleton):
        return [skeleton]
    return list(skeleton)


def accept_bounded(
    density: ComponentDensity,
    skeleton,
    M: float,
    rng: np.random.Generator,
) -> ThinningOutcome:
    """Thinning acceptance with a valid bound M >= phi along the bridge.

    ``skeleton`` is one BridgeSkeleton for 1-d densities or a list of
    per-coordinate skeletons for multivariate ones (coordinates are
    independent bridges sharing the horizon).
    """
    skels = _as_skeleton_list(skeleton)
    if len(skels) != density.dimension:
        raise ValueError("one skeleton per density coordinate required")
    T = skels[0].T
    if any(s.T != T for s in skels):
        raise ValueError("skeletons must share the horizon")
    if M < 0:
        raise ValueError("bound must be non-negative")
    n = int(rng.poisson(T * M)) if M > 0 else 0
    if n == 0:
        return ThinningOutcome(True, 0, 0)
    times = np.sort(rng.uniform(0.0, T, size=n))
    marks = rng.uniform(0.0, M, size=n)
    revealed = 0
    for t, u in zip(times, marks):
        point = np.array([bridge_interpolate(s, float(t), rng) for s in skels])
        revealed += len(skels)
        val = float(density.phi(point if density.dimension > 1 else point[0]))
        if val > M * (1.0 + 1e-9) + 1e-12:
            raise RuntimeError(
                f"phi value {val} exceeds the supplied bound {M}; exactness broken"
            )
        if u <= val:
            return ThinningOutcome(False, n, revealed)
    return ThinningOutcome(True, n, revealed)


def accept_layered(
    density: ComponentDensity,
    skeleton,
    layers: LayerSequence,
    rng: np.random.Generator,
) -> ThinningOutcome:
    """Thinning acceptance via layered bridges and box-conditional phi bounds.

    Accepts fresh (no layer, no revealed points) skeletons; conditions each
    coordinate on its layer and extremum, bounds phi on the resulting box,
    and runs the bounded procedure with layer-consistent interpolation.
    """
    skels = _as_skeleton_list(skeleton)
    layered = []
    for s in skels:
        if s.revealed or s.layer is not None:
            raise ValueError("accept_layered requires fresh skeletons")
        layered.append(build_layered_skeleton(s.T, s.x, s.y, layers, rng))
    lo = np.array([s.value_box()[0] for s in layered])
    up = np.array([s.value_box()[1] for s in layered])
    M = density.phi_interval_bound(lo, up)
    out = accept_bounded(density, layered if len(layered) > 1 else layered[0], M, rng)
    # surface the conditioning on the caller's skeletons
    for fresh, cond in zip(skels, layered):
        fresh.layer = cond.layer
        fresh.extremum = cond.extremum
        fresh.revealed = cond.revealed
        fresh._decomp = cond._decomp
    return out


def accept_bounded_batch(
    phi_fn,
    x: np.ndarray,
    y: np.ndarray,
    T: float,
    M,
    rng: np.random.Generator,
) -> np.ndarray:
    """Vectorized bounded thinning for B independent scalar bridges.

    ``phi_fn(values, idx)`` evaluates the killing rate at bridge values,
    with ``idx`` giving the attempt index of each value (so per-attempt
    parameter arrays can be indexed).  ``M`` is a scalar or per-attempt
    array of valid bounds.  Returns a boolean acceptance array of shape (B,).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    B = x.shape[0]
    M_arr = np.broadcast_to(np.asarray(M, dtype=float), (B,))
    n = rng.poisson(T * M_arr)
    total = int(n.sum())
    accepted = np.ones(B, dtype=bool)
    if total == 0:
        return accepted
    rep = np.repeat(np.arange(B), n)
    t = rng.uniform(0.0, T, size=total)
    order = np.lexsort((t, rep))
    t = t[order]
    u = rng.uniform(0.0, M_arr[rep], size=total)

    ends = np.cumsum(n)
    starts = ends - n
    live = n > 0
    first_idx = starts[live]

    # bridge values at the sorted times: scaled BM increments, then pinning
    dt = np.empty(total)
    dt[1:] = t[1:] - t[:-1]
    dt[0] = t[0]
    dt[first_idx] = t[first_idx]
    steps = np.sqrt(dt) * rng.standard_normal(total)
    cs = np.cumsum(steps)
    base_full = np.concatenate(([0.0], cs))
    base = base_full[starts[rep]]
    W = cs - base
    W_end = np.zeros(B)
    W_end[live] = cs[ends[live] - 1] - base_full[starts[live]]
    t_last = np.where(live, t[np.where(live, ends - 1, 0)], 0.0)
    W_T = W_end + np.sqrt(np.maximum(T - t_last, 0.0)) * rng.standard_normal(B)
    omega = x[rep] + W - (t / T) * (W_T[rep] - (y[rep] - x[rep]))

    vals = phi_fn(omega, rep)
    if np.any(vals > M_arr[rep] * (1.0 + 1e-9) + 1e-12):
        raise RuntimeError("phi exceeded its bound in batch thinning")
    bad = u <= vals
    accepted[np.unique(rep[bad])] = False
    return accepted
