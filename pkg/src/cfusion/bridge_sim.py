"""Exact Brownian-bridge simulation: layers, extrema, Bessel segments.

The events needed by the rejection sampler (a bridge staying inside an
interval, a Bessel segment staying below a cap, layer membership) have
probabilities given by convergent alternating series.  They are simulated
*retrospectively*: draw u uniform and refine upper/lower partial-sum bounds
until u is separated from the probability.  No series is ever truncated at a
fixed order; a hard iteration cap raises instead of silently approximating.

A bridge conditioned on its maximum (value and time) splits into two
independent Bessel(3) bridges, which coincide with Brownian bridges
conditioned to stay positive.  That identity lets all interior-segment
events reduce to the interval series, with the one-endpoint-at-zero series
needed only for pieces touching the extremum.
"""

from __future__ import annotations

import bisect
import math

import numpy as np

__all__ = [
    "BridgeSkeleton",
    "LayerSequence",
    "SeriesBracket",
    "PointBracket",
    "ProductBracket",
    "ComplementBracket",
    "RatioBracket",
    "bernoulli_from_bracket",
    "evaluate_bracket",
    "interval_noexit_brackets",
    "bessel_upper_brackets",
    "onesided_noexit_prob",
    "bridge_interpolate",
    "crossing_event",
    "sample_layer",
    "sample_extremum_and_decompose",
    "build_layered_skeleton",
    "bessel_noleave_event",
]

_CAP = 10_000  # refinement cap for retrospective draws
_EPS = 1e-12


# ---------------------------------------------------------------------------
# probability brackets


class _Bracket:
    """A probability known only through tightening [lo, hi] bounds."""

    def refine(self):
        raise NotImplementedError


class PointBracket(_Bracket):
    def __init__(self, p: float):
        self._p = min(1.0, max(0.0, p))

    def refine(self):
        return self._p, self._p


class SeriesBracket(_Bracket):
    """Wraps a generator of monotone (lo, hi) pairs."""

    def __init__(self, gen):
        self._gen = gen
        self._last = (0.0, 1.0)

    def refine(self):
        try:
            lo, hi = next(self._gen)
        except StopIteration:
            return self._last
        lo = max(lo, self._last[0])
        hi = min(hi, self._last[1])
        if lo > hi + 1e-9:
            raise RuntimeError("series bounds crossed; invalid bracketing")
        self._last = (min(lo, hi), hi)
        return self._last


class ProductBracket(_Bracket):
    def __init__(self, children):
        self._children = list(children)

    def refine(self):
        lo, hi = 1.0, 1.0
        for c in self._children:
            clo, chi = c.refine()
            lo *= max(0.0, clo)
            hi *= max(0.0, chi)
        return lo, hi


class ComplementBracket(_Bracket):
    def __init__(self, child):
        self._child = child

    def refine(self):
        lo, hi = self._child.refine()
        return 1.0 - hi, 1.0 - lo


class RatioBracket(_Bracket):
    """num/den for probabilities with num <= den (clipped to [0, 1])."""

    def __init__(self, num, den):
        self._num = num
        self._den = den

    def refine(self):
        nlo, nhi = self._num.refine()
        dlo, dhi = self._den.refine()
        lo = 0.0 if dhi <= 0.0 else max(0.0, nlo) / dhi
        hi = 1.0 if dlo <= 0.0 else min(1.0, max(0.0, nhi) / dlo)
        return min(lo, 1.0), hi


def bernoulli_from_bracket(bracket: _Bracket, rng: np.random.Generator) -> bool:
    """Draw the event of bracketed probability p exactly (True w.p. p)."""
    u = rng.random()
    for _ in range(_CAP):
        lo, hi = bracket.refine()
        if u <= lo:
            return True
        if u > hi:
            return False
    raise RuntimeError("retrospective draw failed to resolve within iteration cap")


def evaluate_bracket(bracket: _Bracket, tol: float = 1e-12, cap: int = _CAP) -> float:
    """Tighten until hi - lo < tol; midpoint estimate (diagnostics/tests)."""
    lo, hi = 0.0, 1.0
    for _ in range(cap):
        lo, hi = bracket.refine()
        if hi - lo < tol:
            return 0.5 * (lo + hi)
    raise RuntimeError("bracket failed to converge to requested tolerance")


# ---------------------------------------------------------------------------
# alternating series


def interval_noexit_brackets(T: float, x: float, y: float, K: float):
    """Bounds for P(bridge x->y over [0,T] stays inside (-K, K)).

    Partial sums of 1 - sum_j (sigma_j - tau_j); valid alternating bounds
    once the interleaved term sequence is decreasing, (0, 1) before that.
    """
    if max(abs(x), abs(y)) >= K:
        while True:
            yield (0.0, 0.0)

    def sigma(j):
        a = math.exp(-2.0 / T * (2.0 * K * j - (K + x)) * (2.0 * K * j - (K + y)))
        b = math.exp(-2.0 / T * (2.0 * K * j - (K - x)) * (2.0 * K * j - (K - y)))
        return a + b

    def tau(j):
        a = math.exp(-2.0 * j / T * (4.0 * K * K * j + 2.0 * K * (x - y)))
        b = math.exp(-2.0 * j / T * (4.0 * K * K * j + 2.0 * K * (y - x)))
        return a + b

    upper = 1.0  # partial sum ending with +tau
    prev_term = math.inf
    valid = False
    j = 0
    while True:
        j += 1
        s_j = sigma(j)
        t_j = tau(j)
        if not valid and s_j <= prev_term and t_j <= s_j:
            valid = True
        elif valid and (s_j > prev_term + 1e-15 or t_j > s_j + 1e-15):
            raise RuntimeError("alternating series lost monotonicity")
        lower = upper - s_j
        upper = lower + t_j
        prev_term = t_j
        if valid:
            yield (max(0.0, lower), min(1.0, upper))
        else:
            yield (0.0, 1.0)


def _bessel_terms(T: float, y: float, K: float, j: int):
    """(zeta_j/y, paired difference (zeta_j - xi_j)/y), cancellation-safe."""
    A = 2.0 * j * j * K * K / T
    c = 2.0 * j * K * y / T
    two_jK = 2.0 * j * K
    zeta_over_y = (two_jK - y) * math.exp(c - A) / y
    if c < 1.0:
        em_p = math.expm1(c)
        em_m = math.expm1(-c)
        diff = math.exp(-A) * (two_jK * (em_p - em_m) - y * (2.0 + em_p + em_m)) / y
    else:
        xi_over_y = (two_jK + y) * math.exp(-c - A) / y
        diff = zeta_over_y - xi_over_y
    return zeta_over_y, diff


def bessel_upper_brackets(T: float, y: float, K: float):
    """Bounds for P(Bessel(3) bridge 0 -> y over [0,T] stays below K).

    The bridge is positive by construction; this is the probability of
    staying inside (0, K), i.e. 1 - (1/y) sum_j (zeta_j - xi_j).
    Endpoint at or above the cap has probability zero (the supremum over the
    closed segment reaches the cap).
    """
    if y >= K:
        while True:
            yield (0.0, 0.0)
    if y <= 0.0:
        raise ValueError("bessel series needs endpoint y > 0")

    upper = 1.0  # partial sum ending with +xi
    prev_term = math.inf
    valid = False
    j = 0
    while True:
        j += 1
        z_j, d_j = _bessel_terms(T, y, K, j)
        xi_j = z_j - d_j
        if not valid and z_j <= prev_term and xi_j <= z_j:
            valid = True
        lower = upper - z_j
        upper = upper - d_j
        prev_term = xi_j
        if valid:
            yield (max(0.0, lower), min(1.0, upper))
        else:
            yield (0.0, 1.0)


def onesided_noexit_prob(T: float, x: float, y: float) -> float:
    """P(bridge x->y over [0,T] stays above 0), both endpoints positive."""
    if x <= 0.0 or y <= 0.0:
        return 0.0
    return -math.expm1(-2.0 * x * y / T)


def _stay_bracket(dt: float, da: float, db: float, K: float) -> _Bracket:
    """Stay-inside-(0,K) probability for one revealed piece of a segment.

    Pieces touching the extremum (one end at distance 0) use the Bessel
    series, which is already conditioned on positivity; interior pieces use
    the two-sided interval series under the plain bridge law.
    """
    lo_end = min(da, db)
    hi_end = max(da, db)
    if hi_end >= K:
        return PointBracket(0.0)
    if lo_end <= 0.0:
        if hi_end <= 0.0:
            raise ValueError("piece with both ends at the extremum")
        return SeriesBracket(bessel_upper_brackets(dt, hi_end, K))
    half = 0.5 * K
    return SeriesBracket(interval_noexit_brackets(dt, da - half, db - half, half))


# ---------------------------------------------------------------------------
# skeletons


class LayerSequence:
    """Monotone layer radii 0 = a_0 < a_1 < a_2 < ...

    Default spacing is a_i = i * width; an explicit increasing prefix may be
    given, continued arithmetically past its end.
    """

    def __init__(self, width: float = 1.0, prefix=None):
        if width <= 0:
            raise ValueError("layer width must be positive")
        self.width = float(width)
        self.prefix = None
        if prefix is not None:
            p = [float(v) for v in prefix]
            if not p or p[0] != 0.0 or any(b <= a for a, b in zip(p, p[1:])):
                raise ValueError("prefix must start at 0 and strictly increase")
            self.prefix = p

    @classmethod
    def for_horizon(cls, T: float, c: float = 1.0) -> "LayerSequence":
        """Width proportional to the bridge standard deviation sqrt(T)."""
        return cls(width=c * math.sqrt(T))

    def __getitem__(self, i: int) -> float:
        if i < 0:
            raise IndexError("layer index must be >= 0")
        if self.prefix is not None:
            if i < len(self.prefix):
                return self.prefix[i]
            return self.prefix[-1] + (i - len(self.prefix) + 1) * self.width
        return i * self.width


class BridgeSkeleton:
    """A partially revealed bridge: endpoints, revealed points, layer data."""

    def __init__(self, T: float, x: float, y: float):
        if T <= 0:
            raise ValueError("horizon must be positive")
        self.T = float(T)
        self.x = float(x)
        self.y = float(y)
        self.revealed: list[tuple[float, float]] = []
        self.layer: tuple[float, float] | None = None
        self.extremum: tuple[float, float, str] | None = None
        self._decomp: "_LayeredDecomposition | None" = None

    def _record(self, t: float, v: float):
        times = [p[0] for p in self.revealed]
        self.revealed.insert(bisect.bisect_left(times, t), (t, v))

    def value_box(self) -> tuple[float, float]:
        """Interval certainly containing every path value (layered skeletons)."""
        if self._decomp is not None:
            return self._decomp.value_box()
        if self.layer is not None:
            return self.layer
        raise ValueError("no layer information on this skeleton")


def bridge_interpolate(skeleton: BridgeSkeleton, t: float, rng: np.random.Generator) -> float:
    """Reveal the bridge at time t from its conditional law given all
    previously revealed points (and layer/extremum conditioning if present)."""
    if not (0.0 < t < skeleton.T):
        raise ValueError("t must lie strictly inside (0, T)")
    if skeleton._decomp is not None:
        v = skeleton._decomp.interpolate(t, rng)
        skeleton._record(t, v)
        return v
    # plain conditional Gaussian between the nearest revealed neighbours
    pts = [(0.0, skeleton.x)] + skeleton.revealed + [(skeleton.T, skeleton.y)]
    idx = bisect.bisect_left([p[0] for p in pts], t)
    (ta, va), (tb, vb) = pts[idx - 1], pts[idx]
    if t == ta or t == tb:
        raise ValueError("time already revealed")
    w = (t - ta) / (tb - ta)
    var = (t - ta) * (tb - t) / (tb - ta)
    v = va + w * (vb - va) + math.sqrt(var) * rng.standard_normal()
    skeleton._record(t, v)
    return v


# ---------------------------------------------------------------------------
# events


def crossing_event(T: float, x: float, y: float, K: float, rng: np.random.Generator) -> bool:
    """True iff the bridge stays inside [-K, K]; exact retrospective draw."""
    if max(abs(x), abs(y)) >= K:
        raise ValueError("endpoints must lie strictly inside (-K, K)")
    return bernoulli_from_bracket(
        SeriesBracket(interval_noexit_brackets(T, x, y, K)), rng
    )


def sample_layer(
    T: float, x: float, y: float, layers: LayerSequence, rng: np.random.Generator,
    max_index: int = 1000,
) -> int:
    """Smallest I >= 1 with the path inside [min(x,y)-a_I, max(x,y)+a_I]."""
    u = rng.random()
    half_gap = 0.5 * abs(x - y)
    xs = 0.5 * (x - y)
    for i in range(1, max_index + 1):
        bracket = SeriesBracket(
            interval_noexit_brackets(T, xs, -xs, half_gap + layers[i])
        )
        for _ in range(_CAP):
            lo, hi = bracket.refine()
            if u <= lo:
                return i
            if u > hi:
                break
        else:
            raise RuntimeError("layer probability failed to resolve")
    raise RuntimeError("layer index exceeded cap; pathological layer sequence")


def bessel_noleave_event(
    T: float, x: float, y: float, K: float, rng: np.random.Generator,
    L: float | None = None,
) -> bool:
    """True iff a Bessel-type bridge x->y stays inside (0, K).

    With L given (K < L), the event is conditional on not leaving (0, L).
    Endpoints at 0 follow the Bessel(3) law (conditioned positive); interior
    endpoints follow the bridge law restricted to positive paths.
    """
    if x < 0 or y < 0 or K <= max(x, y):
        raise ValueError("need 0 <= x, y < K")
    if L is not None and L <= K:
        raise ValueError("need K < L")

    def stay(cap):
        if min(x, y) <= 0.0:
            z = max(x, y)
            if z <= 0.0:
                raise ValueError("both endpoints at zero is unsupported")
            return SeriesBracket(bessel_upper_brackets(T, z, cap))
        half = 0.5 * cap
        inner = SeriesBracket(interval_noexit_brackets(T, x - half, y - half, half))
        pos = PointBracket(onesided_noexit_prob(T, x, y))
        return RatioBracket(inner, pos)

    bracket = stay(K) if L is None else RatioBracket(stay(K), stay(L))
    return bernoulli_from_bracket(bracket, rng)


# ---------------------------------------------------------------------------
# layered decomposition


def _sample_inverse_gaussian(mu: float, lam: float, rng: np.random.Generator) -> float:
    nu = rng.standard_normal()
    w = nu * nu
    x = mu + mu * mu * w / (2.0 * lam) - mu / (2.0 * lam) * math.sqrt(
        4.0 * mu * lam * w + mu * mu * w * w
    )
    if rng.random() <= mu / (mu + x):
        return x
    return mu * mu / x


def _sample_argmax_time(T: float, a1: float, a2: float, rng: np.random.Generator) -> float:
    """Time of the maximum of a bridge given the max; a1 = M-x, a2 = M-y.

    The variable Z = (T - tau)/tau is a two-part inverse-Gaussian mixture.
    """
    a1 = max(a1, 1e-300)
    a2 = max(a2, 1e-300)
    if rng.random() < a1 / (a1 + a2):
        z = _sample_inverse_gaussian(a2 / a1, a2 * a2 / T, rng)
    else:
        z = 1.0 / _sample_inverse_gaussian(a1 / a2, a1 * a1 / T, rng)
    return T / (1.0 + z)


class _Segment:
    """One side of the extremum, in distance-from-extremum coordinates.

    ``points`` holds (time, distance) including both segment ends; the end at
    the extremum has distance 0.  ``exited_inner`` records the step-5 event:
    whether the distance path exceeds the inner cap K_in somewhere.
    """

    def __init__(self, t0, d0, t1, d1):
        self.points = [(t0, d0), (t1, d1)]
        self.exited_inner = False

    def pieces(self):
        return list(zip(self.points, self.points[1:]))


class _LayeredDecomposition:
    """Bridge conditioned on its layer via the extremum decomposition.

    Works in sign-flipped coordinates so the conditioned extremum is always
    a maximum; exposes interpolation consistent with every event drawn so
    far (stay below K_out everywhere, per-segment inner-cap exit flags).
    """

    def __init__(self, T, x, y, layer_index, layers, rng, max_restarts=100_000):
        self.T = T
        a_in = layers[layer_index - 1]
        a_out = layers[layer_index]
        for _ in range(max_restarts):
            is_max = rng.random() < 0.5
            sign = 1.0 if is_max else -1.0
            X, Y = sign * x, sign * y
            mbar = max(X, Y)
            mn = min(X, Y)
            # maximum in the band via inversion of 1 - exp(-2(b-X)(b-Y)/T)
            g_hi = -math.expm1(-2.0 * (mbar + a_out - X) * (mbar + a_out - Y) / T)
            g_lo = -math.expm1(-2.0 * (mbar + a_in - X) * (mbar + a_in - Y) / T)
            w = g_lo + (g_hi - g_lo) * rng.random()
            q = -0.5 * T * math.log1p(-w)
            M = 0.5 * ((X + Y) + math.sqrt((X - Y) ** 2 + 4.0 * q))
            M = min(max(M, mbar + a_in), mbar + a_out)
            tau = _sample_argmax_time(T, M - X, M - Y, rng)
            K_out = M - mn + a_out
            K_in = M - mn + a_in
            left = _Segment(0.0, M - X, tau, 0.0)
            right = _Segment(tau, 0.0, T, M - Y)
            # step 4: both Bessel segments stay below the outer cap
            if not bernoulli_from_bracket(
                _stay_bracket(tau, M - X, 0.0, K_out), rng
            ):
                continue
            if not bernoulli_from_bracket(
                _stay_bracket(T - tau, 0.0, M - Y, K_out), rng
            ):
                continue
            # step 5: does either segment exceed the inner cap (given step 4)?
            exited = False
            for seg, dt, d in ((left, tau, M - X), (right, T - tau, M - Y)):
                ends = (d, 0.0) if seg is left else (0.0, d)
                ratio = RatioBracket(
                    _stay_bracket(dt, ends[0], ends[1], K_in),
                    _stay_bracket(dt, ends[0], ends[1], K_out),
                )
                seg.exited_inner = not bernoulli_from_bracket(ratio, rng)
                exited = exited or seg.exited_inner
            # step 6: layer-overlap double count is removed by a fair coin
            if exited and rng.random() < 0.5:
                continue
            self.sign = sign
            self.M = M
            self.tau = tau
            self.K_out = K_out
            self.K_in = K_in
            self.left = left
            self.right = right
            self.kind = "max" if is_max else "min"
            return
        raise RuntimeError("extremum decomposition exhausted its restart budget")

    def extremum(self):
        return (self.tau, self.sign * self.M, self.kind)

    def value_box(self):
        if self.sign > 0:
            return (self.M - self.K_out, self.M)
        return (-self.M, -(self.M - self.K_out))

    def interpolate(self, t, rng, max_attempts=1_000_000):
        seg = self.left if t <= self.tau else self.right
        times = [p[0] for p in seg.points]
        idx = bisect.bisect_left(times, t)
        (ta, da), (tb, db) = seg.points[idx - 1], seg.points[idx]
        if t == ta or t == tb:
            raise ValueError("time already revealed")
        for _ in range(max_attempts):
            v = self._propose(ta, da, tb, db, t, rng)
            if v <= 0.0 or v >= self.K_out:
                continue
            factors = [
                _stay_bracket(t - ta, da, v, self.K_out),
                _stay_bracket(tb - t, v, db, self.K_out),
            ]
            ratios = []
            for (pa, dpa), (pb, dpb) in seg.pieces():
                if pa == ta and pb == tb:
                    sub = [((ta, da), (t, v)), ((t, v), (tb, db))]
                else:
                    sub = [((pa, dpa), (pb, dpb))]
                for (qa, dqa), (qb, dqb) in sub:
                    ratios.append(
                        RatioBracket(
                            _stay_bracket(qb - qa, dqa, dqb, self.K_in),
                            _stay_bracket(qb - qa, dqa, dqb, self.K_out),
                        )
                    )
            flag = ProductBracket(ratios)
            if seg.exited_inner:
                flag = ComplementBracket(flag)
            accept = ProductBracket(factors + [flag])
            if bernoulli_from_bracket(accept, rng):
                seg.points.insert(idx, (t, v))
                return self.sign * (self.M - v)
        raise RuntimeError("layered interpolation exhausted its attempt budget")

    @staticmethod
    def _propose(ta, da, tb, db, t, rng):
        S = tb - ta
        if da <= 0.0 or db <= 0.0:
            # piece anchored at the extremum: Bessel(3) bridge from the zero end
            if da <= 0.0:
                s, d_far = t - ta, db
            else:
                s, d_far = tb - t, da
            mean = d_far * s / S
            sd = math.sqrt(s * (S - s) / S)
            g = rng.standard_normal(3)
            return math.hypot(mean + sd * g[0], sd * g[1], sd * g[2])
        w = (t - ta) / S
        var = (t - ta) * (tb - t) / S
        return da + w * (db - da) + math.sqrt(var) * rng.standard_normal()


def sample_extremum_and_decompose(
    skeleton: BridgeSkeleton,
    layer_index: int,
    layers: LayerSequence,
    rng: np.random.Generator,
) -> BridgeSkeleton:
    """Condition the skeleton on layer membership via the two-Bessel split."""
    if skeleton.revealed:
        raise ValueError("decomposition must precede interior revelations")
    decomp = _LayeredDecomposition(
        skeleton.T, skeleton.x, skeleton.y, layer_index, layers, rng
    )
    skeleton._decomp = decomp
    skeleton.extremum = decomp.extremum()
    mn = min(skeleton.x, skeleton.y)
    mx = max(skeleton.x, skeleton.y)
    skeleton.layer = (mn - layers[layer_index], mx + layers[layer_index])
    return skeleton


def build_layered_skeleton(
    T: float, x: float, y: float, layers: LayerSequence, rng: np.random.Generator
) -> BridgeSkeleton:
    """Draw the layer, then the extremum decomposition, for a fresh bridge."""
    skeleton = BridgeSkeleton(T, x, y)
    index = sample_layer(T, x, y, layers, rng)
    return sample_extremum_and_decompose(skeleton, index, layers, rng)
