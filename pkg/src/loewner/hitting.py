"""Hitting-time profiles, their inverses, and the comparison-theorem checks.

For an upward driver xi on [0, T], tau(x) is the first time the boundary
point x meets the driver; points outside [a, b] (the swallowed interval at
time T) never weld and report BEYOND_HORIZON.  The endpoints themselves are
located by predicate bisection on tau(x) <= T, and inverses of tau are
computed the same way rather than by interpolating, so their accuracy is set
by the bisection tolerance, not the profile grid.

The two check functions deliberately run with near-hit refinement disabled on
a step grid shared by both drivers: the computed times are then *exactly* the
first-contact times of two staircase drivers whose sup-distance is at most
the reported delta, and the monotone comparison bounds hold for those
staircases exactly.  Violations can therefore only come from rounding, which
is what the default slacks allow for.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drivers import Driver, sup_distance
from .flow import StepPolicy, evolve_many, shared_step_grid, step_grid

__all__ = [
    "BEYOND_HORIZON",
    "MonotonicityViolation",
    "HittingProfile",
    "SandwichReport",
    "LipschitzReport",
    "hitting_time",
    "hitting_profile",
    "inverse_hitting",
    "sandwich_check",
    "lipschitz_check",
]

BEYOND_HORIZON = math.inf

_ENDPOINT_ITERS = 52
_INVERSE_ITERS = 48


class MonotonicityViolation(RuntimeError):
    """A hitting profile failed to be monotone beyond repair tolerance."""

    def __init__(self, message, taus=None, indices=None):
        super().__init__(message)
        self.taus = taus
        self.indices = indices


@dataclass
class HittingProfile:
    """Sampled tau along both sides of the swallowed interval [start-a, start+b].

    Coordinates are absolute; a and b are the positive distances from the
    driver's start value to the interval ends.  left arrays run with
    increasing x (tau decreasing toward the start point), right arrays run
    with increasing x (tau increasing).
    """

    driver: Driver
    left_x: np.ndarray
    left_tau: np.ndarray
    right_x: np.ndarray
    right_tau: np.ndarray
    a: float
    b: float
    endpoint_tol: float
    policy: StepPolicy = field(repr=False, default_factory=StepPolicy)

    @property
    def start(self) -> float:
        return self.driver.start_value

    @property
    def horizon(self) -> float:
        return self.driver.horizon


def hitting_time(driver: Driver, x0: float, policy: StepPolicy | None = None) -> float:
    """First time the flow from x0 meets the driver, BEYOND_HORIZON if never."""
    taus, _ = evolve_many(driver, [x0], policy)
    return float(taus[0])


def _bracket_radius(driver: Driver) -> float:
    return 2.0 * math.sqrt(driver.horizon) + 2.0 * driver.sup_abs() + 1.0


def _find_endpoints(driver: Driver, policy: StepPolicy, grid) -> tuple[float, float, float]:
    """Locate the swallowed interval ends by bisection on tau(x) <= T."""
    start = driver.start_value
    T = driver.horizon
    rad = _bracket_radius(driver)
    lo = np.array([start - rad, start + 1e-14 * max(1.0, abs(start))])
    hi = np.array([start - 1e-14 * max(1.0, abs(start)), start + rad])
    # invariant: tau is finite at hi[0] and lo[1] (inner), infinite outside
    taus, _ = evolve_many(driver, [lo[0], hi[1]], policy, grid=grid)
    if np.isfinite(taus).any():
        raise RuntimeError("bracket radius too small for endpoint search")
    inner_lo, inner_hi = lo[0], hi[1]  # outer false ends
    left_true, right_true = hi[0], lo[1]
    for _ in range(_ENDPOINT_ITERS):
        mid_l = 0.5 * (inner_lo + left_true)
        mid_r = 0.5 * (right_true + inner_hi)
        taus, _ = evolve_many(driver, [mid_l, mid_r], policy, grid=grid)
        if math.isfinite(taus[0]):
            left_true = mid_l
        else:
            inner_lo = mid_l
        if math.isfinite(taus[1]):
            right_true = mid_r
        else:
            inner_hi = mid_r
    tol = max(inner_hi - right_true, left_true - inner_lo)
    return float(left_true), float(right_true), float(tol)


def _repair_monotone(tau: np.ndarray, increasing: bool, noise: float):
    """Sort out sub-noise inversions; returns (repaired, worst_violation)."""
    d = np.diff(tau)
    viol = -d if increasing else d
    finite = np.isfinite(viol)
    worst = float(viol[finite].max()) if finite.any() else 0.0
    if worst <= 0.0:
        return tau, 0.0
    if worst <= noise:
        if increasing:
            return np.maximum.accumulate(tau), worst
        return np.maximum.accumulate(tau[::-1])[::-1], worst
    return tau, worst


def hitting_profile(
    driver: Driver,
    n: int = 64,
    policy: StepPolicy | None = None,
    grid=None,
) -> HittingProfile:
    """Sample tau on both sides of the start point, geometric crowding near it."""
    policy = policy or StepPolicy()
    if n < 8:
        raise ValueError("need at least 8 profile points per side")
    if grid is None:
        grid = step_grid(driver, policy)
    left_end, right_end, tol = _find_endpoints(driver, policy, grid)
    start = driver.start_value
    a = start - left_end
    b = right_end - start
    n_geo = n // 2
    frac = np.concatenate(
        [
            np.geomspace(2e-4, 0.25, n_geo, endpoint=False),
            np.linspace(0.25, 1.0, n - n_geo),
        ]
    )
    right_x = start + b * frac
    left_x = start - a * frac[::-1]
    taus_r, _ = evolve_many(driver, right_x, policy, grid=grid)
    taus_l, _ = evolve_many(driver, left_x, policy, grid=grid)
    noise = 1e-8 * (1.0 + driver.horizon)
    for attempt in range(2):
        taus_r, worst_r = _repair_monotone(taus_r, increasing=True, noise=noise)
        taus_l, worst_l = _repair_monotone(taus_l, increasing=False, noise=noise)
        if max(worst_r, worst_l) <= noise:
            break
        if attempt == 0:
            finer = policy.refined(4.0)
            fine_grid = step_grid(driver, finer)
            taus_r, _ = evolve_many(driver, right_x, finer, grid=fine_grid)
            taus_l, _ = evolve_many(driver, left_x, finer, grid=fine_grid)
        else:
            d = np.diff(taus_r)
            bad = np.flatnonzero(-d > noise)
            raise MonotonicityViolation(
                f"hitting times fail to be monotone by {max(worst_r, worst_l):.3e} "
                f"(allowed {noise:.1e}) after one refinement",
                taus=taus_r if worst_r >= worst_l else taus_l,
                indices=bad,
            )
    return HittingProfile(
        driver=driver,
        left_x=left_x,
        left_tau=taus_l,
        right_x=right_x,
        right_tau=taus_r,
        a=float(a),
        b=float(b),
        endpoint_tol=tol,
        policy=policy,
    )


def _inverse_batch(
    profile: HittingProfile,
    ts: np.ndarray,
    side: str,
    policy: StepPolicy | None = None,
    grid=None,
    xtol: float = 1e-11,
) -> np.ndarray:
    """Lockstep bisection for tau^{-1}(ts) on one side; absolute coordinates."""
    driver = profile.driver
    policy = policy or profile.policy
    if grid is None:
        grid = step_grid(driver, policy)
    ts = np.asarray(ts, dtype=float)
    T = driver.horizon
    if np.any(ts < 0.0) or np.any(ts > T * (1 + 1e-12)):
        raise ValueError("inverse times must lie in [0, horizon]")
    start = profile.start
    if side == "right":
        xs, taus = profile.right_x, profile.right_tau
        outer = start + profile.b + max(4.0 * profile.endpoint_tol, 1e-9)
        sign = 1.0
    elif side == "left":
        xs, taus = profile.left_x[::-1], profile.left_tau[::-1]
        outer = start - profile.a - max(4.0 * profile.endpoint_tol, 1e-9)
        sign = -1.0
    else:
        raise ValueError("side must be 'left' or 'right'")
    # work in distance-from-start coordinates so both sides look increasing
    dist = sign * (xs - start)
    idx = np.searchsorted(taus, ts)
    lo = np.where(idx > 0, dist[np.clip(idx - 1, 0, len(dist) - 1)], 0.0)
    hi = np.where(idx < len(dist), dist[np.clip(idx, 0, len(dist) - 1)], sign * (outer - start))
    lo = lo.astype(float)
    hi = hi.astype(float)
    exact_zero = ts == 0.0
    scale = 1.0 + np.abs(dist[-1])
    for _ in range(_INVERSE_ITERS):
        if np.all(hi - lo <= xtol * scale):
            break
        mid = 0.5 * (lo + hi)
        probe = start + sign * np.maximum(mid, 1e-300)
        tm, _ = evolve_many(driver, probe, policy, grid=grid)
        ok = tm <= ts
        lo = np.where(ok, mid, lo)
        hi = np.where(ok, hi, mid)
    out = start + sign * 0.5 * (lo + hi)
    out[exact_zero] = start
    return out


def inverse_hitting(
    profile: HittingProfile,
    t: float,
    side: str,
    policy: StepPolicy | None = None,
    xtol: float = 1e-11,
) -> float:
    """The boundary point on the given side welding exactly at time t."""
    return float(_inverse_batch(profile, np.array([t]), side, policy=policy, xtol=xtol)[0])


@dataclass
class SandwichReport:
    delta: float
    n_checked: int
    max_violation: float
    slack: float

    @property
    def ok(self) -> bool:
        return self.max_violation <= self.slack


@dataclass
class LipschitzReport:
    delta: float
    times: np.ndarray
    gaps: np.ndarray
    sup_gap: float

    def within(self, slack: float = 1e-6) -> bool:
        return self.sup_gap <= self.delta + slack


def sandwich_check(
    d1: Driver,
    d2: Driver,
    n: int = 33,
    policy: StepPolicy | None = None,
    slack: float = 1e-7,
) -> SandwichReport:
    """Verify tau(y -+ delta; d1) brackets tau(y; d2) off the start interval.

    delta is the measured sup-distance; the grid keeps clear of
    [d1(0) - delta, d1(0) + delta] where the bound says nothing.
    """
    policy = (policy or StepPolicy()).without_refinement()
    delta = sup_distance(d1, d2)
    edges, m1, m2 = shared_step_grid(d1, d2, policy)
    g1, g2 = (edges, m1), (edges, m2)
    start = d1.start_value
    rad = max(_bracket_radius(d1), _bracket_radius(d2))
    margin = delta * 1.0000001 + 1e-9 * (1.0 + abs(start))
    ys_r = start + np.linspace(margin, rad, n)
    ys_l = start - np.linspace(margin, rad, n)[::-1]
    viol = 0.0
    for ys, inner_shift in ((ys_r, -delta), (ys_l, delta)):
        t_mid, _ = evolve_many(d2, ys, policy, grid=g2)
        t_inner, _ = evolve_many(d1, ys + inner_shift, policy, grid=g1)
        t_outer, _ = evolve_many(d1, ys - inner_shift, policy, grid=g1)
        # inner point welds no later than y under d2, outer no earlier
        with np.errstate(invalid="ignore"):
            v1 = np.where(np.isinf(t_mid), 0.0, np.maximum(0.0, t_inner - t_mid))
            v2 = np.where(np.isinf(t_outer), 0.0, np.maximum(0.0, t_mid - t_outer))
        viol = max(viol, float(np.max(v1)), float(np.max(v2)))
    return SandwichReport(delta=delta, n_checked=2 * n, max_violation=viol, slack=slack)


def lipschitz_check(
    d1: Driver,
    d2: Driver,
    times: np.ndarray | None = None,
    n_profile: int = 48,
    policy: StepPolicy | None = None,
    xtol: float = 1e-11,
) -> LipschitzReport:
    """Measure sup_t |tau^{-1}(t; d1) - tau^{-1}(t; d2)| over both sides.

    The comparison bound says this never exceeds the drivers' sup-distance;
    runs staircase-exact (shared grid, no refinement) so the only slack needed
    is bisection tolerance.
    """
    policy = (policy or StepPolicy()).without_refinement()
    T = d1.horizon
    if times is None:
        times = T * np.linspace(1.0 / 32, 1.0, 32)
    times = np.asarray(times, dtype=float)
    delta = sup_distance(d1, d2)
    edges, m1, m2 = shared_step_grid(d1, d2, policy)
    g1, g2 = (edges, m1), (edges, m2)
    p1 = hitting_profile(d1, n_profile, policy, grid=g1)
    p2 = hitting_profile(d2, n_profile, policy, grid=g2)
    gaps = np.zeros_like(times)
    for side in ("left", "right"):
        i1 = _inverse_batch(p1, times, side, policy=policy, grid=g1, xtol=xtol)
        i2 = _inverse_batch(p2, times, side, policy=policy, grid=g2, xtol=xtol)
        gaps = np.maximum(gaps, np.abs(i1 - i2))
    return LipschitzReport(delta=delta, times=times, gaps=gaps, sup_gap=float(gaps.max()))
