"""Forward flow of the upward chordal equation dx/dt = -2/(x - xi(t)).

The workhorse discretisation replaces the driver by its midpoint staircase on
a step grid aligned with segment boundaries.  Each step is then solved in
closed form, so the only approximation is the staircase itself, and the
computed first-contact times are *exactly* the hitting times of that
staircase driver (see `loewner._kernels` for the two weld-event kinds).  An
optional near-hit refinement re-walks the event window with adaptively
halving sub-steps, resampling the true driver each time, which resolves
hitting times to about base_step * 4^-levels without committing the whole
march to a fine grid.

`rk4_oracle` is an independent check: classical RK4 on the same ODE with a
constant-driver tail once the point is within 10*sqrt(h) of the driver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .drivers import Driver, Orientation, SampledSegment, SqrtSegment

__all__ = [
    "StepPolicy",
    "Hit",
    "BoundaryTrajectory",
    "OracleRun",
    "step_constant",
    "step_grid",
    "shared_step_grid",
    "evolve_many",
    "evolve_point",
    "evolve_interior",
    "rk4_oracle",
]


@dataclass(frozen=True)
class StepPolicy:
    """Discretisation knobs shared across the package.

    base_step bounds the staircase step; min_substeps guarantees resolution on
    short segments; near_hit_levels is the refinement depth (0 disables
    refinement entirely, which is what the exact staircase comparisons want);
    oracle_step is the RK4 grid.
    """

    base_step: float = 1e-3
    min_substeps: int = 4
    near_hit_levels: int = 20
    oracle_step: float = 1e-3
    max_total_steps: int = 8_000_000

    def without_refinement(self) -> "StepPolicy":
        return replace(self, near_hit_levels=0)

    def refined(self, factor: float) -> "StepPolicy":
        return replace(self, base_step=self.base_step / factor)


@dataclass(frozen=True)
class Hit:
    """Exact weld inside a constant-driver step, sub_time past the step start."""

    sub_time: float


def step_constant(w, c: float, dt: float):
    """Advance one point through a constant-driver step of length dt.

    Real w returns either the real image or a Hit carrying the exact weld
    offset (w - c)^2 / 4.  Complex w (upper half-plane) always returns the
    image under the upper branch of sqrt((w - c)^2 - 4 dt).
    """
    if dt < 0.0:
        raise ValueError("dt must be nonnegative")
    if isinstance(w, complex) and w.imag != 0.0:
        if w.imag < 0.0:
            raise ValueError("interior points must lie in the closed upper half-plane")
        z = w - c
        r = np.sqrt(complex(z * z - 4.0 * dt))
        if r.imag < 0.0:
            r = -r
        return c + complex(r)
    x = w.real if isinstance(w, complex) else float(w)
    g = x - c
    gg = g * g
    if gg <= 4.0 * dt:
        return Hit(sub_time=gg / 4.0)
    return c + math.copysign(math.sqrt(gg - 4.0 * dt), g)


def _require_upward(driver: Driver) -> None:
    if driver.orientation is not Orientation.UP:
        raise ValueError("the forward flow consumes upward drivers; reverse first")


def _segment_edges(seg, t0: float, t1: float, policy: StepPolicy) -> np.ndarray:
    """Step edges inside [t0, t1), tuned to the segment's regularity.

    Sampled segments contribute their own knots (already graded if they came
    from a sqrt reversal), subdividing only intervals longer than base_step.
    Sqrt segments get edges clustered quadratically at the singular start.
    Everything else is uniform.
    """
    dur = t1 - t0
    if isinstance(seg, SampledSegment):
        kt = t0 + np.asarray(seg.times, dtype=float)
        gaps = np.diff(kt)
        long = np.flatnonzero(gaps > policy.base_step)
        if long.size == 0:
            return kt[:-1]
        pieces = [kt[:-1]]
        for i in long:
            mm = int(math.ceil(gaps[i] / policy.base_step))
            pieces.append(kt[i] + gaps[i] * np.arange(1, mm) / mm)
        return np.unique(np.concatenate(pieces))
    m = max(policy.min_substeps, int(math.ceil(dur / policy.base_step)))
    u = np.arange(m) / m
    if isinstance(seg, SqrtSegment):
        return t0 + dur * u * u
    return t0 + dur * u


def step_grid(driver: Driver, policy: StepPolicy | None = None):
    """Segment-aligned step edges and staircase midpoint values."""
    policy = policy or StepPolicy()
    parts = []
    total = 0
    seg_edges = driver.segment_edges
    for seg, t0, t1 in zip(driver.segments, seg_edges[:-1], seg_edges[1:]):
        e = _segment_edges(seg, t0, t1, policy)
        total += len(e)
        if total > policy.max_total_steps:
            raise ValueError(
                f"step grid would exceed {policy.max_total_steps} steps; "
                "raise base_step or max_total_steps"
            )
        parts.append(e)
    edges = np.unique(np.concatenate(parts + [[driver.horizon]]))
    mids = driver.values(0.5 * (edges[:-1] + edges[1:]))
    return edges, mids


def shared_step_grid(d1: Driver, d2: Driver, policy: StepPolicy | None = None):
    """One step grid serving two drivers: the union of both drivers' grids.

    Sharing the grid means both staircases jump at identical times, which is
    what makes the comparison-theorem checks exact for the pair.
    """
    policy = policy or StepPolicy()
    if abs(d1.horizon - d2.horizon) > 1e-12 * max(1.0, d1.horizon):
        raise ValueError("shared grids require equal horizons")
    e1, _ = step_grid(d1, policy)
    e2, _ = step_grid(d2, policy)
    edges = np.unique(np.concatenate([e1, e2]))
    keep = np.concatenate([[True], np.diff(edges) > 1e-15 * max(1.0, d1.horizon)])
    keep[-1] = True
    edges = edges[keep]
    if edges[-2] >= edges[-1]:
        edges = np.delete(edges, -2)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return edges, d1.values(centers), d2.values(centers)


def _refine_walk(driver: Driver, x: float, t_start: float, t_end: float, floor_dt: float):
    """Re-walk an event window with adaptive halving, resampling the driver.

    Returns (tau, state): tau is the refined weld time, or inf when the event
    dissolves at finer resolution, in which case state is the point's position
    at t_end.  Sweep events (the resampled staircase jumping across the point)
    rewind one piece and halve until the contact resolves or the floor is hit.
    """
    t = x_anchor_t = t_start
    size = (t_end - t_start) / 2.0
    if size <= 0.0:
        return math.inf, x
    cp = math.nan  # previous piece value; nan = no previous piece
    anchor = (t, x, size)
    rewinds = 0
    tiny = 1e-18 * max(1.0, abs(t_end))
    while t < t_end - tiny:
        size = min(size, t_end - t)
        c = driver.value(t + 0.5 * size)
        if not math.isnan(cp) and (x == c or ((x > c) != (x > cp))):
            at, ax, asize = anchor
            if asize <= floor_dt or rewinds > 200:
                return t, x
            rewinds += 1
            t, x, size = at, ax, asize / 2.0
            cp = math.nan
            continue
        g = x - c
        gg = g * g
        if gg <= 4.0 * size:
            if size <= floor_dt or rewinds > 200:
                return t + gg / 4.0, x
            size /= 2.0
            continue
        anchor = (t, x, size)
        x = c + math.copysign(math.sqrt(gg - 4.0 * size), g)
        t += size
        cp = c
        if size < (t_end - t_start) / 2.0:
            size *= 2.0
    return math.inf, x


@dataclass
class BoundaryTrajectory:
    """A boundary point's path under the upward flow, sampled at step edges.

    values holds NaN from the weld onward; tau is math.inf while the point is
    alive at the horizon.
    """

    x0: float
    times: np.ndarray
    values: np.ndarray
    tau: float

    @property
    def welded(self) -> bool:
        return math.isfinite(self.tau)

    def samples(self):
        mask = np.isfinite(self.values)
        return self.times[mask], self.values[mask]


@dataclass
class OracleRun:
    times: np.ndarray
    values: np.ndarray
    taus: np.ndarray


def _window_end(edges: np.ndarray, j: int) -> int:
    return min(j + 2, len(edges) - 1)


def evolve_many(driver: Driver, xs, policy: StepPolicy | None = None, grid=None):
    """Hitting times and final states for a batch of boundary points.

    Returns (taus, finals); taus[i] is math.inf for survivors and finals[i]
    is only meaningful for them.
    """
    policy = policy or StepPolicy()
    _require_upward(driver)
    if grid is None:
        edges, mids = step_grid(driver, policy)
    else:
        edges, mids = grid
    dts = np.diff(edges)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    if not np.all(np.isfinite(xs)):
        raise ValueError("boundary points must be finite")
    x_start = driver.start_value
    if np.any(xs == x_start):
        raise ValueError("points must not coincide with the driver's start value")
    n = xs.shape[0]
    start = np.zeros(n, dtype=np.int64)
    kinds, steps, xevent, xfinal, tau0 = _kernels.evolve_events(xs, start, mids, dts, edges)
    taus = tau0.copy()
    finals = xfinal.copy()
    if policy.near_hit_levels <= 0:
        return taus, finals

    n_steps = len(mids)
    work = [(i, int(steps[i]), float(xevent[i])) for i in np.flatnonzero(kinds != _kernels.NO_EVENT)]
    guard = 0
    while work:
        guard += 1
        if guard > n_steps + 10:
            raise RuntimeError("refinement worklist failed to converge")
        resume_idx, resume_x, resume_start = [], [], []
        for i, j, xe in work:
            jend = _window_end(edges, j)
            t0, t1 = edges[j], edges[jend]
            floor_dt = (t1 - t0) / (2.0 ** policy.near_hit_levels)
            tau, xc = _refine_walk(driver, xe, t0, t1, floor_dt)
            if math.isfinite(tau):
                taus[i] = tau
            elif jend >= n_steps:
                taus[i] = math.inf
                finals[i] = xc
            else:
                taus[i] = math.inf
                resume_idx.append(i)
                resume_x.append(xc)
                resume_start.append(jend)
        work = []
        if resume_idx:
            rx = np.array(resume_x)
            rs = np.array(resume_start, dtype=np.int64)
            kinds, steps, xevent, xfinal, _ = _kernels.evolve_events(rx, rs, mids, dts, edges)
            for k, i in enumerate(resume_idx):
                if kinds[k] != _kernels.NO_EVENT:
                    work.append((i, int(steps[k]), float(xevent[k])))
                else:
                    finals[i] = xfinal[k]
    return taus, finals


def evolve_point(driver: Driver, x0: float, policy: StepPolicy | None = None, grid=None) -> BoundaryTrajectory:
    """Single-point flow with edge-aligned samples and a refined weld time."""
    policy = policy or StepPolicy()
    _require_upward(driver)
    if grid is None:
        edges, mids = step_grid(driver, policy)
    else:
        edges, mids = grid
    dts = np.diff(edges)
    x0 = float(x0)
    if x0 == driver.start_value:
        raise ValueError("points must not coincide with the driver's start value")
    traj, kinds, steps, xevent, tau0 = _kernels.evolve_trajectories(
        np.array([x0]), mids, dts, edges
    )
    values = traj[:, 0]
    tau = float(tau0[0])
    if kinds[0] != _kernels.NO_EVENT and policy.near_hit_levels > 0:
        n_steps = len(mids)
        j = int(steps[0])
        xe = float(xevent[0])
        tau = math.inf
        while True:
            jend = _window_end(edges, j)
            t0, t1 = edges[j], edges[jend]
            floor_dt = (t1 - t0) / (2.0 ** policy.near_hit_levels)
            t_ref, xc = _refine_walk(driver, xe, t0, t1, floor_dt)
            if math.isfinite(t_ref):
                tau = t_ref
                break
            # event dissolved: march this point onward scalar-wise, recording
            values[jend] = xc
            x = xc
            jj = jend
            event = None
            while jj < n_steps:
                res = step_constant(x, float(mids[jj]), float(dts[jj]))
                if isinstance(res, Hit):
                    event = (jj, x)
                    break
                xn = float(res)
                if jj + 1 < n_steps:
                    c2 = mids[jj + 1]
                    if xn == c2 or ((xn > c2) != (xn > mids[jj])):
                        event = (jj, x)
                        values[jj + 1] = xn
                        break
                x = xn
                values[jj + 1] = x
                jj += 1
            if event is None:
                break
            j, xe = event
            values[j + 1 :] = np.nan
    return BoundaryTrajectory(x0=x0, times=edges, values=values, tau=tau)


def evolve_interior(driver: Driver, z0: complex, policy: StepPolicy | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Flow of an interior point; returns (times, positions) at step edges."""
    policy = policy or StepPolicy()
    _require_upward(driver)
    z0 = complex(z0)
    if z0.imag <= 0.0:
        raise ValueError("interior points need positive imaginary part")
    edges, mids = step_grid(driver, policy)
    dts = np.diff(edges)
    out = np.empty(len(edges), dtype=complex)
    out[0] = z = z0
    for j in range(len(mids)):
        z = step_constant(z, float(mids[j]), float(dts[j]))
        out[j + 1] = z
    return edges, out


def rk4_oracle(driver: Driver, xs, policy: StepPolicy | None = None) -> OracleRun:
    """Independent RK4 march of the same ODE, for cross-checking the stepper.

    Integration stops once |x - xi| < 10*sqrt(h) and the weld time is finished
    with the exact constant-driver formula, so constant-driver hitting times
    come out exact while generic drivers get an O(h^4) + tail estimate.
    """
    policy = policy or StepPolicy()
    _require_upward(driver)
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    T = driver.horizon
    m = max(8, int(math.ceil(T / policy.oracle_step)))
    h = T / m
    xi_half = driver.values(np.linspace(0.0, T, 2 * m + 1))
    stop_gap = 10.0 * math.sqrt(h)
    taus, xfinal, traj = _kernels.rk4_march(xs, xi_half, h, stop_gap)
    times = np.linspace(0.0, T, m + 1)
    return OracleRun(times=times, values=traj, taus=taus)
