"""Hot loops for the flow solvers.

Semantics shared by the numba and numpy paths: a step advances a boundary
point through the exact constant-driver map x -> c + sign(x-c)*sqrt((x-c)^2
- 4*dt), where c is the driver's midpoint value on the step.  Two weld events
exist: a *contact* (the square root would go imaginary within the step, kind
1) and a *sweep* (the next step's constant lands on the other side of the
point, so the staircase driver crosses it at the step boundary, kind 2).
Both report the entry state of the event step so the caller can refine.

The computed times are exactly (to rounding) the first-contact times of the
piecewise-constant driver, which is what makes the comparison-theorem checks
in `loewner.hitting` exact rather than O(dt)-approximate.
"""

from __future__ import annotations

import cmath
import math

import numpy as np

try:  # pragma: no cover - exercised implicitly
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(f):
            return f

        return wrap


NO_EVENT = 0
CONTACT = 1
SWEEP = 2


@njit(cache=True)
def _evolve_events_nb(x0, start, mids, dts, edges, kinds, steps, xevent, xfinal, tau0):
    m = mids.shape[0]
    for i in range(x0.shape[0]):
        x = x0[i]
        kind = NO_EVENT
        jev = m
        xe = x
        t0 = math.inf
        j = start[i]
        while j < m:
            c = mids[j]
            dt4 = 4.0 * dts[j]
            g = x - c
            gg = g * g
            if gg <= dt4:
                kind = CONTACT
                jev = j
                xe = x
                t0 = edges[j] + gg / 4.0
                break
            xn = c + math.copysign(math.sqrt(gg - dt4), g)
            if j + 1 < m:
                c2 = mids[j + 1]
                if xn == c2 or ((xn > c2) != (xn > c)):
                    kind = SWEEP
                    jev = j
                    xe = x
                    t0 = edges[j + 1]
                    x = xn
                    break
            x = xn
            j += 1
        kinds[i] = kind
        steps[i] = jev
        xevent[i] = xe
        xfinal[i] = x
        tau0[i] = t0


def _evolve_events_np(x0, start, mids, dts, edges):
    n = x0.shape[0]
    m = mids.shape[0]
    x = x0.astype(float).copy()
    kinds = np.zeros(n, dtype=np.int8)
    steps = np.full(n, m, dtype=np.int64)
    xevent = x.copy()
    tau0 = np.full(n, math.inf)
    alive = np.ones(n, dtype=bool)
    waiting = start > 0
    for j in range(m):
        waiting &= start > j
        act = alive & ~waiting
        if not act.any():
            continue
        c = mids[j]
        dt4 = 4.0 * dts[j]
        g = x - c
        contact = act & (g * g <= dt4)
        if contact.any():
            kinds[contact] = CONTACT
            steps[contact] = j
            xevent[contact] = x[contact]
            tau0[contact] = edges[j] + (g[contact] ** 2) / 4.0
            alive &= ~contact
            act &= ~contact
        if act.any():
            xn = c + np.copysign(np.sqrt(np.maximum(g[act] ** 2 - dt4, 0.0)), g[act])
            if j + 1 < m:
                c2 = mids[j + 1]
                swept = (xn == c2) | ((xn > c2) != (xn > c))
                if swept.any():
                    ids = np.flatnonzero(act)[swept]
                    kinds[ids] = SWEEP
                    steps[ids] = j
                    xevent[ids] = x[ids]
                    tau0[ids] = edges[j + 1]
                    x[ids] = xn[swept]
                    alive[ids] = False
                    xn = xn[~swept]
                    act[ids] = False
            x[act] = xn
    return kinds, steps, xevent, x, tau0


def evolve_events(x0, start, mids, dts, edges):
    """March points through the staircase; returns (kinds, steps, xevent, xfinal, tau0)."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    start = np.ascontiguousarray(start, dtype=np.int64)
    if HAVE_NUMBA:
        n = x0.shape[0]
        kinds = np.empty(n, dtype=np.int8)
        steps = np.empty(n, dtype=np.int64)
        xevent = np.empty(n)
        xfinal = np.empty(n)
        tau0 = np.empty(n)
        _evolve_events_nb(x0, start, mids, dts, edges, kinds, steps, xevent, xfinal, tau0)
        return kinds, steps, xevent, xfinal, tau0
    return _evolve_events_np(x0, start, mids, dts, edges)


def evolve_trajectories(x0, mids, dts, edges):
    """Step-major march that records states at every edge.

    Returns (traj, kinds, steps, xevent, tau0); traj[k, i] is point i at
    edges[k], NaN once the point has welded.  Numpy only: trajectory consumers
    are small batches.
    """
    n = x0.shape[0]
    m = mids.shape[0]
    x = np.asarray(x0, dtype=float).copy()
    traj = np.full((m + 1, n), np.nan)
    traj[0] = x
    kinds = np.zeros(n, dtype=np.int8)
    steps = np.full(n, m, dtype=np.int64)
    xevent = x.copy()
    tau0 = np.full(n, math.inf)
    alive = np.ones(n, dtype=bool)
    for j in range(m):
        if not alive.any():
            break
        c = mids[j]
        dt4 = 4.0 * dts[j]
        g = x - c
        contact = alive & (g * g <= dt4)
        if contact.any():
            kinds[contact] = CONTACT
            steps[contact] = j
            xevent[contact] = x[contact]
            tau0[contact] = edges[j] + (g[contact] ** 2) / 4.0
            alive &= ~contact
        act = alive.copy()
        if act.any():
            xn = c + np.copysign(np.sqrt(np.maximum(g[act] ** 2 - dt4, 0.0)), g[act])
            if j + 1 < m:
                c2 = mids[j + 1]
                swept = (xn == c2) | ((xn > c2) != (xn > c))
                if swept.any():
                    ids = np.flatnonzero(act)[swept]
                    kinds[ids] = SWEEP
                    steps[ids] = j
                    xevent[ids] = x[ids]
                    tau0[ids] = edges[j + 1]
                    alive[ids] = False
            x[act] = xn
            traj[j + 1, act] = x[act]
    return traj, kinds, steps, xevent, tau0


@njit(cache=True)
def _rk4_nb(x0, xi_half, h, stop_gap, taus, xfinal, traj):
    m = (xi_half.shape[0] - 1) // 2
    for i in range(x0.shape[0]):
        x = x0[i]
        tau = math.inf
        traj[0, i] = x
        for j in range(m):
            xi = xi_half[2 * j]
            gap = x - xi
            if abs(gap) < stop_gap:
                tau = j * h + gap * gap / 4.0
                for k in range(j + 1, m + 1):
                    traj[k, i] = np.nan
                break
            k1 = -2.0 / gap
            xim = xi_half[2 * j + 1]
            k2 = -2.0 / (x + 0.5 * h * k1 - xim)
            k3 = -2.0 / (x + 0.5 * h * k2 - xim)
            k4 = -2.0 / (x + h * k3 - xi_half[2 * j + 2])
            x = x + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            traj[j + 1, i] = x
        taus[i] = tau
        xfinal[i] = x


def _rk4_np(x0, xi_half, h, stop_gap):
    m = (xi_half.shape[0] - 1) // 2
    n = x0.shape[0]
    x = np.asarray(x0, dtype=float).copy()
    taus = np.full(n, math.inf)
    traj = np.full((m + 1, n), np.nan)
    traj[0] = x
    alive = np.ones(n, dtype=bool)
    for j in range(m):
        if not alive.any():
            break
        gap = x - xi_half[2 * j]
        stopping = alive & (np.abs(gap) < stop_gap)
        if stopping.any():
            taus[stopping] = j * h + gap[stopping] ** 2 / 4.0
            alive &= ~stopping
        a = alive
        if a.any():
            xim = xi_half[2 * j + 1]
            k1 = -2.0 / gap[a]
            k2 = -2.0 / (x[a] + 0.5 * h * k1 - xim)
            k3 = -2.0 / (x[a] + 0.5 * h * k2 - xim)
            k4 = -2.0 / (x[a] + h * k3 - xi_half[2 * j + 2])
            x[a] = x[a] + h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
            traj[j + 1, a] = x[a]
    return taus, x, traj


def rk4_march(x0, xi_half, h, stop_gap):
    """Classical RK4 on dx/dt = -2/(x - xi(t)) with the constant-tail stop rule."""
    x0 = np.ascontiguousarray(x0, dtype=float)
    xi_half = np.ascontiguousarray(xi_half, dtype=float)
    if HAVE_NUMBA:
        m = (xi_half.shape[0] - 1) // 2
        n = x0.shape[0]
        taus = np.empty(n)
        xfinal = np.empty(n)
        traj = np.empty((m + 1, n))
        _rk4_nb(x0, xi_half, h, stop_gap, taus, xfinal, traj)
        return taus, xfinal, traj
    return _rk4_np(x0, xi_half, h, stop_gap)


@njit(cache=True)
def _trace_nb(mids_down, seeds, dt, out):
    n = seeds.shape[0]
    for k in range(1, n + 1):
        xr = seeds[k - 1]
        c = mids_down[k - 1]
        d = xr - c
        dd = d * d - 4.0 * dt
        if dd >= 0.0:
            w = complex(c + math.copysign(math.sqrt(dd), d), 0.0)
        else:
            w = complex(c, math.sqrt(-dd))
        for j in range(k - 2, -1, -1):
            c = mids_down[j]
            if w.imag == 0.0:
                d = w.real - c
                dd = d * d - 4.0 * dt
                if dd >= 0.0:
                    w = complex(c + math.copysign(math.sqrt(dd), d), 0.0)
                else:
                    w = complex(c, math.sqrt(-dd))
            else:
                z = w - c
                r = cmath.sqrt(z * z - 4.0 * dt)
                if r.imag < 0.0:
                    r = -r
                w = c + r
        out[k - 1] = w


def _slit_map_np(w, c, dt):
    real = w.imag == 0.0
    out = np.empty_like(w)
    if real.any():
        d = w.real[real] - c
        dd = d * d - 4.0 * dt
        pos = dd >= 0.0
        res = np.empty(d.shape, dtype=complex)
        res[pos] = c + np.copysign(np.sqrt(dd[pos]), d[pos])
        res[~pos] = c + 1j * np.sqrt(-dd[~pos])
        out[real] = res
    if (~real).any():
        z = w[~real] - c
        r = np.sqrt(z * z - 4.0 * dt)
        r = np.where(r.imag < 0.0, -r, r)
        out[~real] = c + r
    return out


def _trace_np(mids_down, seeds, dt):
    n = seeds.shape[0]
    # build partial compositions outermost-last: after processing map j the
    # buffer holds points for capacity indices j+1 .. n
    buf = np.empty(0, dtype=complex)
    for j in range(n - 1, -1, -1):
        buf = np.concatenate([[complex(seeds[j])], buf])
        buf = _slit_map_np(buf, mids_down[j], dt)
    return buf


def trace_points(mids_down, seeds, dt):
    """Curve points from composed slit maps, oldest map outermost."""
    mids_down = np.ascontiguousarray(mids_down, dtype=float)
    seeds = np.ascontiguousarray(seeds, dtype=float)
    if HAVE_NUMBA:
        out = np.empty(seeds.shape[0], dtype=np.complex128)
        _trace_nb(mids_down, seeds, dt, out)
        return out
    return _trace_np(mids_down, seeds, dt)
