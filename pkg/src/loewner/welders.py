"""Drivers that weld prescribed boundary pairs through fast oscillations.

Two constructions share one capture gadget.  To weld the images (x, y) of a
pair quickly, the driver moves in a short time to just below the upper
image (clearance eps1), then drags it downward: while the gap stays exactly
eps1 the image falls at speed 2/eps1, and a driver segment of that slope
keeps the pair in lockstep.  The lockstep is an unstable equilibrium, so it
is realized as a chain of short linear segments whose slopes re-anchor to
-2/(current gap); the exact one-step map reproduces the ride without drift,
and each segment contributes one knot of the final driver.  The drag ends
when the driver crosses the midpoint of the two images (both then sit about
eps1 away); freezing there welds them simultaneously after (gap/2)^2/4.

`make_oscillating_welder` reproduces a target welding schedule on a uniform
mesh of hitting-time levels: per block it parks at the midpoint of the
current pair's images (the constant value that maximizes the pair's
remaining welding time, so a non-constant target leaves slack), then spends
the tail of the block on a capture whose drag length is solved so the weld
lands exactly on the block boundary.  `make_counterexample_welder` instead
welds (-k/n, k/n) as fast as possible; the driver must still travel out to
the image of each outer point, so its sup-norm stays macroscopic while its
welding approaches x -> -x.
"""

from __future__ import annotations

import math

import numpy as np

from .drivers import Driver, piecewise_linear
from .flow import StepPolicy, step_grid
from .hitting import HittingProfile, _inverse_batch

__all__ = [
    "make_oscillating_welder",
    "make_counterexample_welder",
    "CaptureFailure",
]

_MAX_STEPS = 2_000_000
_RIDE_EFOLDS = 6.0


class CaptureFailure(RuntimeError):
    """A capture gadget could not weld its pair inside the allotted window."""


def _step_exact(x: float, c: float, dt: float):
    g = x - c
    s = g * g - 4.0 * dt
    if s <= 0.0:
        return None
    return c + math.copysign(math.sqrt(s), g)


def _march_pair(x: float, y: float, c0: float, c1: float, dur: float):
    """Advance the pair through a linear driver ramp; exact midpoint steps."""
    if dur <= 0.0:
        return x, y
    slope = (c1 - c0) / dur
    s = 0.0
    steps = 0
    while s < dur:
        rem = dur - s
        c_now = c0 + slope * s
        g = min(abs(x - c_now), abs(y - c_now))
        dt = min(rem, dur / 16.0, max(g * g / 16.0, dur * 1e-12))
        last = dt >= 0.999 * rem
        if last:
            dt = rem
        cm = c0 + slope * (s + 0.5 * dt)
        xn = _step_exact(x, cm, dt)
        yn = _step_exact(y, cm, dt)
        if xn is None or yn is None:
            raise CaptureFailure("pair image contacted the driver mid-ramp")
        x, y = xn, yn
        s = dur if last else s + dt
        steps += 1
        if steps > _MAX_STEPS:
            raise CaptureFailure("pair march exceeded the step budget")
    return x, y


def _march_points(arr: np.ndarray, c0: float, c1: float, dur: float) -> np.ndarray:
    """Vectorized linear-ramp march for the uninvolved mesh points."""
    if arr.size == 0 or dur <= 0.0:
        return arr
    slope = (c1 - c0) / dur
    s = 0.0
    steps = 0
    while s < dur:
        rem = dur - s
        c_now = c0 + slope * s
        g2 = float(np.min((arr - c_now) ** 2))
        dt = min(rem, dur / 8.0, max(g2 / 16.0, dur * 1e-12))
        last = dt >= 0.999 * rem
        if last:
            dt = rem
        cm = c0 + slope * (s + 0.5 * dt)
        d = arr - cm
        rad = d * d - 4.0 * dt
        if np.any(rad <= 0.0):
            raise CaptureFailure("a mesh point was captured out of order")
        arr = cm + np.copysign(np.sqrt(rad), d)
        s = dur if last else s + dt
        steps += 1
        if steps > _MAX_STEPS:
            raise CaptureFailure("point march exceeded the step budget")
    return arr


def _march_points_pl(arr: np.ndarray, times: np.ndarray, vals: np.ndarray) -> np.ndarray:
    """March points through a knot chain, one anchored step per segment.

    The ride segments are far shorter than the points' own timescales, so a
    single exact step per segment suffices; fall back to the adaptive ramp
    march if a point ever gets close."""
    if arr.size == 0:
        return arr
    for i in range(len(times) - 1):
        h = float(times[i + 1] - times[i])
        if h <= 0.0:
            continue
        cm = 0.5 * (float(vals[i]) + float(vals[i + 1]))
        d = arr - cm
        rad = d * d - 4.0 * h
        if np.any(rad <= 16.0 * h):
            arr = _march_points(arr, float(vals[i]), float(vals[i + 1]), h)
        else:
            arr = cm + np.copysign(np.sqrt(rad), d)
    return arr


def _advance_points_const(arr: np.ndarray, c: float, dur: float) -> np.ndarray:
    if arr.size == 0 or dur <= 0.0:
        return arr
    d = arr - c
    rad = d * d - 4.0 * dur
    if np.any(rad <= 0.0):
        raise CaptureFailure("a mesh point was captured during a hold")
    return c + np.copysign(np.sqrt(rad), d)


def _clean_knots(knots):
    """Drop knots closer than the time resolution (colliding knots always
    share their value by construction, so keeping the later one is safe)."""
    horizon = knots[-1][0]
    tol = 32.0 * float(np.spacing(max(horizon, 1.0)))
    out = [knots[0]]
    for t, v in knots[1:]:
        if t - out[-1][0] <= tol and len(out) > 1:
            out[-1] = (t, v)
        elif t - out[-1][0] <= tol:
            out.append((out[-1][0] + tol, v))
        else:
            out.append((t, v))
    return out


def _hold_advance(x: float, y: float, m: float, h: float):
    """Exact evolution through a constant hold at m; None once welded."""
    if h <= 0.0:
        return x, y
    dx = m - x
    dy = y - m
    sx = dx * dx - 4.0 * h
    sy = dy * dy - 4.0 * h
    if sx <= 0.0 or sy <= 0.0:
        return None
    return m - math.sqrt(sx), m + math.sqrt(sy)


def _solve_move_target(x: float, y: float, c_from: float, move_time: float, eps1: float):
    """Find the ramp endpoint v that leaves the upper image exactly eps1
    above it.  The image falls while the driver approaches, so the naive
    guess y - eps1 can overshoot into contact; climb by fixed point while
    safe and bisect once the overshoot side is bracketed."""
    lo = c_from
    hi = None
    v = y - eps1
    best = None
    for _ in range(80):
        try:
            xm, ym = _march_pair(x, y, c_from, v, move_time)
            gap = ym - v
        except CaptureFailure:
            gap = -math.inf
            xm = ym = math.nan
        if gap < eps1:
            hi = v
        else:
            lo = v
            best = (v, xm, ym)
            if gap <= eps1 * (1.0 + 1e-3):
                break
        if hi is None:
            v = ym - eps1
        else:
            v = 0.5 * (lo + hi)
    if best is None:
        raise CaptureFailure("could not place the move endpoint below the image")
    return best


def _solve_hold_value(x: float, y: float, c_from: float, move_time: float):
    """Find the ramp endpoint that equals the midpoint of the images at the
    end of the ramp, so a subsequent hold squeezes the pair symmetrically."""
    gap = y - x
    lo, f_lo = None, None
    hi = None
    v = 0.5 * (x + y)
    best = None
    for _ in range(80):
        try:
            xm, ym = _march_pair(x, y, c_from, v, move_time)
            f = 0.5 * (xm + ym) - v
        except CaptureFailure:
            # which image did the ramp hit: classify by proximity
            f = 1.0 if abs(v - x) < abs(y - v) else -1.0
            xm = ym = math.nan
        if f > 0.0:
            lo = v
        else:
            hi = v
        if math.isfinite(xm):
            if best is None or abs(f) < best[0]:
                best = (abs(f), v, xm, ym)
            if abs(f) <= 1e-9 * gap:
                break
        if lo is not None and hi is not None:
            v = 0.5 * (lo + hi)
        elif math.isfinite(xm):
            v = 0.5 * (xm + ym)
        else:
            v = 0.5 * (x + y)
    if best is None:
        raise CaptureFailure("could not place the hold value at the image midpoint")
    return best[1], best[2], best[3]


def _ride(x: float, y: float, c0: float, eps1: float, stop_weld_below=None, t_base: float = 0.0):
    """Drag the upper image down from clearance eps1 until the driver meets
    the pair midpoint, or until the projected weld time falls below
    stop_weld_below.  Returns the knot trajectory (s, c, x, y arrays) and
    the midpoint event (s, c, x, y) or None if the scan stopped early."""
    h = 0.5 * _RIDE_EFOLDS * eps1 * eps1
    s_l, c_l, x_l, y_l = [0.0], [c0], [x], [y]
    s, c = 0.0, c0
    for _ in range(_MAX_STEPS):
        g = y - c
        if g <= 0.0:
            raise CaptureFailure("ride lost its image")
        slope = -2.0 / g
        c_next = c + slope * h
        xn, yn = _march_pair(x, y, c, c_next, h)
        if c_next <= 0.5 * (xn + yn):
            lo, hi = 0.0, h
            for _ in range(60):
                md = 0.5 * (lo + hi)
                try:
                    xm, ym = _march_pair(x, y, c, c + slope * md, md)
                except CaptureFailure:
                    hi = md
                    continue
                if c + slope * md <= 0.5 * (xm + ym):
                    hi = md
                else:
                    lo = md
            md = max(hi, 1e-300)
            try:
                xm, ym = _march_pair(x, y, c, c + slope * md, md)
            except CaptureFailure:
                md = lo
                xm, ym = _march_pair(x, y, c, c + slope * md, md)
            traj = (np.array(s_l), np.array(c_l), np.array(x_l), np.array(y_l))
            return traj, (s + md, c + slope * md, xm, ym)
        x, y, c, s = xn, yn, c_next, s + h
        s_l.append(s)
        c_l.append(c)
        x_l.append(x)
        y_l.append(y)
        if stop_weld_below is not None:
            gap = y - x
            if t_base + s + gap * gap / 16.0 < stop_weld_below:
                traj = (np.array(s_l), np.array(c_l), np.array(x_l), np.array(y_l))
                return traj, None
    raise CaptureFailure("ride exceeded the segment budget")


def make_oscillating_welder(target: HittingProfile, n: int, epsilon: float | None = None) -> Driver:
    """Driver reproducing the target welding on a uniform n-level time mesh.

    Welds the preimage pair of each hitting-time level j*T/n at that time
    (exactly when the block's slack admits a capture, within O(epsilon)
    otherwise) using midpoint holds plus end-of-block captures.  epsilon
    bounds the fast phases; it must stay below T/(4n).
    """
    if n < 1:
        raise ValueError("need at least one mesh level")
    T = target.horizon
    if epsilon is None:
        epsilon = T / (16.0 * n)
    if not 0.0 < epsilon < T / (4.0 * n):
        raise ValueError("epsilon must lie in (0, T/(4n))")
    pol = target.policy or StepPolicy()
    grid = step_grid(target.driver, pol)
    levels = np.arange(1, n + 1) * (T / n)
    levels[-1] = T
    live_x = _inverse_batch(target, levels, "left", pol, grid=grid)
    live_y = _inverse_batch(target, levels, "right", pol, grid=grid)
    if np.any(np.diff(live_x) >= 0.0) or np.any(np.diff(live_y) <= 0.0):
        raise ValueError("target profile levels are not strictly nested")

    c_cur = target.start
    t_cur = 0.0
    knots = [(0.0, c_cur)]
    for j in range(n):
        t_end = float(levels[j])
        x_im, y_im = float(live_x[j]), float(live_y[j])
        others = np.concatenate([live_x[j + 1 :], live_y[j + 1 :]])

        m, xm, ym = _solve_hold_value(x_im, y_im, c_cur, epsilon)
        others = _march_points(others, c_cur, m, epsilon)
        t_hold0 = t_cur + epsilon
        knots.append((t_hold0, m))
        half = 0.5 * (ym - xm)
        tau_nat = t_hold0 + half * half / 4.0

        window = 0.5 * epsilon
        if tau_nat <= t_end or t_end - window <= t_hold0:
            # the hold alone welds the pair (simultaneously, by symmetry) no
            # later than about the block end; constant targets sit here
            others = _advance_points_const(others, m, t_end - t_hold0)
            knots.append((t_end, m))
            c_cur = m
        else:
            c_cur, others = _capture_block(
                knots, others, xm, ym, m, t_hold0, t_end, epsilon, window
            )

        k = n - (j + 1)
        live_x[j + 1 :] = others[:k]
        live_y[j + 1 :] = others[k:]
        t_cur = t_end
    return piecewise_linear(knots)


def _capture_block(knots, others, xm, ym, m, t_hold0, t_end, epsilon, window):
    """Hold, then capture so the pair welds exactly at t_end.  Appends the
    block's knots and returns (freeze value, marched points)."""
    dance = 1.0
    for attempt in range(40):
        if dance < 1e-7:
            # slack below resolution: hold through the block and accept a
            # weld within O(dance * epsilon) of the boundary
            others = _advance_points_const(others, m, t_end - t_hold0)
            knots.append((t_end, m))
            return m, others
        t_c = t_end - window
        if t_c <= t_hold0:
            t_c = t_hold0
        held = _hold_advance(xm, ym, m, t_c - t_hold0)
        if held is None:
            raise CaptureFailure("pair welded during the hold despite late slack")
        xc, yc = held
        gap_c = yc - xc
        mv = dance * epsilon / 8.0
        e1 = min(mv, 0.4 * window / max(gap_c, 1e-300), gap_c / 16.0)

        def weld_at_stop(traj, s):
            s_arr, c_arr, x_arr, y_arr = traj
            i = int(np.searchsorted(s_arr, s, side="right") - 1)
            i = min(max(i, 0), len(s_arr) - 1)
            xs_, ys_, cs_ = float(x_arr[i]), float(y_arr[i]), float(c_arr[i])
            ds = s - float(s_arr[i])
            if ds > 0.0:
                slope = -2.0 / (ys_ - cs_)
                ce = cs_ + slope * ds
                xs_, ys_ = _march_pair(xs_, ys_, cs_, ce, ds)
                cs_ = ce
            gp = ys_ - xs_
            mv2 = min(mv, gp * gp / 64.0)
            v2, x2, y2 = _solve_hold_value(xs_, ys_, cs_, mv2)
            half2 = 0.5 * (y2 - x2)
            w = t_c + mv + s + mv2 + half2 * half2 / 4.0
            return w, (cs_, mv2, v2)

        try:
            v, xv, yv = _solve_move_target(xc, yc, m, mv, e1)
            floor = t_end - 2.0 * mv - 0.05 * window
            traj, event = _ride(xv, yv, v, e1, stop_weld_below=floor, t_base=t_c + mv)
            s_arr = traj[0]
            s_hi = float(s_arr[-1]) if event is None else float(event[0])
            w_lo, _ = weld_at_stop(traj, 0.0)
            w_hi, _ = weld_at_stop(traj, s_hi)
        except CaptureFailure:
            window = min(2.0 * window, t_end - t_hold0)
            continue
        if w_lo < t_end:
            # even the drag-free dance overshoots the remaining slack
            dance *= 0.125
            continue
        if w_hi > t_end:
            # the full drag cannot shave enough inside this window
            if window >= t_end - t_hold0:
                raise CaptureFailure("capture cannot reach the block boundary")
            window = min(2.0 * window, t_end - t_hold0)
            continue
        lo_s, hi_s = 0.0, s_hi
        for _ in range(80):
            mid_s = 0.5 * (lo_s + hi_s)
            w_mid, _ = weld_at_stop(traj, mid_s)
            if w_mid >= t_end:
                lo_s = mid_s
            else:
                hi_s = mid_s
            if hi_s - lo_s <= 1e-13 * max(t_end, 1.0):
                break
        s_star = 0.5 * (lo_s + hi_s)
        w_star, (c_stop, mv2, v2) = weld_at_stop(traj, s_star)

        s_arr, c_arr, x_arr, y_arr = traj
        keep = s_arr < s_star
        ride_t = np.concatenate([s_arr[keep], [s_star]])
        ride_c = np.concatenate([c_arr[keep], [c_stop]])

        others = _advance_points_const(others, m, t_c - t_hold0)
        others = _march_points(others, m, v, mv)
        others = _march_points_pl(others, ride_t, ride_c)
        others = _march_points(others, c_stop, v2, mv2)
        t_freeze = t_c + mv + s_star + mv2
        others = _advance_points_const(others, v2, t_end - t_freeze)

        knots.append((t_c, m))
        knots.append((t_c + mv, v))
        for s_i, c_i in zip(ride_t[1:], ride_c[1:]):
            knots.append((t_c + mv + float(s_i), float(c_i)))
        knots.append((t_freeze, v2))
        knots.append((t_end, v2))
        return v2, others
    raise CaptureFailure("capture could not land the weld on the block boundary")


def _build_counterexample(n: int, eps1: float):
    live_x = -np.arange(1, n + 1) / n
    live_y = np.arange(1, n + 1) / n
    budget = 2.0 / (n * n)
    c_cur = 0.0
    t_cur = 0.0
    knots = [(0.0, 0.0)]
    for j in range(n):
        x_im, y_im = float(live_x[j]), float(live_y[j])
        others = np.concatenate([live_x[j + 1 :], live_y[j + 1 :]])
        remaining = budget - t_cur
        if remaining <= 0.0:
            raise CaptureFailure("welding schedule exhausted the time budget")
        e1 = min(eps1, (y_im - x_im) / 16.0)
        v, xv, yv = _solve_move_target(x_im, y_im, c_cur, e1, e1)
        traj, event = _ride(xv, yv, v, e1)
        if event is None:
            raise CaptureFailure("drag ended without a midpoint event")
        s_ev, c_ev, xe, ye = event
        c_star = 0.5 * (xe + ye)
        half = 0.5 * (ye - xe)
        t_ride0 = t_cur + e1
        t_freeze = t_ride0 + s_ev
        t_weld = t_freeze + half * half / 4.0
        if t_weld > budget:
            raise CaptureFailure("pair overran the time budget")

        s_arr, c_arr = traj[0], traj[1]
        ride_t = np.concatenate([s_arr, [s_ev]])
        ride_c = np.concatenate([c_arr, [c_star]])
        others = _march_points(others, c_cur, v, e1)
        others = _march_points_pl(others, ride_t, ride_c)
        others = _advance_points_const(others, c_star, t_weld - t_freeze)

        knots.append((t_ride0, v))
        for s_i, c_i in zip(ride_t[1:], ride_c[1:]):
            knots.append((t_ride0 + float(s_i), float(c_i)))
        knots.append((t_weld, c_star))

        k = n - (j + 1)
        live_x[j + 1 :] = others[:k]
        live_y[j + 1 :] = others[k:]
        c_cur = c_star
        t_cur = t_weld
    return piecewise_linear(knots), t_cur


def make_counterexample_welder(n: int, epsilon: float | None = None) -> Driver:
    """Driver welding (-k/n, k/n) for k = 1..n in total time at most 2/n^2.

    The welding of the output approaches x -> -x on [-1, 0] while the driver
    itself stays macroscopically far from zero: each capture must climb to
    the image of the outer point first, so sup|xi| stays near 1.
    """
    if n < 2:
        raise ValueError("need n >= 2")
    if epsilon is not None and epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    # flat clearance schedule sized so the predicted total respects 2/n^2:
    # pair k costs about eps1*(1 + gap_k/2) and gap_k is near 2k/n
    pred = n + 0.5 * sum(2.0 * k / n + 0.4 for k in range(1, n + 1))
    eps1 = 0.8 * (2.0 / (n * n)) / pred
    if epsilon is not None:
        eps1 = min(eps1, epsilon)
    last_err = None
    for _ in range(40):
        try:
            driver, total = _build_counterexample(n, eps1)
        except CaptureFailure as exc:
            last_err = exc
            eps1 *= 0.5
            continue
        if total <= 2.0 / (n * n):
            return driver
        eps1 *= 0.5
    raise CaptureFailure(f"could not meet the 2/n^2 schedule for n={n}: {last_err}")
