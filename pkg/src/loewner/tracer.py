"""Curve tracing by slit-map composition, and the tilted-slit building block.

The traced curve is the locus of hull tips: with the driver resampled to n
uniform capacity steps, the point at capacity time t_k is the composition of
k exact vertical-slit maps (newest value innermost as seed, oldest outermost)
evaluated at the driver value for t_k.  Upward drivers are read back-to-front
so the base of the curve is xi(T).

The tilted slit is the two-factor power map
    F(z) = (z - b)^alpha (z + a)^(1-alpha),
    a = sqrt((1-alpha)/alpha), b = sqrt(alpha/(1-alpha)),
which takes ℍ onto ℍ minus a straight segment at angle alpha*pi, has
half-plane capacity 1/2 (capacity time 1/4), and welds -a to b at its base.
Scaled copies weld an arbitrary pair (x, y); the generating downward driver
is C*sqrt(t) with the scale-free coefficient C = 2(1-2alpha)/sqrt(alpha(1-alpha)).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .drivers import Driver, Orientation, sqrt_slit, sqrt_slit_coefficient
from ._kernels import trace_points

__all__ = [
    "Curve",
    "TiltedSlitMap",
    "WeldBlock",
    "trace_curve",
    "tilted_slit_map",
    "slit_block_knots",
    "weld_pair_slit",
    "curve_distance",
    "curve_is_simple",
]


@dataclass
class Curve:
    """Polyline approximation of the generated curve.

    points[k] sits at capacity time times[k]; points[0] is the base on ℝ.
    """

    points: np.ndarray
    times: np.ndarray
    base: float

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def tip(self) -> complex:
        return complex(self.points[-1])


def trace_curve(driver: Driver, n_steps: int) -> Curve:
    """Trace the curve generated by the driver with n uniform slit-map steps."""
    if n_steps < 1:
        raise ValueError("need at least one step")
    T = driver.horizon
    dt = T / n_steps
    ks = np.arange(1, n_steps + 1) * dt
    centers = (np.arange(n_steps) + 0.5) * dt
    if driver.orientation is Orientation.UP:
        mids_down = driver.values(np.clip(T - centers, 0.0, T))
        seeds = driver.values(np.clip(T - ks, 0.0, T))
        base = driver.value(T)
    else:
        mids_down = driver.values(centers)
        seeds = driver.values(np.clip(ks, 0.0, T))
        base = driver.value(0.0)
    pts = trace_points(mids_down, seeds, dt)
    worst = float(pts.imag.min())
    if worst < -1e-9:
        raise RuntimeError(f"traced point left the upper half-plane by {-worst:.2e}")
    pts = np.where(pts.imag < 0.0, pts.real + 0.0j, pts)
    points = np.concatenate([[complex(base)], pts])
    times = np.concatenate([[0.0], ks])
    return Curve(points=points, times=times, base=float(base))


@dataclass(frozen=True)
class TiltedSlitMap:
    """Descriptor of the straight-slit map at angle alpha*pi."""

    alpha: float
    a: float
    b: float
    drift: float
    hcap: float
    capacity_time: float
    tip: complex

    def __call__(self, z):
        """Evaluate F(z) for z in the closed upper half-plane (vectorized).

        Real points get the +i0 convention, so the segment (-a, b) maps onto
        the two sides of the slit.
        """
        z = np.asarray(z, dtype=complex)
        if np.any(z.imag < -1e-15):
            raise ValueError("evaluation requires the closed upper half-plane")
        z = np.where(z.imag < 0.0, z.real + 0.0j, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.exp(self.alpha * np.log(z - self.b) + (1.0 - self.alpha) * np.log(z + self.a))
        # feet map exactly to the base point
        w = np.where(np.isfinite(w), w, 0.0)
        at_feet = (z == self.b) | (z == -self.a)
        w = np.where(at_feet, 0.0, w)
        return w if w.shape else complex(w)


def tilted_slit_map(alpha: float) -> TiltedSlitMap:
    """The slit map of angle alpha*pi with its expansion bookkeeping."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    a = math.sqrt((1.0 - alpha) / alpha)
    b = math.sqrt(alpha / (1.0 - alpha))
    drift = (1.0 - 2.0 * alpha) / math.sqrt(alpha * (1.0 - alpha))
    tip_mod = alpha ** (alpha - 0.5) * (1.0 - alpha) ** (0.5 - alpha)
    tip = tip_mod * complex(math.cos(alpha * math.pi), math.sin(alpha * math.pi))
    return TiltedSlitMap(
        alpha=alpha,
        a=a,
        b=b,
        drift=drift,
        hcap=0.5,
        capacity_time=0.25,
        tip=tip,
    )


@dataclass(frozen=True)
class WeldBlock:
    """A scaled tilted-slit block welding the pair (x, y) at time scale^2/4."""

    x: float
    y: float
    alpha: float
    scale: float
    slit: TiltedSlitMap

    @property
    def duration(self) -> float:
        return self.scale * self.scale / 4.0

    @property
    def coefficient(self) -> float:
        return sqrt_slit_coefficient(self.alpha)

    def downward_driver(self) -> Driver:
        return sqrt_slit(self.alpha, self.duration)

    def upward_driver(self, sqrt_samples: int = 16384, pad_rel: float = 1e-4) -> Driver:
        """High-fidelity upward block: reversed sqrt rendering plus a short
        constant tail so the marginal foot weld completes within the driver."""
        d = self.downward_driver().reversed(sqrt_samples=sqrt_samples)
        if pad_rel > 0.0:
            d = d.extended(self.duration * (1.0 + pad_rel))
        return d

    def upward_driver_pl(self, knots: int = 64, pad_rel: float = 1e-4, power: int = 4) -> Driver:
        """Finite-energy piecewise-linear rendering with knots graded into the
        singular end of the block (where the upward driver moves fastest)."""
        from .drivers import piecewise_linear

        t, vals = slit_block_knots(self.alpha, self.duration, knots=knots, power=power)
        pts = list(zip(t.tolist(), vals.tolist()))
        if pad_rel > 0.0:
            pts.append((self.duration * (1.0 + pad_rel), vals[-1]))
        return piecewise_linear(pts)


def slit_block_knots(alpha: float, duration: float, knots: int = 64, power: int = 4):
    """Knot times and values for a piecewise-linear upward slit block.

    The upward rendering of the block driver is C*(sqrt(T-t) - sqrt(T)), which
    is steepest at t = T; the knots are graded there with the given power.
    Returns (times, values), both starting the block at value 0.
    """
    m = int(knots)
    if m < 4:
        raise ValueError("need at least 4 knots")
    T = float(duration)
    C = sqrt_slit_coefficient(alpha)
    j = np.arange(m + 1, dtype=float)
    t = T * (1.0 - ((m - j) / m) ** power)
    t[0], t[-1] = 0.0, T
    t = np.unique(t)
    vals = C * (np.sqrt(np.maximum(T - t, 0.0)) - math.sqrt(T))
    return t, vals


def weld_pair_slit(x: float, y: float) -> WeldBlock:
    """The tilted-slit block welding x < 0 to y > 0 at its base."""
    if not (x < 0.0 < y):
        raise ValueError("need x < 0 < y")
    alpha = y / (y - x)
    scale = math.sqrt(-x * y)
    return WeldBlock(x=float(x), y=float(y), alpha=alpha, scale=scale, slit=tilted_slit_map(alpha))


def curve_distance(c1: Curve, c2: Curve) -> float:
    """sup |z1(t) - z2(t)| over matched capacity times up to the common horizon."""
    Tc = min(c1.horizon, c2.horizon)
    if Tc <= 0.0:
        raise ValueError("curves must have positive common horizon")
    m = max(len(c1.points), len(c2.points))
    ts = np.linspace(0.0, Tc, m)
    z1 = np.interp(ts, c1.times, c1.points.real) + 1j * np.interp(ts, c1.times, c1.points.imag)
    z2 = np.interp(ts, c2.times, c2.points.real) + 1j * np.interp(ts, c2.times, c2.points.imag)
    return float(np.max(np.abs(z1 - z2)))


def curve_is_simple(curve: Curve, decimate: int = 1) -> bool:
    """Geometric self-intersection check on the traced polyline."""
    try:
        from shapely.geometry import LineString
    except ImportError as exc:  # pragma: no cover
        raise RuntimeError("curve_is_simple needs shapely") from exc
    pts = curve.points[::decimate]
    if pts[-1] != curve.points[-1]:
        pts = np.concatenate([pts, [curve.points[-1]]])
    coords = np.column_stack([pts.real, pts.imag])
    # collapse consecutive duplicates, which shapely treats as degenerate
    keep = np.concatenate([[True], np.any(np.diff(coords, axis=0) != 0.0, axis=1)])
    return LineString(coords[keep]).is_simple
