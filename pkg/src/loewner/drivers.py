"""Driving functions for the chordal Loewner equation.

A driver is a continuous real-valued function on [0, T] represented as an
ordered list of segments (constant, linear, square-root, or sampled pieces)
plus an orientation tag.  Upward drivers feed the flow that absorbs boundary
points into the growing hull; downward drivers describe the same curve grown
tip-first.  `Driver.reversed()` converts between the two pictures.

Everything here is plain data plus evaluation; the ODE solvers live in
`loewner.flow`.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = [
    "Orientation",
    "ConstantSegment",
    "LinearSegment",
    "SqrtSegment",
    "SampledSegment",
    "Driver",
    "PartitionWeldingProblem",
    "constant_driver",
    "piecewise_linear",
    "sampled_driver",
    "sqrt_slit",
    "sqrt_slit_coefficient",
    "steep_dip_pair",
    "sup_distance",
    "driver_to_spec",
    "driver_from_spec",
    "zoo",
]

_CONTINUITY_TOL = 1e-12
_SQRT_REVERSAL_SAMPLES = 16384


class Orientation(enum.Enum):
    UP = "up"
    DOWN = "down"


@dataclass(frozen=True)
class ConstantSegment:
    duration: float
    value: float

    @property
    def start_value(self) -> float:
        return self.value

    @property
    def end_value(self) -> float:
        return self.value

    def values_at(self, s: np.ndarray) -> np.ndarray:
        return np.full_like(np.asarray(s, dtype=float), self.value)

    def max_abs(self) -> float:
        return abs(self.value)

    def shifted(self, delta: float) -> "ConstantSegment":
        return ConstantSegment(self.duration, self.value + delta)


@dataclass(frozen=True)
class LinearSegment:
    duration: float
    start: float
    end: float

    @property
    def start_value(self) -> float:
        return self.start

    @property
    def end_value(self) -> float:
        return self.end

    def values_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.start + (self.end - self.start) * (s / self.duration)

    def max_abs(self) -> float:
        return max(abs(self.start), abs(self.end))

    def shifted(self, delta: float) -> "LinearSegment":
        return LinearSegment(self.duration, self.start + delta, self.end + delta)


@dataclass(frozen=True)
class SqrtSegment:
    """Value start + coefficient * sqrt(s) at local time s in [0, duration]."""

    duration: float
    start: float
    coefficient: float

    @property
    def start_value(self) -> float:
        return self.start

    @property
    def end_value(self) -> float:
        return self.start + self.coefficient * math.sqrt(self.duration)

    def values_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.start + self.coefficient * np.sqrt(np.clip(s, 0.0, None))

    def max_abs(self) -> float:
        return max(abs(self.start), abs(self.end_value))

    def shifted(self, delta: float) -> "SqrtSegment":
        return SqrtSegment(self.duration, self.start + delta, self.coefficient)


@dataclass(frozen=True)
class SampledSegment:
    """Piecewise-linear interpolation of (time, value) samples.

    Local times must start at 0, end at `duration`, and increase strictly.
    """

    duration: float
    times: tuple
    values: tuple

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ValueError("sampled segment needs matching 1-d times/values, >= 2 points")
        if not np.all(np.diff(t) > 0):
            raise ValueError("sampled segment times must increase strictly")
        if abs(t[0]) > _CONTINUITY_TOL or abs(t[-1] - self.duration) > _CONTINUITY_TOL:
            raise ValueError("sampled segment grid must span [0, duration]")
        if not np.all(np.isfinite(v)):
            raise ValueError("sampled segment values must be finite")

    @property
    def start_value(self) -> float:
        return float(self.values[0])

    @property
    def end_value(self) -> float:
        return float(self.values[-1])

    def values_at(self, s: np.ndarray) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return np.interp(s, np.asarray(self.times), np.asarray(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(np.asarray(self.values))))

    def shifted(self, delta: float) -> "SampledSegment":
        return SampledSegment(
            self.duration,
            self.times,
            tuple(float(v) + delta for v in self.values),
        )


Segment = ConstantSegment | LinearSegment | SqrtSegment | SampledSegment


@dataclass(frozen=True)
class Driver:
    """A continuous driving function on [0, horizon]."""

    horizon: float
    orientation: Orientation
    segments: tuple
    _edges: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.segments:
            raise ValueError("driver needs at least one segment")
        durations = [s.duration for s in self.segments]
        if any(d <= 0 or not math.isfinite(d) for d in durations):
            raise ValueError("segment durations must be positive and finite")
        total = math.fsum(durations)
        if abs(total - self.horizon) > _CONTINUITY_TOL * max(1.0, abs(self.horizon)):
            raise ValueError(
                f"segment durations sum to {total!r}, horizon is {self.horizon!r}"
            )
        for a, b in zip(self.segments, self.segments[1:]):
            if abs(a.end_value - b.start_value) > _CONTINUITY_TOL:
                raise ValueError(
                    f"segment junction jumps by {a.end_value - b.start_value!r}"
                )
        edges = np.concatenate([[0.0], np.cumsum(np.asarray(durations, dtype=float))])
        edges[-1] = self.horizon
        object.__setattr__(self, "_edges", edges)

    # -- evaluation ---------------------------------------------------------

    @property
    def segment_edges(self) -> np.ndarray:
        """Absolute times of the segment boundaries, 0 through horizon."""
        return self._edges

    def value(self, t: float) -> float:
        return float(self.values(np.asarray([t]))[0])

    def values(self, ts) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if ts.size and (ts.min() < -1e-12 or ts.max() > self.horizon + 1e-12):
            raise ValueError("driver evaluated outside [0, horizon]")
        ts = np.clip(ts, 0.0, self.horizon)
        idx = np.searchsorted(self._edges[1:-1], ts, side="right")
        out = np.empty_like(ts)
        for k, seg in enumerate(self.segments):
            mask = idx == k
            if np.any(mask):
                out[mask] = seg.values_at(ts[mask] - self._edges[k])
        return out

    @property
    def start_value(self) -> float:
        return self.segments[0].start_value

    @property
    def end_value(self) -> float:
        return self.segments[-1].end_value

    def sup_abs(self) -> float:
        return max(s.max_abs() for s in self.segments)

    # -- algebra ------------------------------------------------------------

    def shifted(self, delta: float) -> "Driver":
        return Driver(
            self.horizon,
            self.orientation,
            tuple(s.shifted(float(delta)) for s in self.segments),
        )

    def extended(self, new_horizon: float) -> "Driver":
        """Pad with a constant tail; adds no variation."""
        if new_horizon < self.horizon - _CONTINUITY_TOL:
            raise ValueError("extension may not shorten the driver")
        if new_horizon <= self.horizon:
            return self
        tail = ConstantSegment(new_horizon - self.horizon, self.end_value)
        return Driver(new_horizon, self.orientation, self.segments + (tail,))

    def reversed(self, sqrt_samples: int = _SQRT_REVERSAL_SAMPLES) -> "Driver":
        """Time-reverse and renormalize: out(t) = self(T - t) - self(T).

        Flips orientation.  Constant, linear, and sampled segments reverse
        exactly; a sqrt segment becomes a sampled segment on a grid clustered
        quartically at its (now trailing) singular end.
        """
        offset = self.end_value
        rev = []
        for seg in reversed(self.segments):
            if isinstance(seg, ConstantSegment):
                rev.append(ConstantSegment(seg.duration, seg.value - offset))
            elif isinstance(seg, LinearSegment):
                rev.append(LinearSegment(seg.duration, seg.end - offset, seg.start - offset))
            elif isinstance(seg, SampledSegment):
                t = np.asarray(seg.times, dtype=float)
                v = np.asarray(seg.values, dtype=float)
                rev.append(
                    SampledSegment(
                        seg.duration,
                        tuple((seg.duration - t)[::-1]),
                        tuple((v - offset)[::-1]),
                    )
                )
            elif isinstance(seg, SqrtSegment):
                m = int(sqrt_samples)
                j = np.arange(m + 1, dtype=float)
                # cluster at s = duration, where the reversed sqrt is singular
                s = seg.duration * (1.0 - ((m - j) / m) ** 4)
                s[0], s[-1] = 0.0, seg.duration
                # quartic clustering can drop below float spacing right at the
                # singular end; keep only strictly advancing knots
                keep = np.concatenate([[True], np.diff(s) > 4e-16 * seg.duration])
                keep[-1] = True
                s = s[keep]
                if s[-2] >= s[-1]:
                    s = np.delete(s, -2)
                vals = seg.start + seg.coefficient * np.sqrt(np.maximum(seg.duration - s, 0.0)) - offset
                rev.append(SampledSegment(seg.duration, tuple(s), tuple(vals)))
            else:  # pragma: no cover - variant set is closed
                raise TypeError(f"cannot reverse segment {seg!r}")
        flipped = Orientation.DOWN if self.orientation is Orientation.UP else Orientation.UP
        return Driver(self.horizon, flipped, tuple(rev))


@dataclass(frozen=True)
class PartitionWeldingProblem:
    """Finitely many boundary pairs (x_j, y_j) to be welded, innermost first.

    Requires x_N < ... < x_1 < 0 < y_1 < ... < y_N.
    """

    pairs: tuple

    def __post_init__(self):
        pairs = tuple((float(x), float(y)) for x, y in self.pairs)
        object.__setattr__(self, "pairs", pairs)
        if not pairs:
            raise ValueError("need at least one pair")
        xs = [p[0] for p in pairs]
        ys = [p[1] for p in pairs]
        if not all(x < 0 < y for x, y in pairs):
            raise ValueError("each pair must straddle the origin: x < 0 < y")
        if not all(b < a for a, b in zip(xs, xs[1:])):
            raise ValueError("left points must decrease strictly outward")
        if not all(a < b for a, b in zip(ys, ys[1:])):
            raise ValueError("right points must increase strictly outward")

    def __len__(self) -> int:
        return len(self.pairs)


# -- constructors -----------------------------------------------------------


def constant_driver(value: float, horizon: float,
                    orientation: Orientation = Orientation.UP) -> Driver:
    return Driver(horizon, orientation, (ConstantSegment(horizon, float(value)),))


def piecewise_linear(knots: Sequence[tuple], orientation: Orientation = Orientation.UP) -> Driver:
    """Driver through (t, value) knots, t starting at 0 and strictly increasing."""
    knots = [(float(t), float(v)) for t, v in knots]
    if len(knots) < 2:
        raise ValueError("need at least two knots")
    if abs(knots[0][0]) > 0:
        raise ValueError("first knot must sit at t = 0")
    ts = [t for t, _ in knots]
    if not all(a < b for a, b in zip(ts, ts[1:])):
        raise ValueError("knot times must increase strictly")
    segs = []
    for (t0, v0), (t1, v1) in zip(knots, knots[1:]):
        if v0 == v1:
            segs.append(ConstantSegment(t1 - t0, v0))
        else:
            segs.append(LinearSegment(t1 - t0, v0, v1))
    return Driver(ts[-1], orientation, tuple(segs))


def sampled_driver(times, values, orientation: Orientation = Orientation.UP) -> Driver:
    times = np.asarray(times, dtype=float)
    return Driver(
        float(times[-1]),
        orientation,
        (SampledSegment(float(times[-1]), tuple(times), tuple(np.asarray(values, float))),),
    )


def sqrt_slit_coefficient(alpha: float) -> float:
    """Coefficient C of the driver C*sqrt(t) growing the straight slit at angle alpha*pi.

    Equals twice the constant term of the slit map's expansion at infinity;
    zero at alpha = 1/2 (vertical slit), positive for slits leaning right.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return 2.0 * (1.0 - 2.0 * alpha) / math.sqrt(alpha * (1.0 - alpha))


def sqrt_slit(alpha: float, horizon: float) -> Driver:
    """Downward driver C*sqrt(t) on [0, horizon] for the angle-alpha*pi straight slit.

    The coefficient is scale-free: the same driver grows the self-similar slit
    at every horizon.
    """
    c = sqrt_slit_coefficient(alpha)
    if c == 0.0:
        return constant_driver(0.0, horizon, Orientation.DOWN)
    return Driver(horizon, Orientation.DOWN, (SqrtSegment(horizon, 0.0, c),))


def steep_dip_pair(delta: float, zero_start: bool = False, horizon: float = 1.0):
    """Two drivers within sup-distance delta whose hitting times sit far apart.

    The first driver dips linearly from 0 to -1 during [0, delta] and holds;
    the second is its shift by -delta.  Returns (driver, shifted_driver, y0)
    where y0 is the marked right point: the first driver absorbs it at
    delta + delta**2 while the shifted one needs at least 1/36.

    With ``zero_start`` both drivers start at 0: a delta**2 prefix is added in
    which the first driver holds still and the second moves to -delta, and y0
    becomes the preimage of 2*delta under that prefix (2*sqrt(2)*delta).
    """
    if not 0.0 < delta < 0.25:
        raise ValueError("delta must lie in (0, 1/4)")
    if not zero_start:
        xi = piecewise_linear([(0.0, 0.0), (delta, -1.0), (horizon, -1.0)])
        return xi, xi.shifted(-delta), 2.0 * delta
    prefix = delta * delta
    xi = piecewise_linear(
        [(0.0, 0.0), (prefix, 0.0), (prefix + delta, -1.0), (horizon, -1.0)]
    )
    xi_tilde = piecewise_linear(
        [(0.0, 0.0), (prefix, -delta), (prefix + delta, -1.0 - delta), (horizon, -1.0 - delta)]
    )
    return xi, xi_tilde, 2.0 * math.sqrt(2.0) * delta


# -- comparison -------------------------------------------------------------


def sup_distance(d1: Driver, d2: Driver, samples_per_interval: int = 33) -> float:
    """Sup-norm distance on the common horizon.

    Exact for piecewise-linear drivers (the difference is piecewise linear, so
    its extrema sit on the union knot grid); elsewhere the union intervals are
    additionally sampled.
    """
    horizon = min(d1.horizon, d2.horizon)
    edges = np.unique(np.concatenate([
        d1.segment_edges[d1.segment_edges <= horizon],
        d2.segment_edges[d2.segment_edges <= horizon],
        _sample_knots(d1, horizon),
        _sample_knots(d2, horizon),
        [0.0, horizon],
    ]))
    if samples_per_interval > 1:
        frac = np.linspace(0.0, 1.0, samples_per_interval)[:-1]
        grid = (edges[:-1, None] + np.diff(edges)[:, None] * frac[None, :]).ravel()
        grid = np.concatenate([grid, [horizon]])
    else:
        grid = edges
    return float(np.max(np.abs(d1.values(grid) - d2.values(grid))))


def _sample_knots(d: Driver, horizon: float) -> np.ndarray:
    knots = [np.asarray([], dtype=float)]
    for seg, t0 in zip(d.segments, d.segment_edges[:-1]):
        if isinstance(seg, SampledSegment):
            knots.append(t0 + np.asarray(seg.times, dtype=float))
    out = np.concatenate(knots)
    return out[out <= horizon]


# -- JSON interchange -------------------------------------------------------
# Field names here are the interchange contract used by the CLI.


def driver_to_spec(d: Driver) -> dict:
    segs = []
    for seg in d.segments:
        if isinstance(seg, ConstantSegment):
            segs.append({"kind": "constant", "duration": seg.duration, "value": seg.value})
        elif isinstance(seg, LinearSegment):
            segs.append({"kind": "linear", "duration": seg.duration,
                         "start": seg.start, "end": seg.end})
        elif isinstance(seg, SqrtSegment):
            segs.append({"kind": "sqrt", "duration": seg.duration,
                         "start": seg.start, "coefficient": seg.coefficient})
        elif isinstance(seg, SampledSegment):
            segs.append({"kind": "sampled", "duration": seg.duration,
                         "times": list(seg.times), "values": list(seg.values)})
        else:  # pragma: no cover
            raise TypeError(f"unknown segment {seg!r}")
    return {"horizon": d.horizon, "orientation": d.orientation.value, "segments": segs}


def driver_from_spec(spec: dict) -> Driver:
    try:
        horizon = float(spec["horizon"])
        orientation = Orientation(spec["orientation"])
        raw = spec["segments"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed driver spec: {exc}") from exc
    segs = []
    for item in raw:
        kind = item.get("kind")
        try:
            if kind == "constant":
                segs.append(ConstantSegment(float(item["duration"]), float(item["value"])))
            elif kind == "linear":
                segs.append(LinearSegment(float(item["duration"]),
                                          float(item["start"]), float(item["end"])))
            elif kind == "sqrt":
                segs.append(SqrtSegment(float(item["duration"]),
                                        float(item["start"]), float(item["coefficient"])))
            elif kind == "sampled":
                segs.append(SampledSegment(float(item["duration"]),
                                           tuple(float(t) for t in item["times"]),
                                           tuple(float(v) for v in item["values"])))
            else:
                raise ValueError(f"unknown segment kind {kind!r}")
        except KeyError as exc:
            raise ValueError(f"segment {kind!r} missing field {exc}") from exc
    return Driver(horizon, orientation, tuple(segs))


# -- a small stable of named drivers for sweeps ------------------------------


def zoo() -> dict:
    """Named drivers used across tests and experiments."""
    out = {
        "zero": constant_driver(0.0, 1.0),
        "constant-half": constant_driver(0.5, 1.0),
        "ramp": piecewise_linear([(0.0, 0.0), (1.0, 0.6)]),
        "tent": piecewise_linear([(0.0, 0.0), (0.5, 0.4), (1.0, -0.2)]),
        "zigzag": piecewise_linear(
            [(0.0, 0.0), (0.2, 0.3), (0.4, -0.25), (0.7, 0.2), (1.0, 0.0)]
        ),
        "slit-third-rev": sqrt_slit(1.0 / 3.0, 0.25).reversed(),
    }
    t = np.linspace(0.0, 1.0, 4097)
    out["sine"] = sampled_driver(t, 0.25 * np.sin(2.0 * math.pi * t))
    dip, _, _ = steep_dip_pair(0.1)
    out["steep-dip"] = dip
    return out
