"""Conformal welding of the swallowed interval and its stability under
driver perturbations.

The welding phi pairs each left boundary point x with the right point
phi(x) that welds at the same time.  Coordinates are centered at the
driver's start value, so phi(0) = 0, phi(-a) = b, and phi is decreasing.
phi is computed by inverting the right-side hitting profile at the left-side
hitting times with predicate bisection (never by interpolation), and each
welding carries the measured residual max |tau(x) - tau(phi(x))| as a
self-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .drivers import Driver, sampled_driver, sup_distance
from .flow import StepPolicy, evolve_many, step_grid
from .hitting import HittingProfile, _inverse_batch, hitting_profile

__all__ = [
    "Welding",
    "PerturbationRow",
    "PerturbationReport",
    "compute_welding",
    "welding_distance",
    "perturbation_experiment",
]


@dataclass
class Welding:
    """The centered welding homeomorphism phi: [-a, 0] -> [0, b].

    xs increases from -a to 0; phis decreases from b to 0; taus[i] is the
    common weld time of the pair (xs[i], phis[i]).
    """

    driver: Driver
    xs: np.ndarray
    phis: np.ndarray
    taus: np.ndarray
    a: float
    b: float
    endpoint_tol: float
    residual_max: float
    profile: HittingProfile = field(repr=False)

    @property
    def start(self) -> float:
        return self.driver.start_value

    def __call__(self, x):
        """Interpolated phi at centered coordinates in [-a, 0]."""
        x = np.asarray(x, dtype=float)
        if np.any(x < -self.a - 1e-9) or np.any(x > 1e-9):
            raise ValueError("welding arguments must lie in [-a, 0]")
        return np.interp(x, self.xs, self.phis)


def compute_welding(driver: Driver, n: int = 129, policy: StepPolicy | None = None) -> Welding:
    """Build the welding from the hitting profile of an upward driver."""
    policy = policy or StepPolicy()
    grid = step_grid(driver, policy)
    prof = hitting_profile(driver, n, policy, grid=grid)
    start = prof.start
    phi_abs = _inverse_batch(prof, prof.left_tau, "right", policy=policy, grid=grid)
    check, _ = evolve_many(driver, phi_abs, policy, grid=grid)
    residual = float(np.max(np.abs(check - prof.left_tau)))
    xs = np.concatenate([prof.left_x - start, [0.0]])
    phis = np.concatenate([phi_abs - start, [0.0]])
    taus = np.concatenate([prof.left_tau, [0.0]])
    return Welding(
        driver=driver,
        xs=xs,
        phis=phis,
        taus=taus,
        a=prof.a,
        b=prof.b,
        endpoint_tol=prof.endpoint_tol,
        residual_max=residual,
        profile=prof,
    )


def welding_distance(w1: Welding, w2: Welding) -> float:
    """sup |phi1 - phi2| over the common domain, shrunk by endpoint slack."""
    shrink = 2.0 * max(w1.endpoint_tol, w2.endpoint_tol) + 1e-12
    lo = -min(w1.a, w2.a) + shrink
    best = 0.0
    for wa, wb in ((w1, w2), (w2, w1)):
        mask = wa.xs >= lo
        xs = wa.xs[mask]
        if xs.size == 0:
            continue
        other = np.interp(xs, wb.xs, wb.phis)
        best = max(best, float(np.max(np.abs(wa.phis[mask] - other))))
    return best


def _perturbation_values(mode: str, ts: np.ndarray, T: float, delta: float, rng) -> np.ndarray:
    if mode == "sinusoid":
        return delta * np.sin(2.0 * np.pi * ts / T)
    if mode == "constant":
        return np.full_like(ts, delta)
    if mode == "random-pl":
        knots = np.linspace(0.0, T, 17)
        vals = rng.uniform(-1.0, 1.0, 17)
        vals[0] = 0.0
        peak = np.abs(vals).max()
        if peak == 0.0:
            vals[-1] = 1.0
            peak = 1.0
        vals *= delta / peak
        return np.interp(ts, knots, vals)
    raise ValueError(f"unknown perturbation mode {mode!r}")


def perturb_driver(driver: Driver, delta: float, mode: str = "sinusoid", seed: int = 0) -> Driver:
    """Additive perturbation of sup-norm exactly delta, returned as a sampled driver."""
    T = driver.horizon
    ts = np.unique(np.concatenate([np.linspace(0.0, T, 2049), driver.segment_edges]))
    rng = np.random.default_rng(seed)
    vals = driver.values(ts) + _perturbation_values(mode, ts, T, delta, rng)
    return sampled_driver(ts, vals, driver.orientation)


@dataclass
class PerturbationRow:
    delta: float
    measured_delta: float
    welding_sup: float
    endpoint_shift_left: float
    endpoint_shift_right: float


@dataclass
class PerturbationReport:
    driver: Driver
    mode: str
    seed: int
    base: Welding
    rows: list

    def welding_sups(self) -> np.ndarray:
        return np.array([r.welding_sup for r in self.rows])


def perturbation_experiment(
    driver: Driver,
    deltas,
    mode: str = "sinusoid",
    n: int = 129,
    seed: int = 0,
    policy: StepPolicy | None = None,
) -> PerturbationReport:
    """Weld the driver and its perturbations; track sup distances and endpoints.

    Endpoint shifts are measured in absolute coordinates (where the
    comparison bound says they stay within the driver sup-distance).
    """
    policy = policy or StepPolicy()
    base = compute_welding(driver, n, policy)
    base_left = base.start - base.a
    base_right = base.start + base.b
    rows = []
    for delta in deltas:
        pert = perturb_driver(driver, float(delta), mode, seed)
        w = compute_welding(pert, n, policy)
        rows.append(
            PerturbationRow(
                delta=float(delta),
                measured_delta=sup_distance(driver, pert),
                welding_sup=welding_distance(base, w),
                endpoint_shift_left=abs((w.start - w.a) - base_left),
                endpoint_shift_right=abs((w.start + w.b) - base_right),
            )
        )
    return PerturbationReport(driver=driver, mode=mode, seed=seed, base=base, rows=rows)
