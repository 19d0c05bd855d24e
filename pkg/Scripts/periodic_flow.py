"""Periodic r-Hunter-Saxton flows as geodesics on the L^r-sphere.

Phi(phi) = r phi_x^(1/r) maps Diff_0(S^1) (circle maps with phi(0) = 0)
isometrically onto the open subset {f > 0} of the L^r-sphere of radius r.
Geodesics from the identity are integrated on the discrete sphere with a
constrained Stormer-Verlet (RATTLE) scheme in the variables (f, p),
p = |f_t|^(r-2) f_t, and mapped back through the inverse isometry.
"""
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import brentq

from core_functions import (
    Circle,
    GridFunction,
    Interpolation,
    check_strictly_increasing,
    cumulative_integral_periodic,
    derivative,
    integrate,
    interpolate,
    lp_norm,
)
from errors import (
    BoundaryError,
    InvalidInputError,
    MonotonicityError,
    OffSphereError,
    PJFlowError,
    TangencyError,
)
from nonperiodic_flow import INF, FlowParams, Trajectory

logger = logging.getLogger(__name__)

SPHERE_TOL_FACTOR = 1e-8
BOUNDARY_TOL = 1e-4
TANGENCY_TOL = 1e-8
# multiplier root finding
BRACKET_START = 1e-8
BRACKET_DOUBLINGS = 120


@dataclass(frozen=True, eq=False)
class PeriodicDiffeo:
    """Lift to [0, 1] of an orientation-preserving circle map with phi(0) = 0, phi(1) = 1"""

    phi: GridFunction
    phi_x: Optional[GridFunction] = None

    def __post_init__(self):
        if not isinstance(self.phi.domain, Circle):
            raise InvalidInputError("PeriodicDiffeo needs a circle domain")
        self.phi.check_finite()
        if self.phi.values[0] != 0.0:
            raise InvalidInputError("periodic maps are normalised by phi(0) = 0")
        check_strictly_increasing(np.append(self.phi.values, 1.0), "circle map samples")
        # phi(x) - x is periodic
        phi_x = 1.0 + derivative(self.phi - self.phi.x) if self.phi_x is None else self.phi_x
        bad = np.flatnonzero(~(phi_x.values > 0))
        if bad.size:
            raise MonotonicityError("phi_x is not strictly positive", int(bad[0]))
        object.__setattr__(self, "phi_x", phi_x)

    @classmethod
    def identity(cls, n: int) -> "PeriodicDiffeo":
        grid = GridFunction.sample(Circle(), n, lambda x: x)
        return cls(grid, grid.with_values(np.ones(n)))

    @property
    def x(self) -> np.ndarray:
        return self.phi.x


@dataclass(frozen=True, eq=False)
class SphereFn:
    """Point of the open subset {f > 0} of the L^r-sphere of radius r"""

    f: GridFunction
    r: float
    sphere_tol: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.f.domain, Circle):
            raise InvalidInputError("sphere functions live on the circle")
        if not (self.r >= 1 and np.isfinite(self.r)):
            raise InvalidInputError(f"the L^r-sphere needs finite r >= 1, got {self.r}")
        self.f.check_finite()
        tol = SPHERE_TOL_FACTOR * self.r if self.sphere_tol is None else self.sphere_tol
        object.__setattr__(self, "sphere_tol", tol)
        bad = np.flatnonzero(~(self.f.values > 0))
        if bad.size:
            raise BoundaryError(f"f is not positive at index {bad[0]}", math.nan)
        norm = lp_norm(self.f, self.r)
        if abs(norm - self.r) > tol:
            raise OffSphereError(norm, self.r)

    @property
    def norm(self) -> float:
        return lp_norm(self.f, self.r)


def phi_map_periodic(phi: PeriodicDiffeo, r: float) -> SphereFn:
    """Phi(phi) = r phi_x^(1/r)"""
    if not (r >= 1 and np.isfinite(r)):
        raise InvalidInputError(f"the periodic isometry needs finite r >= 1, got {r}")
    return SphereFn(phi.phi_x.with_values(r * phi.phi_x.values ** (1.0 / r)), r)


def phi_inverse_periodic(f: Union[SphereFn, GridFunction], r: Optional[float] = None) -> PeriodicDiffeo:
    """phi(x) = r^-r int_0^x f^r, renormalised so that phi(1) = 1 exactly"""
    if not isinstance(f, SphereFn):
        if r is None:
            raise InvalidInputError("r is required when passing a bare grid function")
        f = SphereFn(f, r)
    weight = (f.f.values / f.r) ** f.r
    running, total = cumulative_integral_periodic(f.f.with_values(weight))
    return PeriodicDiffeo(running / total, f.f.with_values(weight / total))


def sphere_tangent_project(f: SphereFn, g: GridFunction) -> GridFunction:
    """Remove from g its component along the constraint gradient f^(r-1)"""
    if not g.same_grid(f.f):
        raise InvalidInputError("tangent candidate and sphere point live on different grids")
    w = f.f.with_values(f.f.values ** (f.r - 1.0))
    return g - (integrate(w * g) / integrate(w * w)) * w


def great_circle_r2(f0: SphereFn, g0: GridFunction, t: float, tol: float = TANGENCY_TOL) -> SphereFn:
    """Exact geodesic of the round L^2-sphere of radius 2"""
    if f0.r != 2:
        raise InvalidInputError("great circles are the geodesics of the r = 2 sphere only")
    speed = lp_norm(g0, 2)
    if speed == 0.0:
        return f0
    if abs(integrate(f0.f * g0)) > tol * 2.0 * speed:
        raise TangencyError("g0 is not tangent to the sphere at f0")
    direction = g0.values / speed

    def lowest(tau: float) -> float:
        angle = speed * tau / 2.0
        return float(np.min(math.cos(angle) * f0.f.values + 2.0 * math.sin(angle) * direction))

    if lowest(t) <= 0:
        hit = brentq(lowest, 0.0, t, xtol=1e-14)
        raise BoundaryError("great circle leaves the positive part of the sphere", hit)
    angle = speed * t / 2.0
    return SphereFn(f0.f.with_values(math.cos(angle) * f0.f.values + 2.0 * math.sin(angle) * direction), 2.0,
                    f0.sphere_tol)


def initial_sphere_velocity(u0: GridFunction, r: float) -> Tuple[SphereFn, GridFunction]:
    """Phi(id) = r and its initial velocity u0', projected to the tangent space"""
    f0 = SphereFn(u0.with_values(np.full(u0.n, float(r))), r)
    return f0, sphere_tangent_project(f0, derivative(u0))


# ---------------------------------------------------------------------------
# Constrained geodesic integrator
# ---------------------------------------------------------------------------

def _velocity(p: np.ndarray, r: float) -> np.ndarray:
    """Inverse Legendre map p = |v|^(r-2) v"""
    return np.sign(p) * np.abs(p) ** (1.0 / (r - 1.0))


def _momentum(v: np.ndarray, r: float) -> np.ndarray:
    return np.sign(v) * np.abs(v) ** (r - 1.0)


def _solve_multiplier(residual: Callable[[float], float]) -> float:
    """Nearest root of an increasing scalar function, bracketed outward from 0"""
    start = residual(0.0)
    if abs(start) <= 1e-15:
        return 0.0
    direction = -1.0 if start > 0 else 1.0
    step = BRACKET_START
    for _ in range(BRACKET_DOUBLINGS):
        trial = direction * step
        if np.sign(residual(trial)) != np.sign(start):
            lo, hi = sorted((0.0, trial))
            return brentq(residual, lo, hi, xtol=1e-300, rtol=1e-15, maxiter=500)
        step *= 2.0
    raise PJFlowError("could not bracket the sphere-constraint multiplier")


def _rattle_step(f: np.ndarray, p: np.ndarray, r: float, h: float, step: float) -> Tuple[np.ndarray, np.ndarray]:
    radius_power = r ** r
    w = f ** (r - 1.0)

    def position(mu: float) -> np.ndarray:
        return f + step * _velocity(p + 0.5 * step * mu * w, r)

    def on_sphere(mu: float) -> float:
        return h * np.sum(np.abs(position(mu)) ** r) / radius_power - 1.0

    mu = _solve_multiplier(on_sphere)
    p_half = p + 0.5 * step * mu * w
    f_new = f + step * _velocity(p_half, r)
    w_new = np.abs(f_new) ** (r - 1.0)

    def tangency(nu: float) -> float:
        return h * np.sum(w_new * _velocity(p_half + 0.5 * step * nu * w_new, r))

    nu = _solve_multiplier(tangency)
    return f_new, p_half + 0.5 * step * nu * w_new


def _sample(f: np.ndarray, p: np.ndarray, r: float, like: GridFunction, tol: float,
            kind: Interpolation):
    sphere = SphereFn(like.with_values(f), r, tol)
    diffeo = phi_inverse_periodic(sphere)
    f_t = _velocity(p, r)
    phi_xt = (f / r) ** (r - 1.0) * f_t
    phi_t, _ = cumulative_integral_periodic(like.with_values(phi_xt))
    xp = np.append(diffeo.phi.values, 1.0)
    u = interpolate(xp, np.append(phi_t.values, 0.0), like.x, kind)
    slope = phi_xt / diffeo.phi_x.values
    return sphere, diffeo, phi_t, like.with_values(u), like.with_values(slope)


def periodic_geodesic(u0: GridFunction, r: float, times, dt: float,
                      boundary_tol: float = BOUNDARY_TOL, sphere_tol: Optional[float] = None,
                      kind: Interpolation = Interpolation.PCHIP) -> Trajectory:
    """Geodesic of Diff_0(S^1) from the identity with initial velocity u0 (u0(0) = 0)"""
    if not isinstance(u0.domain, Circle):
        raise InvalidInputError("periodic_geodesic needs a circle domain")
    u0.check_finite()
    if abs(u0.values[0]) > 1e-12:
        raise InvalidInputError("initial velocity must satisfy u0(0) = 0")
    if not (r > 1 and np.isfinite(r)):
        raise InvalidInputError(f"the sphere solver needs finite r > 1, got {r}")
    if not dt > 0:
        raise InvalidInputError("time step must be positive")
    params = FlowParams(r, times)
    tol = SPHERE_TOL_FACTOR * r if sphere_tol is None else sphere_tol

    f0, g0 = initial_sphere_velocity(u0, r)
    f, p = f0.f.values.copy(), _momentum(g0.values, r)
    h = u0.h

    spheres, diffeos, phi_ts, velocities, slopes, rows = [], [], [], [], [], []

    def record(t: float) -> None:
        sphere, diffeo, phi_t, u, slope = _sample(f, p, r, u0, tol, kind)
        spheres.append(sphere)
        diffeos.append(diffeo)
        phi_ts.append(phi_t)
        velocities.append(u if t > 0 else u0)
        slopes.append(slope)
        rows.append({
            "t": t,
            "finsler_speed": lp_norm(u0.with_values(_velocity(p, r)), r),
            "slope_norm": integrate(u0.with_values(np.abs(slope.values) ** r * diffeo.phi_x.values)) ** (1.0 / r),
            "min_phi_x": float(diffeo.phi_x.values.min()),
            "min_f": float(f.min()),
            "constraint_drift": abs(sphere.norm - r),
        })

    record(0.0)
    t = 0.0
    total_steps = 0
    for target in params.times[1:]:
        steps = max(1, math.ceil((target - t) / dt - 1e-9))
        step = (target - t) / steps
        start = t
        for j in range(1, steps + 1):
            lowest_before = float(f.min())
            f, p = _rattle_step(f, p, r, h, step)
            lowest = float(f.min())
            now = start + j * step
            if lowest < boundary_tol:
                # extrapolate min f linearly to zero
                slope_min = (lowest - lowest_before) / step
                hit = now - lowest / slope_min if slope_min < 0 else now
                raise BoundaryError(f"min f = {lowest:.3e} fell below {boundary_tol:.1e} at t = {now:.6g}", hit)
            drift = abs((h * np.sum(np.abs(f) ** r)) ** (1.0 / r) - r)
            if drift > tol:
                raise OffSphereError(r + drift, r)
        total_steps += steps
        t = float(target)
        record(t)

    logger.info("periodic geodesic r=%g: %d steps to t=%g, max drift %.2e",
                r, total_steps, t, max(row["constraint_drift"] for row in rows))
    return Trajectory(params, tuple(diffeos), tuple(velocities), tuple(phi_ts), tuple(slopes),
                      pd.DataFrame(rows), INF, u0, sphere=tuple(spheres))
