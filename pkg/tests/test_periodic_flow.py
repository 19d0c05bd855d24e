import math

import numpy as np
import numpy.testing as npt
import pytest

from core_functions import Circle, GridFunction, Line, integrate, lp_norm
from errors import (
    BoundaryError,
    InvalidInputError,
    MonotonicityError,
    OffSphereError,
    TangencyError,
)
from nonperiodic_flow import INF, finsler_norm
from periodic_flow import (
    PeriodicDiffeo,
    SphereFn,
    great_circle_r2,
    initial_sphere_velocity,
    periodic_geodesic,
    phi_inverse_periodic,
    phi_map_periodic,
    sphere_tangent_project,
)

CIRCLE = Circle()
# 2 sqrt(2) arctan(1 / sqrt(2)): min f of the great circle below reaches 0 at x = 1/2
SINE_HITTING_TIME = 2 * math.sqrt(2) * math.atan(1 / math.sqrt(2))


def random_periodic_diffeo(rng, n, with_slope=True):
    a1, a2 = rng.uniform(-0.4, 0.4, size=2)
    theta = rng.uniform(0, 2 * np.pi)
    x = np.arange(n) / n
    phi = (x + a1 * np.sin(2 * np.pi * x) / (2 * np.pi)
           + a2 * (np.sin(4 * np.pi * x + theta) - np.sin(theta)) / (4 * np.pi))
    phi[0] = 0.0
    grid = GridFunction(CIRCLE, phi)
    if not with_slope:
        return PeriodicDiffeo(grid)
    phi_x = 1 + a1 * np.cos(2 * np.pi * x) + a2 * np.cos(4 * np.pi * x + theta)
    return PeriodicDiffeo(grid, grid.with_values(phi_x))


def sine_velocity(n, amplitude=1.0):
    return GridFunction.sample(CIRCLE, n, lambda x: amplitude * np.sin(2 * np.pi * x) / (2 * np.pi))


def test_periodic_diffeo_validation():
    with pytest.raises(InvalidInputError):
        PeriodicDiffeo(GridFunction.sample(CIRCLE, 16, lambda x: x + 0.01))
    with pytest.raises(MonotonicityError):
        PeriodicDiffeo(GridFunction(CIRCLE, [0.0, 0.5, 0.4, 0.8]))
    with pytest.raises(InvalidInputError):
        PeriodicDiffeo(GridFunction.sample(Line(0, 1), 16, lambda x: x))


def test_identity_maps_to_constant_r():
    for r in (1.0, 2.0, 3.5):
        f = phi_map_periodic(PeriodicDiffeo.identity(64), r)
        npt.assert_allclose(f.f.values, r, rtol=1e-15)
        assert f.norm == pytest.approx(r, rel=1e-14)


def test_phi_map_periodic_direct_formula():
    x = np.arange(256) / 256
    grid = GridFunction(CIRCLE, x - np.sin(2 * np.pi * x) / (4 * np.pi))
    phi = PeriodicDiffeo(grid, grid.with_values(1 - np.cos(2 * np.pi * x) / 2))
    f = phi_map_periodic(phi, 2.0)
    npt.assert_allclose(f.f.values, 2 * np.sqrt(1 - np.cos(2 * np.pi * x) / 2), rtol=1e-14)


def test_image_lies_on_sphere(rng):
    for _ in range(20):
        phi = random_periodic_diffeo(rng, 1024)
        for r in (1.0, 2.0, 3.0):
            f = phi_map_periodic(phi, r)
            assert np.all(f.f.values > 0)
            assert abs(lp_norm(f.f, r) - r) < 1e-8


def test_inverse_roundtrip(rng):
    for _ in range(5):
        phi = random_periodic_diffeo(rng, 2048)
        for r in (2.0, 3.0):
            again = phi_inverse_periodic(phi_map_periodic(phi, r))
            assert np.max(np.abs(again.phi.values - phi.phi.values)) < 1e-6
            npt.assert_allclose(again.phi_x.values, phi.phi_x.values, rtol=1e-10)


def test_inverse_of_constant_is_identity():
    identity = phi_inverse_periodic(GridFunction(CIRCLE, np.full(32, 2.0)), 2.0)
    npt.assert_allclose(identity.phi.values, identity.x, atol=1e-15)


def test_off_sphere_function_is_rejected():
    with pytest.raises(OffSphereError) as info:
        phi_inverse_periodic(GridFunction(CIRCLE, np.full(32, 2.2)), 2.0)
    assert info.value.norm == pytest.approx(2.2)
    with pytest.raises(InvalidInputError):
        phi_inverse_periodic(GridFunction(CIRCLE, np.full(32, 2.0)))


def test_non_positive_function_is_outside_the_image():
    values = np.full(32, 2.0)
    values[5] = 0.0
    with pytest.raises(BoundaryError):
        SphereFn(GridFunction(CIRCLE, values), 2.0)


def test_periodic_isometry_by_finite_differences(rng):
    eps = 1e-5
    for _ in range(20):
        phi = random_periodic_diffeo(rng, 2048, with_slope=False)
        b, k = rng.uniform(-0.3, 0.3), int(rng.integers(1, 4))
        h = GridFunction.sample(CIRCLE, 2048, lambda x: b * np.sin(2 * np.pi * k * x))
        moved = PeriodicDiffeo(phi.phi + eps * h)
        for r in (1.0, 1.5, 2.0, 3.0):
            difference = (phi_map_periodic(moved, r).f - phi_map_periodic(phi, r).f) / eps
            assert lp_norm(difference, r) == pytest.approx(finsler_norm(phi, h, r), rel=1e-3)


def test_tangent_projection():
    f = SphereFn(GridFunction(CIRCLE, np.full(128, 2.0)), 2.0)
    wave = GridFunction.sample(CIRCLE, 128, lambda x: np.cos(2 * np.pi * x))
    npt.assert_allclose(sphere_tangent_project(f, wave).values, wave.values, atol=1e-12)


def test_projection_removes_constraint_component(rng):
    phi = random_periodic_diffeo(rng, 512)
    f = phi_map_periodic(phi, 3.0)
    projected = sphere_tangent_project(f, f.f)
    assert abs(integrate(f.f * f.f * projected)) < 1e-10
    again = sphere_tangent_project(f, projected)
    npt.assert_allclose(again.values, projected.values, atol=1e-12)


def test_great_circle_stays_on_sphere():
    f0, g0 = initial_sphere_velocity(sine_velocity(256), 2.0)
    for t in (0.1, 0.5, 1.0, 1.5):
        assert great_circle_r2(f0, g0, t).norm == pytest.approx(2.0, abs=1e-10)
    assert great_circle_r2(f0, g0.with_values(np.zeros(256)), 1.0) is f0


def test_great_circle_hits_boundary():
    f0, g0 = initial_sphere_velocity(sine_velocity(256), 2.0)
    with pytest.raises(BoundaryError) as info:
        great_circle_r2(f0, g0, 2.0)
    assert info.value.hitting_time == pytest.approx(SINE_HITTING_TIME, rel=1e-3)


def test_great_circle_checks_inputs():
    f0 = SphereFn(GridFunction(CIRCLE, np.full(64, 2.0)), 2.0)
    with pytest.raises(TangencyError):
        great_circle_r2(f0, GridFunction(CIRCLE, np.ones(64)), 0.5)
    f3 = SphereFn(GridFunction(CIRCLE, np.full(64, 3.0)), 3.0)
    with pytest.raises(InvalidInputError):
        great_circle_r2(f3, GridFunction(CIRCLE, np.zeros(64)), 0.5)


def test_zero_velocity_stays_at_identity():
    u0 = GridFunction.zeros(CIRCLE, 128)
    traj = periodic_geodesic(u0, 2.5, [0.0, 0.5, 1.0], dt=1e-2)
    for diffeo, u in zip(traj.diffeos, traj.velocities):
        npt.assert_allclose(diffeo.phi.values, diffeo.x, atol=1e-12)
        npt.assert_allclose(u.values, 0.0, atol=1e-12)


def test_r2_geodesic_matches_great_circle():
    u0 = sine_velocity(256)
    times = [0.0, 0.29, 0.58, 0.87]
    traj = periodic_geodesic(u0, 2.0, times, dt=1e-3)
    f0, g0 = initial_sphere_velocity(u0, 2.0)
    for sphere, t in zip(traj.sphere, times):
        oracle = great_circle_r2(f0, g0, t)
        assert np.max(np.abs(sphere.f.values - oracle.f.values)) < 1e-4


def test_constraint_drift_over_a_thousand_steps():
    traj = periodic_geodesic(sine_velocity(256, 0.5), 3.0, [0.0, 0.5, 1.0], dt=1e-3)
    assert traj.diagnostics["constraint_drift"].max() < 1e-6
    assert "slope_norm" in traj.diagnostics.columns
    for diffeo in traj.diffeos:
        assert diffeo.phi.values[0] == 0.0
        assert np.all(diffeo.phi_x.values > 0)


def test_geodesic_reports_boundary_hit():
    with pytest.raises(BoundaryError) as info:
        periodic_geodesic(sine_velocity(256), 2.0, [0.0, 2.0], dt=1e-3)
    assert info.value.hitting_time == pytest.approx(SINE_HITTING_TIME, rel=1e-2)


def test_geodesic_rejects_bad_input():
    u0 = sine_velocity(64)
    with pytest.raises(InvalidInputError):
        periodic_geodesic(u0, 1.0, [0.0, 0.1], dt=1e-2)
    with pytest.raises(InvalidInputError):
        periodic_geodesic(u0, INF, [0.0, 0.1], dt=1e-2)
    with pytest.raises(InvalidInputError):
        periodic_geodesic(u0, 2.0, [0.0, 0.1], dt=0.0)
    with pytest.raises(InvalidInputError):
        periodic_geodesic(GridFunction.sample(CIRCLE, 64, lambda x: np.cos(2 * np.pi * x)), 2.0, [0.0, 0.1], dt=1e-2)
    with pytest.raises(InvalidInputError):
        periodic_geodesic(GridFunction.sample(Line(0, 1), 64, lambda x: x * (1 - x)), 2.0, [0.0, 0.1], dt=1e-2)
