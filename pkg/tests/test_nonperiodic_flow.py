import numpy as np
import numpy.testing as npt
import pytest
from scipy.integrate import quad
from scipy.stats import linregress

from core_functions import (
    GridFunction,
    Interpolation,
    Line,
    PiecewiseLinearFn,
    compose,
    derivative,
    lp_norm,
    pl_to_grid,
)
from errors import BlowUpError, InsufficientDataError, InvalidInputError, NoBlowUpError, OutOfImageError
from nonperiodic_flow import (
    INF,
    Diffeo,
    FlowParams,
    blowup_time,
    bvp_geodesic,
    continue_to_blowup,
    energy,
    eulerian_velocity,
    exact_flow,
    finsler_norm,
    geodesic_distance,
    in_completion,
    lagrangian_residual,
    path_length,
    phi_inverse_map,
    phi_map,
    pj_residual,
    velocity_slope,
)

FINE = Line(-1.0, 2.0)


def hat_grid(n=401):
    return pl_to_grid(PiecewiseLinearFn([0.0, 1.0, 2.0], [0.0, 1.0, 0.0]), Line(-1.0, 3.0), n)


def doubled_on_unit_interval(n=30001):
    x = np.linspace(FINE.a, FINE.b, n)
    phi = x + np.clip(x, 0.0, 1.0)
    phi_x = np.where((x >= 0) & (x <= 1), 2.0, 1.0)
    return Diffeo(GridFunction(FINE, phi), GridFunction(FINE, phi_x))


def test_flow_params_validation():
    with pytest.raises(InvalidInputError):
        FlowParams(0.0, [0.0, 1.0])
    with pytest.raises(InvalidInputError):
        FlowParams(2.0, [0.5, 1.0])
    assert FlowParams.from_lambda(0.0, [0.0]).r == INF
    assert FlowParams(INF, [0.0]).lam == 0.0
    assert FlowParams.from_lambda(0.5, [0.0]).r == 2.0


def test_diffeo_requires_left_anchoring(window):
    with pytest.raises(InvalidInputError):
        Diffeo(GridFunction.sample(window, 64, lambda x: x + 1.0))


# ---------------------------------------------------------------------------
# Isometry
# ---------------------------------------------------------------------------

def test_phi_map_identity_is_zero(window):
    for r in (1.0, 2.0, 3.0, INF):
        assert np.all(phi_map(Diffeo.identity(window, 64), r).values == 0.0)


def test_phi_map_of_doubling_step():
    f = phi_map(doubled_on_unit_interval(), 2.0)
    inside = (f.x > 0.01) & (f.x < 0.99)
    npt.assert_allclose(f.values[inside], 2 * (np.sqrt(2) - 1), rtol=1e-14)
    assert np.all(f.values[(f.x < -0.01) | (f.x > 1.01)] == 0.0)


def test_phi_map_stays_in_image(window, make_diffeo):
    for _ in range(5):
        assert phi_map(make_diffeo(window, 2048), 2.0).values.min() > -2.0


def test_phi_map_sub_unit_exponent_needs_flag(window):
    with pytest.raises(InvalidInputError):
        phi_map(Diffeo.identity(window, 16), 0.5)
    assert np.all(phi_map(Diffeo.identity(window, 16), 0.5, allow_sub_unit=True).values == 0.0)


def test_phi_inverse_map_examples(window, make_diffeo):
    npt.assert_allclose(phi_inverse_map(GridFunction.zeros(window, 64), 2.0).phi.values,
                        np.linspace(-8, 8, 64), atol=1e-14)

    original = make_diffeo(window, 2048)
    f = phi_map(original, 3.0)
    assert f.values.min() > -3.0 + 0.1
    back = phi_inverse_map(f, 3.0)
    assert np.max(np.abs(phi_map(back, 3.0).values - f.values)) < 1e-6
    assert np.max(np.abs(back.phi.values - original.phi.values)) < 1e-4


def test_phi_inverse_map_total_displacement():
    for r in (1.0, 2.0, 3.0):
        x = np.linspace(FINE.a, FINE.b, 30001)
        f = GridFunction(FINE, np.where((x >= 0) & (x <= 1), r * (2 ** (1 / r) - 1), 0.0))
        phi = phi_inverse_map(f, r)
        assert phi.phi.values[-1] - x[-1] == pytest.approx(1.0, abs=1e-3)


def test_phi_inverse_map_rejects_points_outside_image(window):
    values = np.zeros(64)
    values[30] = -2.5
    with pytest.raises(OutOfImageError):
        phi_inverse_map(GridFunction(window, values), 2.0)


@pytest.mark.parametrize("r", [1.0, 1.5, 2.0, 3.0])
def test_isometry_by_finite_differences(r, window, make_diffeo, make_tangent):
    eps = 1e-5
    for _ in range(20):
        phi = make_diffeo(window, 2048)
        h = make_tangent(window, 2048)
        moved = Diffeo(phi.phi + eps * h, phi.phi_x + eps * derivative(h))
        slope = (phi_map(moved, r) - phi_map(phi, r)) / eps
        assert lp_norm(slope, r) == pytest.approx(finsler_norm(phi, h, r), rel=1e-3)


# ---------------------------------------------------------------------------
# Exact flow and Eulerian quantities
# ---------------------------------------------------------------------------

def test_zero_velocity_is_stationary(window):
    traj = exact_flow(GridFunction.zeros(window, 128), FlowParams(2.0, [0.0, 1.0, 5.0]))
    for diffeo in traj.diffeos:
        npt.assert_array_equal(diffeo.phi.values, diffeo.x)


def test_r_one_is_burgers_displacement(gaussian):
    times = [0.0, 0.3, 0.7, 1.0]
    traj = exact_flow(gaussian, FlowParams(1.0, times))
    for t, diffeo in zip(times, traj.diffeos):
        npt.assert_array_equal(diffeo.phi.values, gaussian.x + t * gaussian.values)


def test_gaussian_flow_matches_closed_form(gaussian):
    traj = exact_flow(gaussian, FlowParams(2.0, [0.0, 1.0]))
    phi = traj.diffeos[-1]
    slope = derivative(gaussian).values
    assert np.max(np.abs(phi.phi_x.values - (1 + slope / 2) ** 2)) < 1e-8

    def integrand(z):
        return (1 - z * np.exp(-z ** 2)) ** 2 - 1

    for x0 in (-1.0, 0.0, 0.7, 3.0):
        k = int(np.argmin(np.abs(gaussian.x - x0)))
        exact = gaussian.x[k] + quad(integrand, -8.0, gaussian.x[k], points=[0.0])[0]
        assert phi.phi.values[k] == pytest.approx(exact, abs=1e-4)


def test_image_path_is_a_straight_line(gaussian):
    traj = exact_flow(gaussian, FlowParams(2.0, [0.0, 0.5, 1.0]))
    slope = derivative(gaussian).values
    for t, diffeo in zip(traj.times, traj.diffeos):
        npt.assert_allclose(phi_map(diffeo, 2.0).values, t * slope, atol=1e-12)


def test_exact_flow_errors(gaussian, window):
    with pytest.raises(BlowUpError) as info:
        exact_flow(gaussian, FlowParams(2.0, [0.0, 3.0]))
    assert info.value.blowup_time == pytest.approx(2 / (np.sqrt(2) * np.exp(-0.5)), rel=1e-4)
    with pytest.raises(InvalidInputError):
        exact_flow(gaussian + 1.0, FlowParams(2.0, [0.0, 1.0]))


def test_infinite_r_exists_for_all_time(gaussian):
    traj = exact_flow(gaussian, FlowParams(INF, [0.0, 5.0, 20.0]))
    assert traj.blowup_time == INF
    assert traj.diagnostics["min_phi_x"].iloc[-1] > 0


def test_initial_velocity_is_returned_exactly(gaussian):
    traj = exact_flow(gaussian, FlowParams(2.0, [0.0, 0.5]))
    assert eulerian_velocity(traj, 0) is gaussian


@pytest.mark.parametrize("r", [1.5, 2.0, 4.0])
def test_slope_norm_is_conserved(r, gaussian):
    T = blowup_time(gaussian, r)
    traj = exact_flow(gaussian, FlowParams(r, np.linspace(0.0, 0.9 * T, 10)))
    speed = traj.diagnostics["finsler_speed"].to_numpy()
    assert np.max(np.abs(speed / speed[0] - 1)) < 1e-6


def test_sup_slope_is_conserved_for_infinite_r(gaussian):
    traj = exact_flow(gaussian, FlowParams(INF, np.linspace(0.0, 3.0, 7)))
    initial = lp_norm(derivative(gaussian), INF)
    for k in range(len(traj)):
        assert lp_norm(velocity_slope(traj, k), INF) == pytest.approx(initial, abs=1e-8)


def test_eulerian_velocity_tracks_the_grid_slope(gaussian):
    traj = exact_flow(gaussian, FlowParams(2.0, [0.0, 1.0]))
    on_grid = velocity_slope(traj, 1, labels="eulerian")
    interior = slice(50, -50)
    assert np.max(np.abs(derivative(eulerian_velocity(traj, 1)).values[interior]
                         - on_grid.values[interior])) < 5e-3


def test_hat_slope_on_descending_segment():
    u0 = hat_grid()
    traj = exact_flow(u0, FlowParams(2.0, [0.0, 0.5]))
    k = int(np.argmin(np.abs(u0.x - 1.5)))
    assert velocity_slope(traj, 1).values[k] == pytest.approx(-4 / 3, rel=1e-12)


# ---------------------------------------------------------------------------
# Blow-up and the completion
# ---------------------------------------------------------------------------

def test_blowup_time_examples(gaussian):
    ramp = pl_to_grid(PiecewiseLinearFn([0.0, 1.0], [0.0, 1.0]), Line(-2.0, 3.0), 101)
    assert blowup_time(ramp, 2.0) == INF
    assert blowup_time(hat_grid(), 2.0) == pytest.approx(2.0, rel=1e-12)
    assert blowup_time(gaussian, 3.0) == pytest.approx(3 / (np.sqrt(2) * np.exp(-0.5)), rel=1e-4)
    assert blowup_time(gaussian, INF) == INF


def test_negative_r_blowup_is_driven_by_the_largest_slope(gaussian):
    T = blowup_time(gaussian, -1.0)
    assert T == pytest.approx(1 / (np.sqrt(2) * np.exp(-0.5)), rel=1e-4)
    traj = exact_flow(gaussian, FlowParams(-1.0, [0.0, 0.5 * T, 0.9 * T, 0.99 * T]))
    largest = traj.diagnostics["max_phi_x"].to_numpy()
    assert np.all(np.diff(largest) > 0)
    assert largest[-1] > 50
    with pytest.raises(BlowUpError):
        exact_flow(gaussian, FlowParams(-1.0, [0.0, T]))


@pytest.mark.parametrize("r", [1.5, 2.0, 3.0])
def test_min_phi_x_vanishes_at_blowup(r):
    u0 = hat_grid()
    T = blowup_time(u0, r)
    assert T == pytest.approx(r, rel=1e-12)
    traj = exact_flow(u0, FlowParams(r, [0.0, 0.999 * T]), kind=Interpolation.LINEAR)
    smallest = traj.diagnostics["min_phi_x"].iloc[-1]
    assert smallest == pytest.approx(1e-3 ** r, rel=1e-6)
    assert smallest < 1e-3


def test_continue_to_blowup_of_hat():
    u0 = hat_grid()
    limit = continue_to_blowup(u0, 2.0)
    assert limit.time == pytest.approx(2.0, rel=1e-12)
    segment = (u0.x > 1.01) & (u0.x < 1.99)
    assert np.max(limit.phi_x.values[segment]) < 1e-12
    assert limit.phi_x.values.min() <= 1e-6
    assert not limit.invertible
    assert in_completion(limit)


def test_continue_to_blowup_errors():
    ramp = pl_to_grid(PiecewiseLinearFn([0.0, 1.0], [0.0, 1.0]), Line(-2.0, 3.0), 101)
    with pytest.raises(NoBlowUpError):
        continue_to_blowup(ramp, 2.0)
    with pytest.raises(InvalidInputError):
        continue_to_blowup(hat_grid(), -1.0)


def test_completion_membership(window):
    assert in_completion(Diffeo.identity(window, 32))
    assert not in_completion(GridFunction.sample(window, 32, lambda x: -x))


# ---------------------------------------------------------------------------
# Metric quantities
# ---------------------------------------------------------------------------

def test_finsler_norm_at_identity_and_r_one(window, make_diffeo, make_tangent):
    h = make_tangent(window, 1024)
    for r in (1.0, 2.0, 3.0):
        assert finsler_norm(Diffeo.identity(window, 1024), h, r) == pytest.approx(lp_norm(derivative(h), r))
    assert finsler_norm(make_diffeo(window, 1024), h, 1.0) == pytest.approx(lp_norm(derivative(h), 1.0))


def test_finsler_norm_is_right_invariant(window, make_diffeo, make_tangent, rng):
    n = 4096
    phi = make_diffeo(window, n)
    h = make_tangent(window, n)
    b, c, w = 0.3, rng.uniform(-1, 1), 0.9
    bump = np.exp(-((phi.x - c) / w) ** 2)
    psi = Diffeo(GridFunction(window, phi.x + b * bump),
                 GridFunction(window, 1 - 2 * b * (phi.x - c) / w ** 2 * bump))
    composed = Diffeo(compose(phi.phi, psi.phi), compose(phi.phi_x, psi.phi) * psi.phi_x)
    for r in (1.5, 2.0, 3.0):
        assert finsler_norm(composed, compose(h, psi.phi), r) == pytest.approx(finsler_norm(phi, h, r), rel=5e-4)


def test_energy_examples(gaussian, window):
    still = exact_flow(GridFunction.zeros(window, 64), FlowParams(2.0, [0.0, 0.5, 1.0]))
    assert energy(still) == 0.0

    quadratic = exact_flow(gaussian, FlowParams(2.0, np.linspace(0.0, 1.0, 11)))
    assert energy(quadratic) == pytest.approx(lp_norm(derivative(gaussian), 2.0) ** 2, rel=1e-10)

    coarse = energy(exact_flow(gaussian, FlowParams(3.0, np.linspace(0.0, 1.0, 101))))
    fine = energy(exact_flow(gaussian, FlowParams(3.0, np.linspace(0.0, 1.0, 201))))
    assert fine == pytest.approx(lp_norm(derivative(gaussian), 3.0) ** 3, rel=1e-4)
    assert abs(fine - coarse) < 1e-4 * fine

    with pytest.raises(InsufficientDataError):
        energy(exact_flow(gaussian, FlowParams(2.0, [0.0])))


def test_geodesic_distance_examples(window, make_diffeo):
    phi = make_diffeo(window, 512)
    assert geodesic_distance(phi, phi, 2.0) == 0.0

    step = doubled_on_unit_interval()
    identity = Diffeo.identity(FINE, step.phi.n)
    assert geodesic_distance(identity, step, 2.0) == pytest.approx(2 * (np.sqrt(2) - 1), rel=1e-3)

    other = make_diffeo(window, 512)
    assert geodesic_distance(phi, other, 2.0) == pytest.approx(geodesic_distance(other, phi, 2.0), rel=1e-12)


def test_geodesic_distance_triangle_inequality(window, make_diffeo):
    for r in (1.0, 1.5, 2.0, 4.0):
        for _ in range(5):
            a, b, c = (make_diffeo(window, 512) for _ in range(3))
            assert geodesic_distance(a, c, r) <= geodesic_distance(a, b, r) + geodesic_distance(b, c, r) + 1e-12


def test_bvp_geodesic_connects_random_pairs(window, make_diffeo):
    times = np.linspace(0.0, 1.0, 21)
    for _ in range(10):
        start, end = make_diffeo(window, 4096), make_diffeo(window, 4096)
        traj = bvp_geodesic(start, end, 2.0, times)
        assert traj.unique_minimizer
        assert np.max(np.abs(traj.diffeos[0].phi.values - start.phi.values)) < 1e-8
        assert np.max(np.abs(traj.diffeos[-1].phi.values - end.phi.values)) < 1e-8
        assert all(d.phi_x.values.min() > 0 for d in traj.diffeos)
        distance = geodesic_distance(start, end, 2.0)
        assert path_length(traj) == pytest.approx(distance, rel=1e-4)
        assert traj.diagnostics["finsler_speed"].iloc[10] == pytest.approx(distance, rel=1e-4)


def test_bvp_geodesic_degenerate_cases(window, make_diffeo):
    identity = Diffeo.identity(window, 256)
    traj = bvp_geodesic(identity, identity, 2.0, [0.0, 0.5, 1.0])
    for diffeo in traj.diffeos:
        npt.assert_array_equal(diffeo.phi.values, identity.x)
    assert np.all(traj.diagnostics["finsler_speed"] == 0.0)

    flat = bvp_geodesic(identity, make_diffeo(window, 256), 1.0, [0.0, 1.0])
    assert flat.unique_minimizer is False


# ---------------------------------------------------------------------------
# Residuals
# ---------------------------------------------------------------------------

def _lagrangian(u0, r, t_end, samples):
    return lagrangian_residual(exact_flow(u0, FlowParams(r, np.linspace(0.0, t_end, samples))),
                               1.0 / r if np.isfinite(r) else 0.0)


@pytest.mark.parametrize("r", [2.0, 3.0])
def test_lagrangian_residual_converges_second_order(r, gaussian):
    coarse = _lagrangian(gaussian, r, 1.0, 101)
    fine = _lagrangian(gaussian, r, 1.0, 201)
    assert fine < 1e-4
    assert coarse / fine > 3.0


def test_lagrangian_residual_infinite_r(gaussian):
    # phi_tx / phi_x is constant in t, so only rounding remains
    assert _lagrangian(gaussian, INF, 1.0, 51) < 1e-8
    assert _lagrangian(gaussian, INF, 3.0, 101) < 1e-8


def test_lagrangian_residual_negative_r(gaussian):
    T = blowup_time(gaussian, -1.0)
    coarse = _lagrangian(gaussian, -1.0, 0.5 * T, 101)
    fine = _lagrangian(gaussian, -1.0, 0.5 * T, 201)
    assert coarse / fine > 3.0


def test_residuals_of_stationary_flow(window):
    still = exact_flow(GridFunction.zeros(window, 64), FlowParams(2.0, np.linspace(0.0, 1.0, 5)))
    assert lagrangian_residual(still, 0.5) == 0.0
    zeros = [GridFunction.zeros(window, 64)] * 3
    assert pj_residual(zeros, 0.5, times=[0.0, 0.1, 0.2]) == 0.0
    with pytest.raises(InsufficientDataError):
        lagrangian_residual(exact_flow(GridFunction.zeros(window, 64), FlowParams(2.0, [0.0, 0.5])), 0.5)


def test_lagrangian_residual_with_three_samples(gaussian):
    # phi_x is quadratic in t for r = 2, so only the outer difference errs
    traj = exact_flow(gaussian, FlowParams(2.0, [0.0, 0.1, 0.2]))
    assert lagrangian_residual(traj, 0.5) < 1e-2
    four = exact_flow(gaussian, FlowParams(2.0, [0.0, 0.1, 0.2, 0.3]))
    assert lagrangian_residual(four, 0.5) < 1e-2


@pytest.mark.parametrize("lam", [1 / 3, 1 / 2, 0.0])
@pytest.mark.parametrize("form", ["differentiated", "integrated"])
def test_pj_residual_of_exact_velocities(lam, form):
    r = INF if lam == 0 else 1 / lam
    residuals = []
    for n, dt in ((1024, 2e-3), (2048, 1e-3)):
        u0 = GridFunction.sample(Line(-8.0, 8.0), n, lambda x: np.exp(-x ** 2))
        times = np.linspace(0.0, 0.2, int(round(0.2 / dt)) + 1)
        traj = exact_flow(u0, FlowParams(r, times))
        residuals.append(pj_residual(list(traj.velocities), lam, times=times, form=form))
        assert pj_residual(traj, lam, form=form) == residuals[-1]
    assert residuals[1] < residuals[0]
    assert residuals[1] < 1e-2


def test_pj_residual_rejects_short_or_mismatched_input(gaussian):
    with pytest.raises(InsufficientDataError):
        pj_residual([gaussian, gaussian], 0.5, times=[0.0, 0.1])
    with pytest.raises(InsufficientDataError):
        pj_residual([gaussian] * 3, 0.5, times=[0.0, 0.1])
    with pytest.raises(InvalidInputError):
        pj_residual([gaussian] * 3, 0.5)
    with pytest.raises(InvalidInputError):
        pj_residual([gaussian] * 3, 0.5, times=[0.0, 0.1, 0.2], form="weak")


def test_flow_limit_converges_at_rate_one_over_r(gaussian):
    limit = exact_flow(gaussian, FlowParams(INF, [0.0, 1.0])).diffeos[-1].phi.values
    rs = 2.0 ** np.arange(1, 9)
    errors = [np.max(np.abs(exact_flow(gaussian, FlowParams(r, [0.0, 1.0])).diffeos[-1].phi.values - limit))
              for r in rs]
    assert linregress(np.log(rs), np.log(errors)).slope == pytest.approx(-1.0, abs=0.1)
