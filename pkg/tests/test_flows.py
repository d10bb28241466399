import numpy as np
import pytest

from curvature.cones import ConeKind, ConeSpec, ell
from curvature.curvature_operator import make_identity_operator
from flows.apriori import verify_apriori_bounds
from flows.conformal_surface import (flat_laplacian, gauss_curvature, integrate_conformal_surface_flow,
                                     sinusoidal_field, stability_bound, step_conformal_surface_flow,
                                     total_area)
from flows.flow_record import FlowKind, FlowRecord
from flows.homogeneous import (berger_state, exact_round_coefficient, homogeneous_curvature,
                               integrate_homogeneous_flow, left_invariant_curvature,
                               milnor_structure_tensor, richardson_errors, round_sphere_state,
                               step_homogeneous_flow)
from flows.space_form import exact_space_form_flow, space_form_record
from flows.state_curvature import curvature_of_state, surface_operator
from shared.errors import SingularityReachedError, SingularTimeError, StepRejectedError
from shared.fitting import loglog_slope

TWO_NONNEG = ConeSpec(ConeKind.TWO_NONNEG)
NONNEG = ConeSpec(ConeKind.NONNEG_OPERATOR)


def test_round_two_sphere_scale_and_blowup():
    assert exact_space_form_flow(2, 1.0, 0.25).scale == pytest.approx(0.5)
    with pytest.raises(SingularTimeError) as info:
        exact_space_form_flow(2, 1.0, 0.5)
    assert info.value.blowup_time == pytest.approx(0.5)


def test_hyperbolic_space_form_expands():
    times = np.linspace(0.0, 1.0, 11)
    record = space_form_record(3, -1.0, times)
    for i, t in enumerate(times):
        assert record.state_at(i)[0] == pytest.approx(1.0 + 4.0 * t, abs=1e-12)
    curvatures = [abs(exact_space_form_flow(3, -1.0, t).sectional_curvature) for t in times]
    assert all(b < a for a, b in zip(curvatures, curvatures[1:]))
    ells = [ell(record.curvature_at(i), NONNEG).value for i in range(len(times))]
    assert all(b <= a for a, b in zip(ells, ells[1:]))


def test_round_su2_matches_exact_shrink():
    dt, steps = 0.002, 100
    record = integrate_homogeneous_flow(round_sphere_state(1.0), dt, steps)
    for i, t in enumerate(record.times):
        exact = exact_round_coefficient(1.0, t)
        np.testing.assert_allclose(record.state_at(i), exact, rtol=1e-8)


def test_homogeneous_against_space_form():
    record = integrate_homogeneous_flow(round_sphere_state(2.0), 0.001, 100)
    for i, t in enumerate(record.times):
        closed = exact_space_form_flow(3, 0.5, t)
        np.testing.assert_allclose(record.state_at(i), 2.0 * closed.scale, rtol=1e-6)
        np.testing.assert_allclose(record.curvature_at(i).lambda2_matrix,
                                   closed.curvature.lambda2_matrix, rtol=1e-6)


def test_rk4_order_four():
    counts = (10, 20, 40)
    errors = richardson_errors(berger_state(0.1), 0.02, counts, reference_steps=640)
    fit = loglog_slope([0.02 / c for c in counts], errors)
    assert fit.slope == pytest.approx(4.0, abs=0.2)


def test_zero_step_is_identity():
    state = berger_state(0.3)
    np.testing.assert_array_equal(step_homogeneous_flow(state, 0.0), state)


def test_permutation_commutes_with_stepping():
    state = np.array([1.3, 0.9, 1.1])
    perm = [2, 0, 1]
    stepped = step_homogeneous_flow(state, 0.01)
    np.testing.assert_array_equal(step_homogeneous_flow(state[perm], 0.01), stepped[perm])


def test_singularity_returns_last_state():
    state = round_sphere_state(0.01)
    with pytest.raises(SingularityReachedError) as info:
        step_homogeneous_flow(state, 0.01)
    np.testing.assert_array_equal(info.value.last_state, state)


def test_integration_stops_before_singularity():
    record = integrate_homogeneous_flow(round_sphere_state(0.1), 0.01, 10)
    assert record.last_time < 0.025
    assert np.all(record.state_at(-1) > 0.0)


@pytest.mark.parametrize("structure", [(2.0, 2.0, 2.0), (1.0, 1.0, 0.0), (1.0, -1.0, 0.0), (1.0, -1.0, 1.0)])
def test_milnor_curvature_matches_koszul(structure):
    rng = np.random.default_rng(2)
    for _ in range(20):
        coeffs = rng.uniform(0.5, 2.0, size=3)
        milnor = homogeneous_curvature(coeffs, structure)
        koszul = left_invariant_curvature(milnor_structure_tensor(coeffs, structure))
        np.testing.assert_allclose(koszul.lambda2_matrix, milnor.lambda2_matrix, atol=1e-10)


def test_round_state_curvature_is_multiple_of_identity():
    rm = curvature_of_state(FlowKind.HOMOGENEOUS3, round_sphere_state(0.5))
    np.testing.assert_allclose(rm.lambda2_matrix, 2.0 * np.eye(3), atol=1e-12)


def test_berger_state_has_requested_ell():
    rm = homogeneous_curvature(berger_state(0.1))
    assert ell(rm, TWO_NONNEG).value == pytest.approx(0.1, abs=1e-12)


def test_constant_field_is_stationary():
    u = np.full((16, 16), 0.3)
    np.testing.assert_array_equal(step_conformal_surface_flow(u, 1e-4), u)


def test_stability_violation_rejected():
    u = np.zeros((16, 16))
    bound = stability_bound(u)
    with pytest.raises(StepRejectedError) as info:
        step_conformal_surface_flow(u, 2.0 * bound)
    assert info.value.suggested_dt == pytest.approx(bound)


def test_surface_curvature_operator_is_one_by_one():
    u = 0.05 * sinusoidal_field(16, 1.0)
    field = curvature_of_state(FlowKind.CONFORMAL_SURFACE, u)
    np.testing.assert_allclose(field, gauss_curvature(u))
    assert surface_operator(field, (3, 4)).lambda2_matrix.shape == (1, 1)


def test_flat_laplacian_sums_to_zero():
    u = np.random.default_rng(0).standard_normal((16, 16))
    assert abs(flat_laplacian(u).sum()) < 1e-8


def test_area_conservation_converges():
    drifts, steps_sizes = [], []
    horizon = 0.004
    for m in (16, 32, 64):
        x = (np.arange(m) + 0.5) / m
        u0 = 0.3 * np.cos(2 * np.pi * x)[:, None] * np.cos(2 * np.pi * x)[None, :]
        dt = 0.1 / m ** 2 * np.exp(u0.min())
        steps = int(round(horizon / dt))
        dt = horizon / steps
        record = integrate_conformal_surface_flow(u0, dt, steps, record_every=steps)
        drift = abs(total_area(record.state_at(-1)) - total_area(u0)) / total_area(u0)
        drifts.append(drift)
        steps_sizes.append(dt)
    fit = loglog_slope(steps_sizes, drifts)
    assert max(drifts) < 1e-3
    assert fit.slope == pytest.approx(1.0, abs=0.2)


def test_sinusoid_decays_monotonically():
    u0 = sinusoidal_field(32, 0.01)
    dt = 0.5 * stability_bound(u0)
    record = integrate_conformal_surface_flow(u0, dt, 400, record_every=20)
    sups = [np.max(np.abs(record.state_at(i) - record.state_at(i).mean())) for i in range(len(record))]
    assert all(b <= a + 1e-15 for a, b in zip(sups[1:], sups[2:]))
    assert sups[-1] < sups[0]


def test_flow_record_rejects_non_increasing_time():
    record = FlowRecord(kind=FlowKind.HOMOGENEOUS3)
    record.append(0.0, np.ones(3), make_identity_operator(3))
    with pytest.raises(ValueError):
        record.append(0.0, np.ones(3), make_identity_operator(3))


def test_flow_record_slices_are_read_only():
    record = integrate_homogeneous_flow(round_sphere_state(1.0), 0.01, 3)
    with pytest.raises(ValueError):
        record.state_at(0)[0] = 5.0


def test_flow_record_save(tmp_path):
    record = integrate_homogeneous_flow(round_sphere_state(1.0), 0.01, 3)
    path = record.save(tmp_path / "flow.csv")
    text = path.read_text().splitlines()
    assert text[0].startswith("#")
    assert (tmp_path / "flow.json").exists()


def test_doubling_on_hyperbolic_flow():
    record = space_form_record(3, -1.0, np.linspace(0.0, 1.0 / 16.0, 21))
    report = verify_apriori_bounds(record, NONNEG, k=1.0, tau=1.0 / 16.0)
    assert report.doubling_ok
    assert report.violations == []


def test_round_three_sphere_has_zero_ell():
    record = integrate_homogeneous_flow(round_sphere_state(1.0), 0.001, 100)
    report = verify_apriori_bounds(record, TWO_NONNEG, k=1.0, tau=0.1)
    assert all(v == 0.0 for v in report.ell_series["TwoNonneg"])
    assert report.evolution_C == 0.0
    assert report.doubling_ok


def test_berger_flow_audit():
    state = berger_state(0.1)
    k = homogeneous_curvature(state).norm()
    record = integrate_homogeneous_flow(state, 1e-4, 500)
    report = verify_apriori_bounds(record, TWO_NONNEG, k=k, tau=0.05)
    assert report.ell_series["TwoNonneg"][0] == pytest.approx(0.1)
    assert report.c4 is not None and np.isfinite(report.c4)
    assert report.evolution_C is not None and report.evolution_C <= 50.0
    assert report.doubling_ok
    assert report.decay_constant >= max(t * record.curvature_norm(i)
                                        for i, t in enumerate(record.times) if 0 < t <= 0.05) - 1e-12
    assert np.isfinite(report.ell_lipschitz)


def test_flat_torus_apriori_is_trivial():
    record = integrate_conformal_surface_flow(np.zeros((16, 16)), 1e-4, 10)
    report = verify_apriori_bounds(record, NONNEG, k=1.0, tau=1e-3)
    assert report.decay_constant == 0.0
    assert report.c4 == 1.0
    assert report.evolution_C is None
