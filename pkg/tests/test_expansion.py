import numpy as np
import pytest

from expansion.conformal_completion import audit_completion, completion_core, conformal_completion, cusp_profile
from expansion.ell_estimate import (EllEstimateTrace, ell_integral_estimate, fit_evolution_constant,
                                    probe_ell_estimates)
from expansion.pipeline import (boundary_reach, calibrate_c1, erode, hyperbolic_bump, run_desk_expansion,
                                run_expansion, surface_ell)
from expansion.schedule import (junction_series_bound, junction_series_closed_form, junction_series_sum,
                                plan_schedule)
from expansion.weak_inequality import bump_test_field, weak_inequality_check
from flows.conformal_surface import integrate_conformal_surface_flow, stability_bound
from geometry.discrete_manifold import disk_mask, flat_manifold
from heat.metric_trajectory import MetricTrajectory
from localization.cutoff import build_cutoff, verify_cutoff
from shared.errors import AuditFailureError, ConfigurationError, HypothesisViolationError, InfeasibleConstantsError
from shared.settings import LabSettings


def flat_run(m=64):
    settings = LabSettings(m=m)
    initial = np.zeros((m, m))
    c1 = calibrate_c1(initial, settings.tau, settings)
    schedule = plan_schedule(c1, settings.tau, settings.t1, settings.r0, max_stages=settings.max_stages)
    return run_expansion(initial, schedule, settings=settings)


@pytest.fixture(scope="module")
def bump_run():
    return run_desk_expansion(LabSettings())


@pytest.fixture(scope="module")
def flat_expansion():
    return flat_run()


@pytest.fixture(scope="module")
def resolved_run():
    return run_desk_expansion(LabSettings.resolved())


def test_schedule_ratio_from_constants():
    schedule = plan_schedule(1.0, 1e-5, 1e-9, 0.45, gamma_conf=2.0)
    assert schedule.constants["C3"] == 8.0
    assert schedule.nu == 1.03125
    ratios = np.array(schedule.t_seq[1:]) / np.array(schedule.t_seq[:-1])
    np.testing.assert_allclose(ratios, schedule.nu, rtol=1e-12)
    assert schedule.ledger_ok
    assert schedule.stage_bounds()[0] == (0.0, 1e-9)


@pytest.mark.parametrize("c1, tau, t1, inequality", [
    (1.0, 2.0, 1e-3, "tau <= 1"),
    (1.0, 1e-3, 1e-9, "beta^2 C3 tau <= sqrt(tau)/16"),
    (1e-3, 1e-3, 1e-9, "tau <= C1/4"),
    (1.0, 1e-5, 1e-5, "t1 <= tau/2"),
])
def test_infeasible_constants_name_the_inequality(c1, tau, t1, inequality):
    with pytest.raises(InfeasibleConstantsError) as info:
        plan_schedule(c1, tau, t1, 0.45)
    assert info.value.inequality == inequality


def test_schedule_at_half_tau_has_one_stage():
    schedule = plan_schedule(1.0, 1e-5, 0.5e-5, 0.45)
    assert len(schedule) == 1
    assert schedule.exit_reason == "uniform time tau/2 reached"
    assert schedule.radius_drop == 0.0


def test_schedule_stage_cap_and_radius_budget():
    capped = plan_schedule(1.0, 1e-5, 1e-12, 0.45, max_stages=4)
    assert len(capped) == 4 and capped.exit_reason == "stage cap"
    long = plan_schedule(1.0, 1e-5, 1e-12, 0.45)
    assert long.exit_reason in ("radius budget exhausted", "uniform time tau/2 reached")
    assert long.radius_drop <= 1.0
    assert all(a > b for a, b in zip(long.r_seq, long.r_seq[1:]))


def test_junction_series_closed_form():
    schedule = plan_schedule(1.0, 1e-5, 1e-9, 0.45, max_stages=30)
    direct = junction_series_sum(schedule.t_seq)
    closed = junction_series_closed_form(schedule.t_seq[-1], schedule.nu, len(schedule) - 1)
    assert closed == pytest.approx(direct, rel=1e-10)
    assert junction_series_bound(schedule.t_seq[-1], schedule.nu) >= direct


def test_schedule_save(tmp_path):
    schedule = plan_schedule(1.0, 1e-5, 1e-9, 0.45, max_stages=3)
    path = schedule.save(tmp_path / "schedule.json")
    assert path.exists()
    assert (tmp_path / "schedule.csv").read_text().startswith("#")


def test_cusp_profile_shape():
    s = np.linspace(0.05, 3.0, 200)
    eta = cusp_profile(s)
    assert cusp_profile(np.array([0.25]))[0] == pytest.approx(4.0)
    assert np.all(eta[s >= 2.0] == 1.0)
    assert np.all(np.diff(eta) <= 1e-15)
    assert np.all(eta >= 1.0)


def test_completion_is_exact_on_core_and_dominates():
    man = flat_manifold(64)
    region = disk_mask(64, radius=0.3)
    completed = conformal_completion(man, region, 0.05)
    check = audit_completion(man, completed, 0.05, centre=(32, 32))
    assert check.equal_on_core and check.dominates and check.passed
    assert check.core_cells > 0 and check.collar_cells > 0
    assert check.gamma_conf is not None and check.gamma_conf > 0.0
    assert check.boundary_ratio > 1.0
    np.testing.assert_array_equal(completed.mask, region)


def test_completion_is_idempotent_away_from_collar():
    man = flat_manifold(64)
    region = disk_mask(64, radius=0.3)
    core = completion_core(man, region, 0.05)
    once = conformal_completion(man, region, 0.05)
    np.testing.assert_array_equal(once.u[core], man.u[core])


def test_completion_without_boundary_is_a_notice():
    man = flat_manifold(16)
    completed = conformal_completion(man, np.ones((16, 16), dtype=bool), 0.1)
    np.testing.assert_array_equal(completed.u, man.u)


@pytest.mark.parametrize("rho", [0.0, 1.5])
def test_completion_scale_must_be_in_unit_interval(rho):
    with pytest.raises(ValueError):
        conformal_completion(flat_manifold(16), disk_mask(16), rho)


def test_completion_of_empty_region():
    with pytest.raises(ValueError):
        conformal_completion(flat_manifold(16), np.zeros((16, 16), dtype=bool), 0.1)


@pytest.mark.slow
def test_completed_boundary_recedes_under_refinement():
    ratios = []
    for m in (32, 64, 128):
        man = flat_manifold(m)
        completed = conformal_completion(man, disk_mask(m, radius=0.3), 0.05)
        ratios.append(audit_completion(man, completed, 0.05, centre=(m // 2, m // 2)).boundary_ratio)
    assert ratios[0] < ratios[1] < ratios[2]


def test_erode_peels_layers():
    region = disk_mask(32, radius=0.3)
    np.testing.assert_array_equal(erode(region, 0), region)
    once = erode(region, 1)
    assert once.sum() < region.sum()
    assert not np.any(once & ~region)


def test_hyperbolic_bump_hits_alpha0():
    u = hyperbolic_bump(64, (32, 32), 0.05, 0.05)
    assert np.max(surface_ell(u)) == pytest.approx(0.05, rel=1e-8)
    assert surface_ell(u)[32, 32] == 0.0
    np.testing.assert_array_equal(hyperbolic_bump(16, (8, 8), 0.1, 0.0), 0.0)


def test_ell_grows_with_alpha0():
    small = hyperbolic_bump(32, (16, 16), 0.1, 0.02)
    large = hyperbolic_bump(32, (16, 16), 0.1, 0.05)
    assert np.all(surface_ell(small) <= surface_ell(large) + 1e-15)
    dt = 0.5 * min(stability_bound(small), stability_bound(large))
    ends = [integrate_conformal_surface_flow(u, dt, 3).states[-1] for u in (small, large)]
    assert np.max(surface_ell(ends[0])) <= np.max(surface_ell(ends[1]))


def test_flat_run_keeps_ell_zero(flat_expansion):
    run = flat_expansion
    assert len(run.stages) == 5
    assert run.passed
    assert all(s.ell_max <= 1e-10 for s in run.stages)
    assert run.flow.junctions_ok
    assert run.schedule.exit_reason == "stage cap"


def test_bump_run_passes_every_audit(bump_run):
    run = bump_run
    assert len(run.stages) == 5
    assert run.passed, [f.to_dict() for f in run.audit.failures()]
    assert 0.9 <= run.c4_measured <= run.settings.c4
    assert run.schedule.ledger_ok
    assert run.flow.junctions_ok
    assert min(run.flow.junction_margins) >= 0.0
    assert run.gamma_conf_measured is not None
    assert all(s.core_cells > 0 for s in run.stages)


def test_bump_run_save(bump_run, tmp_path):
    path = bump_run.save(tmp_path)
    assert path.name == "run.json"
    assert (tmp_path / "stages.csv").exists()
    assert (tmp_path / "stage_04.csv").exists()
    assert bump_run.to_frame().shape[0] == 5


def small_bump_schedule(settings):
    initial = hyperbolic_bump(settings.m, settings.x0, settings.bump_width, settings.alpha0)
    schedule = plan_schedule(4.0 * settings.tau, settings.tau, settings.t1, settings.r0, max_stages=2)
    return initial, schedule


def test_strict_mode_raises_on_apa3():
    settings = LabSettings(m=32, bump_width=0.1, c4=0.5, report_only=False)
    initial, schedule = small_bump_schedule(settings)
    with pytest.raises(AuditFailureError) as info:
        run_expansion(initial, schedule, settings=settings)
    assert info.value.audit == "APA3"
    assert info.value.stage == 0
    assert info.value.cell is not None


def test_report_only_mode_records_failures():
    settings = LabSettings(m=32, bump_width=0.1, c4=0.5)
    initial, schedule = small_bump_schedule(settings)
    run = run_expansion(initial, schedule, settings=settings)
    assert not run.passed
    assert {f.audit_name for f in run.audit.failures()} == {"APA3"}
    assert len(run.stages) == 2


def test_tail_distance_below_threshold():
    settings = LabSettings(m=32, tail_distance=1e-12)
    initial, schedule = small_bump_schedule(settings)
    with pytest.raises(ConfigurationError):
        run_expansion(initial, schedule, settings=settings)


def test_evolution_constant_of_static_flow_is_zero():
    u = hyperbolic_bump(32, (16, 16), 0.1, 0.05)
    traj = MetricTrajectory(np.array([0.0, 1e-3]), np.stack([u, u]))
    # ell constant in time: the fit only measures -Lap ell - scal ell
    assert fit_evolution_constant(traj) >= 0.0
    flat = MetricTrajectory(np.array([0.0, 1e-3]), np.zeros((2, 16, 16)))
    assert fit_evolution_constant(flat) == 0.0


def test_ell_estimate_on_flat_run(flat_expansion):
    run = flat_expansion
    trace = ell_integral_estimate(run, run.settings.x0)
    assert trace.i_term == 0.0 and trace.j_term == 0.0
    assert trace.boundary_term == 0.0 and trace.measured_ell == 0.0
    assert trace.passed
    assert trace.dominance is None


def test_ell_estimate_on_bump_run(bump_run):
    traces = probe_ell_estimates(bump_run)
    assert traces
    for trace in traces:
        assert trace.passed, trace.to_dict()
        assert min(trace.boundary_term, trace.i_term, trace.j_term) >= 0.0
        assert trace.boundary_term <= 2.0 * bump_run.settings.alpha0 * bump_run.settings.c4
    active = [trace for trace in traces if trace.measured_ell > 1e-6]
    assert active
    for trace in active:
        assert trace.dominance is None or trace.dominance >= 10.0
        assert trace.series_bound > 0.0


def test_ell_estimate_needs_room(bump_run):
    m = bump_run.settings.m
    with pytest.raises(HypothesisViolationError):
        ell_integral_estimate(bump_run, (bump_run.settings.x0[0] + m // 3, bump_run.settings.x0[1]))


def test_trace_bound_and_ratios():
    trace = EllEstimateTrace(point=(1, 1), t=0.0, stage=1, r=0.1, radius=0.3, evolution_c=0.0, boundary_term=0.1,
                             i_term=0.005, j_term=0.005, measured_ell=0.1, series_bound=0.01, alpha0=0.05)
    assert trace.bound == pytest.approx(0.11)
    assert trace.passed
    assert trace.dominance == pytest.approx(10.0)
    assert trace.boundary_ratio == pytest.approx(1.0)
    assert trace.j_ratio == pytest.approx(0.5)


def test_weak_inequality_on_flat_run(flat_expansion):
    stage = flat_expansion.flow.stages[1]
    report = weak_inequality_check(stage, bump_test_field((0.5, 0.5), 0.1))
    assert report.lhs == 0.0 and report.rhs == 0.0
    assert report.passed


def test_weak_inequality_on_bump_run(bump_run):
    x0 = bump_run.settings.x0
    centre = ((x0[0] + 0.5) / bump_run.settings.m, (x0[1] + 0.5) / bump_run.settings.m)
    for stage in bump_run.flow.stages:
        report = weak_inequality_check(stage, bump_test_field(centre, 0.15))
        assert report.passed, report.to_dict()
        assert report.slack >= -1e-6


def test_weak_inequality_with_cutoff_envelopes(bump_run):
    stage = bump_run.flow.stages[2]
    cf = build_cutoff(stage, bump_run.settings.x0, 0.14, 0.047, k=1.0)
    measured = verify_cutoff(cf, comparison=False)
    report = weak_inequality_check(stage, cf.phi, times=cf.times,
                                   envelopes=(measured.laplacian_sup, measured.time_derivative_sup))
    assert report.passed, report.to_dict()
    assert report.envelopes_hold
    assert report.envelope_rhs >= report.rhs - report.tolerance


def test_weak_inequality_flags_negative_test_field():
    traj = MetricTrajectory(np.array([0.0, 1e-3]), np.zeros((2, 16, 16)))
    report = weak_inequality_check(traj, -np.ones((2, 16, 16)), times=[0.0, 1e-3])
    assert not report.passed
    assert report.violations[0]["check"] == "psi >= 0"


def test_ledger_scale_shrinks_radius_drop():
    exact = plan_schedule(1.0, 1e-5, 1e-9, 0.45, max_stages=4)
    scaled = plan_schedule(1.0, 1e-5, 1e-9, 0.45, max_stages=4, ledger_scale=0.1)
    assert scaled.t_seq == exact.t_seq
    assert scaled.radius_drop == pytest.approx(0.1 * exact.radius_drop, rel=1e-12)
    assert scaled.exact_radius_drop == pytest.approx(exact.radius_drop, rel=1e-12)
    with pytest.raises(ValueError):
        plan_schedule(1.0, 1e-5, 1e-9, 0.45, ledger_scale=0.0)


def test_boundary_reach_is_capped_by_steps():
    u = np.zeros((64, 64))
    assert boundary_reach(u, None, 1e-12, 10) == 1
    # 5 sqrt(2e-3) * 64 = 14.3 cells
    assert boundary_reach(u, None, 1e-3, 10) == 10
    assert boundary_reach(u, None, 1e-3, 40) == 15


def test_bump_run_stages_are_integrated(bump_run):
    for stage in bump_run.stages:
        assert stage.steps >= bump_run.settings.min_stage_steps
        assert stage.field_change > 0.0
    assert "field_change" in bump_run.to_frame().columns


def test_failed_probe_becomes_a_failed_trace(bump_run):
    m, (x, y) = bump_run.settings.m, bump_run.settings.x0
    traces = probe_ell_estimates(bump_run, probes=[(x, y), (x + m // 3, y)])
    assert len(traces) == 2
    assert traces[0].error is None and traces[0].passed
    assert traces[1].error is not None
    assert not traces[1].passed
    assert traces[1].dominance is None and traces[1].remainder_share is None
    assert traces[1].to_dict()["error"] == traces[1].error


@pytest.mark.slow
def test_resolved_run_moves_the_metric(resolved_run):
    run = resolved_run
    assert len(run.stages) == 5
    assert run.schedule.nu == pytest.approx(1.625)
    assert run.schedule.ledger_ok
    for stage in run.stages:
        assert stage.steps >= run.settings.min_stage_steps
        assert stage.field_change > 1e-7
    assert all(s.core_cells > 0 for s in run.stages)


@pytest.mark.slow
def test_resolved_run_estimate_has_live_remainder(resolved_run):
    traces = probe_ell_estimates(resolved_run)
    assert len(traces) == len(resolved_run.settings.probe_offsets)
    for trace in traces:
        assert trace.error is None, trace.error
        assert trace.passed, trace.to_dict()
        assert trace.measured_ell > 1e-3
        # the kernel reaches the cutoff annulus, yet the boundary term dominates
        assert trace.remainder_share > 1e-6
        assert trace.dominance > 1.0
