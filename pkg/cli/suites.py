import logging
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from cli.config import EXPANSION_KNOBS, ExperimentConfig
from cli.report import Series
from curvature.cones import EIGEN_TOL, FRAME_TOL, ConeKind, ConeSpec, cone_contains, ell
from curvature.curvature_operator import random_curvature_operator, ricci_tensor
from curvature.isotropic import SearchBudget
from distortion.distortion_report import shrinking_beta, verify_distortion
from distortion.limit_metric import LIMIT_TOL, limit_metric
from expansion.ell_estimate import probe_ell_estimates, run_evolution_constant, save_traces
from expansion.pipeline import run_desk_expansion
from expansion.schedule import RADIUS_BUDGET
from expansion.weak_inequality import bump_test_field, weak_inequality_check
from flows.apriori import verify_apriori_bounds
from flows.conformal_surface import integrate_conformal_surface_flow, stability_bound
from flows.homogeneous import (berger_state, homogeneous_curvature, integrate_homogeneous_flow, richardson_errors,
                               round_sphere_state)
from flows.space_form import exact_space_form_flow
from geometry.discrete_manifold import cell_centres, disk_mask
from heat.conjugate_kernel import KernelStepper, solve_conjugate_kernel
from heat.expansion_flow import ExpansionFlow, KernelSolver, identity_junction_flow
from heat.kernel_report import verify_kernel_properties
from heat.metric_trajectory import MetricTrajectory
from localization.cutoff import cutoff_scaling_study
from shared.errors import ConfigurationError, NonConvergentLimitError
from shared.fitting import loglog_slope
from shared.serialization import write_csv
from shared.settings import LabSettings

logger = logging.getLogger(__name__)

# cones
CONE_OPERATORS = 1000
CONE_DIMS = (3, 4, 5)
FRAME_BUDGET = SearchBudget(restarts=8, iterations=100)
ELL_AGREEMENT = 1e-8
SIGN_FLOOR = 1e-9
NESTING_SLACK = 10.0

# flows
FLOW_SAFETY = 0.5
FLAT_STEPS = 50
STATIONARY_ATOL = 1e-15
SPACE_FORM_RTOL = 1e-6
RK4_COUNTS = (10, 20, 40)
RK4_HORIZON = 0.02
RK4_REFERENCE_STEPS = 640
RK4_ORDER, RK4_ORDER_TOL = 4.0, 0.2
# (name, initial state, dt, steps, audit window)
DOUBLING_FIXTURES = (
    ("round", round_sphere_state(1.0), 1e-3, 100, 0.1),
    ("berger", berger_state(0.1), 1e-4, 500, 0.05),
)

# kernel
KERNEL_HORIZON = 0.01
EVOLVING_HORIZON = 0.005
EVOLVING_AMPLITUDE = 0.3
MASS_SAMPLES = 5
STATIC_MASS_TOL = 1e-10
EVOLVING_MASS_TOL = 5e-4
REFINEMENT_RATIO = 4.0
MASS_ROUNDOFF = 1e-9
JUNCTION_TOL = 5e-4
SHRINK_RADIUS = 0.3
REPRODUCTION_TOL = 1e-6

# cutoff
CUTOFF_RS = (0.05, 0.1, 0.2)
CUTOFF_RADIUS = 0.3

# distortion
DISTORTION_AMPLITUDE = 0.2
DISTORTION_HORIZON = 0.01
DISTORTION_RECORDS = 10
DISTORTION_MIN_M = 96  # Hoelder band [20 h, 0.25] is empty below this grid
DISTANCE_CHANGE_FLOOR = 1e-3
DISTORTION_PAIRS = 200
LIMIT_PAIRS = 3
LIMIT_T_MIN = 1e-12
PLOTTED_PAIRS = 3

# expansion
WEAK_TEST_RADIUS = 0.15


@dataclass
class CheckResult:
    suite: str
    check: str
    value: Optional[float]
    threshold: Optional[float]
    passed: bool
    hard: bool = True

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class FittedConstant:
    value: Optional[float]
    module: str
    tolerance: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {"value": self.value, "module": self.module, "tolerance": self.tolerance}


@dataclass
class SuiteResult:
    suite: str
    checks: List[CheckResult] = field(default_factory=list)
    constants: Dict[str, FittedConstant] = field(default_factory=dict)
    series: List[Series] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    execution_time: Optional[float] = None

    def check(self, name: str, value: Optional[float], threshold: Optional[float], passed: bool,
              hard: bool = True) -> CheckResult:
        result = CheckResult(suite=self.suite, check=name, value=None if value is None else float(value),
                             threshold=threshold, passed=bool(passed), hard=hard)
        self.checks.append(result)
        return result

    def constant(self, name: str, value: Optional[float], module: str, tolerance: Optional[float] = None):
        key = f"{self.suite}.{name}"
        if key in self.constants:
            raise ValueError(f"constant {key} registered twice")
        self.constants[key] = FittedConstant(None if value is None else float(value), module, tolerance)

    @property
    def failures(self) -> List[str]:
        return [f"{c.suite}: {c.check}" for c in self.checks if c.hard and not c.passed]

    @property
    def passed(self) -> bool:
        return not self.failures

    def to_frame(self) -> pd.DataFrame:
        columns = ["suite", "check", "value", "threshold", "passed", "hard"]
        return pd.DataFrame([c.to_dict() for c in self.checks], columns=columns)

    @classmethod
    def merge(cls, suite: str, results: List["SuiteResult"]) -> "SuiteResult":
        merged = cls(suite=suite)
        for result in results:
            merged.checks.extend(result.checks)
            merged.series.extend(result.series)
            merged.artifacts.extend(result.artifacts)
            for key, constant in result.constants.items():
                if key in merged.constants:
                    raise ValueError(f"constant {key} reported by two suites")
                merged.constants[key] = constant
        return merged

    def display(self):
        print(self.to_frame().to_markdown(index=False, floatfmt=".6g"))


class VerificationSuite(ABC):
    """A named batch of checks writing its artifacts into one directory"""

    @abstractmethod
    def get_suite_name(self) -> str:
        pass

    @abstractmethod
    def _run(self, config: ExperimentConfig, out_dir: Path, result: SuiteResult) -> None:
        pass

    def run(self, config: ExperimentConfig, out_dir: Path) -> SuiteResult:
        name = self.get_suite_name()
        print(f"=== Suite {name} ===")
        started = time.time()
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        result = SuiteResult(suite=name)
        self._run(config, out_dir, result)
        result.execution_time = time.time() - started
        print(f"suite {name}: {len(result.checks)} checks, {len(result.failures)} failures "
              f"({result.execution_time:.1f}s)")
        return result

    @staticmethod
    def _artifact(result: SuiteResult, path: Path, out_dir: Path) -> None:
        result.artifacts.append(path.relative_to(out_dir).as_posix())


class ConesSuite(VerificationSuite):
    """Closed-form against bisection ell, cone nesting and the n = 3 Ricci equivalence"""

    def get_suite_name(self) -> str:
        return "cones"

    def _run(self, config, out_dir, result):
        operators = int(config.sweep.get("cone_operators", CONE_OPERATORS))
        dims = [int(n) for n in config.sweep.get("dims", CONE_DIMS)]
        rng = np.random.default_rng(config.seed)
        specs = (ConeSpec(ConeKind.NONNEG_OPERATOR), ConeSpec(ConeKind.TWO_NONNEG))
        two_nonneg_slack = ConeSpec(ConeKind.TWO_NONNEG, tol=NESTING_SLACK * EIGEN_TOL)

        wpic2 = ConeSpec(ConeKind.WPIC2, tol=NESTING_SLACK * FRAME_TOL, budget=FRAME_BUDGET)
        wpic1 = ConeSpec(ConeKind.WPIC1, tol=NESTING_SLACK * FRAME_TOL, budget=FRAME_BUDGET)

        rows = []
        nesting = frame_nesting = sign_mismatches = sign_samples = 0
        for i in range(operators):
            n = dims[i % len(dims)]
            rm = random_curvature_operator(n, rng)
            shift = 0.0
            for spec in specs:
                closed = ell(rm, spec).value
                bisected = ell(rm, spec, method="bisection").value
                rows.append({"sample": i, "n": n, "cone": spec.kind.value, "closed_form": closed,
                             "bisection": bisected, "difference": abs(closed - bisected)})
                if spec.kind is ConeKind.NONNEG_OPERATOR:
                    shift = closed
            inside = rm.shifted(shift)
            if not cone_contains(inside, two_nonneg_slack).contains:
                nesting += 1
            if not cone_contains(inside, wpic2).contains or not cone_contains(inside, wpic1).contains:
                frame_nesting += 1
            if n == 3:
                sign_samples += 1
                pair = float(rm.eigenvalues[0] + rm.eigenvalues[1])
                ricci_min = float(np.linalg.eigvalsh(ricci_tensor(rm))[0])
                if min(abs(pair), abs(ricci_min)) >= SIGN_FLOOR and np.sign(pair) != np.sign(ricci_min):
                    sign_mismatches += 1

        frame = pd.DataFrame(rows, columns=["sample", "n", "cone", "closed_form", "bisection", "difference"])
        path = write_csv(out_dir / "cones.csv", frame, description="ell oracle comparisons")
        self._artifact(result, path, out_dir)

        worst = float(frame["difference"].max()) if len(frame) else 0.0
        result.check("closed form ell equals bisection ell", worst, ELL_AGREEMENT, worst <= ELL_AGREEMENT)
        result.check("NonnegOperator implies TwoNonneg", nesting, 0, nesting == 0)
        result.check("NonnegOperator implies WPIC2 implies WPIC1", frame_nesting, 0, frame_nesting == 0)
        result.check("n=3 two-nonneg matches Ricci sign", sign_mismatches, 0, sign_mismatches == 0)
        result.constant("ell_max_disagreement", worst, "curvature.cones", ELL_AGREEMENT)
        result.constant("comparisons", len(frame), "curvature.cones")
        result.constant("operators", operators, "curvature.curvature_operator")
        result.constant("n3_samples", sign_samples, "curvature.curvature_operator", SIGN_FLOOR)


class FlowsSuite(VerificationSuite):
    """Stationary flat torus, space-form fidelity, RK4 order and the doubling-time audit"""

    def get_suite_name(self) -> str:
        return "flows"

    def _run(self, config, out_dir, result):
        m = config.resolution.m
        u0 = np.zeros((m, m))
        dt = min(config.resolution.dt, FLOW_SAFETY * stability_bound(u0))
        steps = int(config.sweep.get("flow_steps", FLAT_STEPS))
        flat = integrate_conformal_surface_flow(u0, dt, steps)
        drift = [float(np.max(np.abs(flat.state_at(i)))) for i in range(len(flat))]
        result.check("flat torus is stationary", max(drift), STATIONARY_ATOL, max(drift) <= STATIONARY_ATOL)
        result.series.append(Series(name="flows_flat_torus", x=list(flat.times), curves={"max |u|": drift},
                                    ylabel="max |u|"))

        sphere = integrate_homogeneous_flow(round_sphere_state(2.0), 1e-3, 100)
        errors = []
        for i, t in enumerate(sphere.times):
            exact = 2.0 * exact_space_form_flow(3, 0.5, t).scale
            errors.append(float(np.max(np.abs(sphere.state_at(i) - exact)) / exact))
        result.check("homogeneous flow matches space form", max(errors), SPACE_FORM_RTOL,
                     max(errors) < SPACE_FORM_RTOL)
        result.constant("space_form_relative_error", max(errors), "flows.homogeneous", SPACE_FORM_RTOL)

        rk4 = richardson_errors(berger_state(0.1), RK4_HORIZON, RK4_COUNTS, reference_steps=RK4_REFERENCE_STEPS)
        slope = loglog_slope([RK4_HORIZON / c for c in RK4_COUNTS], rk4).slope
        result.check("RK4 convergence order", slope, RK4_ORDER, abs(slope - RK4_ORDER) <= RK4_ORDER_TOL)
        result.constant("rk4_order", slope, "flows.homogeneous", RK4_ORDER_TOL)

        for name, state, step, count, tau in DOUBLING_FIXTURES:
            k = homogeneous_curvature(state).norm()
            record = integrate_homogeneous_flow(state, step, count)
            report = verify_apriori_bounds(record, ConeSpec(ConeKind.TWO_NONNEG), k=k, tau=tau)
            report.save(out_dir / f"apriori_{name}.json")
            self._artifact(result, out_dir / f"apriori_{name}.json", out_dir)
            result.check(f"doubling time on {name}", report.doubling_window, None, report.doubling_ok)
            result.constant(f"{name}_decay_constant", report.decay_constant, "flows.apriori")
            result.constant(f"{name}_evolution_C", report.evolution_C, "flows.apriori")
            result.constant(f"{name}_c4", report.c4, "flows.apriori")
            series = report.ell_series.get(ConeKind.TWO_NONNEG.value, [])
            if name == "berger" and series:
                reference = (report.c4 or 0.0) * series[0]
                result.series.append(Series(name="flows_berger_ell", x=list(report.times),
                                            curves={"ell TwoNonneg": list(series)}, ylabel="ell",
                                            references={"C4 alpha0": [reference] * len(series)}))


def evolving_torus(m: int) -> MetricTrajectory:
    """The cos-cos conformal bump flowed over EVOLVING_HORIZON"""
    x, y = cell_centres(m)
    u0 = EVOLVING_AMPLITUDE * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
    step = FLOW_SAFETY * stability_bound(u0)
    steps = max(1, int(EVOLVING_HORIZON / step))
    record = integrate_conformal_surface_flow(u0, step, steps, record_every=max(1, steps // 10))
    return MetricTrajectory.from_record(record)


class KernelSuite(VerificationSuite):
    """Kernel mass on static and evolving tori, junction behaviour and the reproduction formula"""

    def get_suite_name(self) -> str:
        return "kernel"

    def _run(self, config, out_dir, result):
        m, dt = config.resolution.m, config.resolution.dt
        centre = (m // 2, m // 2)
        static = MetricTrajectory.static(np.zeros((m, m)), 0.0, KERNEL_HORIZON)
        evolving = evolving_torus(m)

        times = np.linspace(evolving.end / MASS_SAMPLES, evolving.end, MASS_SAMPLES)
        static_mass = [solve_conjugate_kernel(static, centre, 0.0, float(t), dt=dt).mass for t in times]
        evolving_mass = [solve_conjugate_kernel(evolving, centre, 0.0, float(t), dt=dt).mass for t in times]
        static_dev = max(abs(v - 1.0) for v in static_mass)
        evolving_dev = max(abs(v - 1.0) for v in evolving_mass)
        result.check("static torus kernel mass", static_dev, STATIC_MASS_TOL, static_dev < STATIC_MASS_TOL)
        result.check("evolving torus kernel mass", evolving_dev, EVOLVING_MASS_TOL, evolving_dev < EVOLVING_MASS_TOL)
        result.constant("evolving_mass_deviation", evolving_dev, "heat.conjugate_kernel", EVOLVING_MASS_TOL)
        result.series.append(Series(name="kernel_mass", x=[float(t) for t in times],
                                    curves={"static": static_mass, "evolving": evolving_mass}, ylabel="mass",
                                    references={"unit mass": [1.0] * MASS_SAMPLES}))

        fine = evolving_torus(2 * m)
        fine_dev = abs(solve_conjugate_kernel(fine, (m, m), 0.0, fine.end, dt=dt).mass - 1.0)
        end_dev = abs(evolving_mass[-1] - 1.0)
        allowed = max(end_dev / REFINEMENT_RATIO, MASS_ROUNDOFF)
        result.check("evolving mass drift under refinement", fine_dev, allowed, fine_dev <= allowed)

        stepper = KernelStepper(evolving, dt, min_steps=2)
        split = float(stepper.lattice[stepper.steps // 2])
        one_shot = solve_conjugate_kernel(evolving, centre, 0.0, evolving.end, stepper=stepper)
        two_stage = KernelSolver(identity_junction_flow(evolving, split), dt).forward_kernel(centre, 0.0, evolving.end)
        gap = float(np.max(np.abs(two_stage.values - one_shot.values)) / np.max(one_shot.values))
        result.check("identity junction matches one-shot kernel", gap, JUNCTION_TOL, gap < JUNCTION_TOL)

        shrunk = evolving.window(split, evolving.end).restricted(disk_mask(m, radius=SHRINK_RADIUS))
        masses = KernelSolver(ExpansionFlow([evolving.window(evolving.start, split), shrunk]), dt).stage_masses(
            centre, 0.0)
        before, after = masses["stage_end"][0], masses["after_junction"][0]
        result.check("kernel mass after domain shrink", after, before, after <= before + STATIC_MASS_TOL)

        sources = [((centre[0] - 2, centre[1] + 1), 0.0), ((centre[0] + 2, centre[1] - 1), 0.2 * KERNEL_HORIZON)]
        report = verify_kernel_properties(ExpansionFlow.single(static), targets=[(centre, KERNEL_HORIZON)],
                                          sources=sources, dt=dt, time_stride=10)
        report.save(out_dir / "kernel.json")
        self._artifact(result, out_dir / "kernel.json", out_dir)
        result.check("reproduction formula", report.reproduction_residual, REPRODUCTION_TOL,
                     report.reproduction_residual < REPRODUCTION_TOL)
        result.check("Gaussian constant fitted", report.gaussian_constant, None,
                     report.gaussian_constant is not None)
        result.constant("gaussian_constant", report.gaussian_constant, "heat.kernel_report")
        result.constant("gradient_constant", report.gradient_constant, "heat.kernel_report")


class CutoffSuite(VerificationSuite):
    """Inclusion chain and r-scaling of the cutoff on a static flat torus"""

    def get_suite_name(self) -> str:
        return "cutoff"

    def _run(self, config, out_dir, result):
        m = config.resolution.m
        rs = [float(r) for r in config.sweep.get("cutoff_rs", CUTOFF_RS)]
        radius = float(config.sweep.get("cutoff_radius", CUTOFF_RADIUS))
        traj = MetricTrajectory.static(np.zeros((m, m)), 0.0, KERNEL_HORIZON)
        study = cutoff_scaling_study(traj, (m // 2, m // 2), rs, radius)
        study.save(out_dir / "cutoff_study.json")
        self._artifact(result, out_dir / "cutoff_study.json", out_dir)

        chains = sum(1 for rep in study.reports if not rep.inclusion_ok)
        result.check("cutoff inclusion chain", chains, 0, chains == 0)
        for name, slope in study.slopes.items():
            within = study.within[name]
            if within is not None:
                result.check(f"{name} scaling exponent", slope, study.exponents[name], within)
            result.constant(f"{name}_slope", slope, "localization.cutoff")
        result.series.append(Series(name="cutoff_scaling", x=list(study.rs),
                                    curves={"sup |grad phi|": [rep.gradient_sup for rep in study.reports],
                                            "sup Lap phi": [rep.laplacian_sup for rep in study.reports]},
                                    xlabel="r", log_x=True, log_y=True))


class DistortionSuite(VerificationSuite):
    """Distance distortion on the conformal-torus benchmark and the limit-metric ladder"""

    def get_suite_name(self) -> str:
        return "distortion"

    def _run(self, config, out_dir, result):
        m = max(config.resolution.m, DISTORTION_MIN_M)
        if m != config.resolution.m:
            logger.info("distortion benchmark runs on m=%d instead of m=%d", m, config.resolution.m)
        x, y = cell_centres(m)
        u0 = DISTORTION_AMPLITUDE * np.cos(2 * np.pi * x) * np.cos(2 * np.pi * y)
        dt = FLOW_SAFETY * stability_bound(u0)
        steps = int(np.ceil(DISTORTION_HORIZON / dt))
        record = integrate_conformal_surface_flow(u0, dt, steps, record_every=max(1, steps // DISTORTION_RECORDS))
        traj = MetricTrajectory.from_record(record)
        samples = int(config.sweep.get("distortion_pairs", DISTORTION_PAIRS))
        beta = float(config.sweep.get("distortion_beta", shrinking_beta(2)))
        report = verify_distortion(traj, samples=samples, beta=beta, seed=config.seed)
        report.save(out_dir / "distortion.json")
        report.save_series(out_dir / "distortion_pairs.csv")
        self._artifact(result, out_dir / "distortion.json", out_dir)
        self._artifact(result, out_dir / "distortion_pairs.csv", out_dir)

        change = 0.0
        if len(report.pairs):
            change = float(np.max(np.abs(report.series[:, -1] - report.series[:, 0]) / report.series[:, 0]))
        shrinking = [v for v in report.violations if v["estimate"] == "shrinking"]
        result.check("distortion hypotheses", None, None, report.hypotheses_met)
        result.check("distances change along the flow", change, DISTANCE_CHANGE_FLOOR,
                     change >= DISTANCE_CHANGE_FLOOR)
        result.check("shrinking estimate with configured beta", len(shrinking), 0, not shrinking)
        result.check("Hoelder band holds pairs", report.band_pairs, 1, report.band_pairs > 0)
        result.check("expanding, shrinking and Hoelder estimates", len(report.violations), 0,
                     not report.violations)
        result.constant("beta_sqrt_c0", report.beta_sqrt_c0, "distortion.distortion_report")
        result.constant("audited_slope", report.audited_slope, "distortion.distortion_report")
        result.constant("gamma", report.gamma, "distortion.distortion_report")
        result.constant("exponent", report.exponent, "distortion.distortion_report")
        result.constant("flow_steps", steps, "flows.conformal_surface")

        try:
            limit = limit_metric(traj, LIMIT_T_MIN, report.pairs[:LIMIT_PAIRS], beta_sqrt_c=report.audited_slope,
                                 c=report.c0)
            last = limit.increments[-1] if limit.increments else 0.0
            result.check("limit ladder is Cauchy", last, LIMIT_TOL, limit.rungs_ok)
            result.check("limit sandwich", limit.gamma, None, limit.sandwich_ok)
            result.constant("limit_gamma", limit.gamma, "distortion.limit_metric", LIMIT_TOL)
        except NonConvergentLimitError as e:
            print(f"Error extrapolating the limit metric: {e}")
            result.check("limit ladder is Cauchy", None, LIMIT_TOL, False)
            result.constant("limit_gamma", None, "distortion.limit_metric", LIMIT_TOL)

        times = np.array(report.times)
        curves, references = {}, {}
        for p in range(min(PLOTTED_PAIRS, len(report.pairs))):
            d = report.series[p]
            curves[f"pair {p}"] = [float(v) for v in d]
            envelope = d[0] - report.beta_sqrt_c0 * (np.sqrt(times) - np.sqrt(times[0]))
            references[f"pair {p} envelope"] = [float(v) for v in envelope]
        result.series.append(Series(name="distortion_pairs", x=[float(t) for t in times], curves=curves,
                                    ylabel="d_t", references=references))


class ExpansionSuite(VerificationSuite):
    """The desk-scale expansion run with its estimate traces and weak-inequality windows"""

    def get_suite_name(self) -> str:
        return "expansion"

    @staticmethod
    def settings(config: ExperimentConfig) -> LabSettings:
        """Desk settings on the configured grid, or the resolved preset on its own grid"""
        overrides = {key: value for key, value in config.sweep.items() if key in EXPANSION_KNOBS}
        try:
            if config.sweep.get("expansion_preset", "desk") == "resolved":
                return LabSettings.resolved(report_only=not config.strict, **overrides)
            return LabSettings().with_overrides(m=config.resolution.m, report_only=not config.strict, **overrides)
        except (TypeError, ValueError) as e:
            raise ConfigurationError(f"invalid expansion settings: {e}")

    def _run(self, config, out_dir, result):
        settings = self.settings(config)
        run = run_desk_expansion(settings)
        run.display()
        run.save(out_dir / "run")
        self._artifact(result, out_dir / "run" / "run.json", out_dir)

        failures = len(run.audit.failures())
        result.check("APA audits", failures, 0, failures == 0)
        result.check("all scheduled stages ran", len(run.stages), len(run.schedule),
                     run.flow is not None and len(run.stages) == len(run.schedule))
        drop = run.schedule.radius_drop
        result.check("radius ledger", drop, RADIUS_BUDGET, drop <= RADIUS_BUDGET)
        fewest = min((s.steps for s in run.stages), default=0)
        result.check("steps per stage", fewest, settings.min_stage_steps, fewest >= settings.min_stage_steps)
        still = min((s.field_change for s in run.stages), default=0.0)
        result.check("every stage moves the metric", still, 0.0, still > 0.0)
        margins = run.flow.junction_margins if run.flow is not None else []
        result.check("junction inequality", min(margins, default=0.0), 0.0, all(v >= 0.0 for v in margins))
        for name, value in run.constants().items():
            result.constant(name, value, "expansion.pipeline")

        if run.flow is None:
            return
        evolution_c = run_evolution_constant(run)
        result.constant("evolution_C", evolution_c, "expansion.ell_estimate")

        traces = probe_ell_estimates(run) if len(run.flow.stages) >= 2 else []
        if traces:
            save_traces(out_dir / "ell_traces.csv", traces)
            self._artifact(result, out_dir / "ell_traces.csv", out_dir)
        probes = len(settings.probe_offsets)
        evaluated = [t for t in traces if t.error is None]
        result.check("estimate probes evaluated", len(evaluated), probes, len(evaluated) == probes)
        excess = max((t.measured_ell - t.bound for t in evaluated), default=0.0)
        result.check("ell below the integral estimate", excess, 0.0,
                     len(traces) == probes and all(t.passed for t in traces))
        shares = [t.remainder_share for t in evaluated if t.remainder_share is not None]
        result.constant("estimate_remainder_share", max(shares, default=None), "expansion.ell_estimate")

        centre = tuple((c + 0.5) / settings.m for c in settings.x0)
        slacks, weak_ok = [], True
        for stage in run.flow.stages:
            report = weak_inequality_check(stage, bump_test_field(centre, WEAK_TEST_RADIUS), evolution_c=evolution_c)
            slacks.append(report.slack)
            if not report.passed:
                weak_ok = False
                print(f"weak inequality fails on {report.window}: {report.violations}")
        result.check("weak ell inequality", min(slacks, default=0.0), 0.0, weak_ok)

        ends = [s.end for s in run.stages]
        result.series.append(Series(name="expansion_ell", x=ends,
                                    curves={"sup ell": [s.ell_max for s in run.stages]},
                                    xlabel="t", ylabel="ell", log_x=True,
                                    references={"C4 alpha0": [settings.c4 * settings.alpha0] * len(ends)}))


class AllSuite(VerificationSuite):
    """Every registered suite in its own subdirectory, merged once at the end"""

    def get_suite_name(self) -> str:
        return "all"

    def _run(self, config, out_dir, result):
        parts = []
        for name, suite in SUITE_REGISTRY.items():
            if name == self.get_suite_name():
                continue
            part = suite.run(config, out_dir / name)
            part.artifacts = [f"{name}/{a}" for a in part.artifacts]
            parts.append(part)
        merged = SuiteResult.merge(self.get_suite_name(), parts)
        result.checks.extend(merged.checks)
        result.constants.update(merged.constants)
        result.series.extend(merged.series)
        result.artifacts.extend(merged.artifacts)


SUITE_REGISTRY: Dict[str, VerificationSuite] = {
    "cones": ConesSuite(),
    "flows": FlowsSuite(),
    "kernel": KernelSuite(),
    "cutoff": CutoffSuite(),
    "distortion": DistortionSuite(),
    "expansion": ExpansionSuite(),
    "all": AllSuite(),
}


def get_suite(name: str) -> VerificationSuite:
    try:
        return SUITE_REGISTRY[name]
    except KeyError:
        raise ConfigurationError(f"unknown suite {name!r}")


def suite_names() -> Tuple[str, ...]:
    return tuple(SUITE_REGISTRY)
