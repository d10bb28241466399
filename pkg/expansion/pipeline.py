"""Runs a flow in expansion stage by stage and audits the a-priori assumptions.

Stage 0 flows the complete torus over [0, t_1]. Every later stage restricts
the previous metric at its start time to the scheduled ball, completes it
with a cusp collar and keeps flowing the same conformal equation on the
smaller domain. After each stage:

    APA1  the stage was integrated and stayed finite
    APA2  t |K| <= C3 on the stage core
    APA3  ell <= C4 alpha0 on the stage core

plus the doubling-time guard and the junction inequality g_next >= g_prev.
The core is the part of the completed region that the collar cannot reach
during the stage.
"""
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from scipy.optimize import bisect

from curvature.cones import ConeKind, ConeSpec, ell_field
from expansion.conformal_completion import audit_completion, completion_core, conformal_completion
from expansion.schedule import ExpansionSchedule, plan_schedule
from flows.conformal_surface import gauss_curvature, integrate_conformal_surface_flow, stability_bound
from geometry.discrete_manifold import Cell, DiscreteManifold, cell_centres
from geometry.distances import metric_ball
from geometry.gaussian_integrals import gaussian_tail_check, tail_threshold, volume_ratio_floor
from heat.expansion_flow import ExpansionFlow
from heat.metric_trajectory import MetricTrajectory
from localization.cutoff import dilate
from shared.audit import AuditLog, AuditResult
from shared.errors import (AuditFailureError, BracketFailureError, ConfigurationError, RicciLabError,
                           StepRejectedError)
from shared.serialization import save_grid_field, save_json, write_csv
from shared.settings import LabSettings

logger = logging.getLogger(__name__)

AUDIT_RTOL = 1e-9
CALIBRATION_RECORDS = 20
MAX_BRACKET_DOUBLINGS = 60
REACH_SIGMAS = 5.0


def surface_ell(u: np.ndarray, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """ell per cell of a conformal surface metric; 0 outside the mask"""
    values = ell_field(gauss_curvature(u, 1.0 / u.shape[0], mask))
    return values if mask is None else np.where(mask, values, 0.0)


def erode(region: np.ndarray, layers: int) -> np.ndarray:
    core = np.asarray(region, dtype=bool)
    for _ in range(layers):
        core = core & ~dilate(~core)
    return core


def hyperbolic_bump(m: int, x0: Cell, width: float, alpha0: float) -> np.ndarray:
    """u = a exp(-|x - x0|^2 / (2 width^2)) with a chosen so that sup ell = alpha0.

    The bump is positively curved at its top and negatively curved on the
    ring around it; the amplitude is found by bisection.
    """
    if alpha0 < 0.0 or width <= 0.0:
        raise ValueError(f"need alpha0 >= 0 and width > 0, got {alpha0}, {width}")
    x, y = cell_centres(m)
    cx, cy = (np.asarray(x0, dtype=float) + 0.5) / m
    dx = np.abs(x - cx)
    dy = np.abs(y - cy)
    dist_sq = np.minimum(dx, 1.0 - dx) ** 2 + np.minimum(dy, 1.0 - dy) ** 2
    shape = np.exp(-dist_sq / (2.0 * width ** 2))
    if alpha0 == 0.0:
        return np.zeros((m, m))

    def excess(amplitude: float) -> float:
        return float(np.max(surface_ell(amplitude * shape))) - alpha0

    high = 1.0
    for _ in range(MAX_BRACKET_DOUBLINGS):
        if excess(high) > 0.0:
            break
        high *= 2.0
    else:
        raise BracketFailureError(f"no bump amplitude reaches sup ell = {alpha0}")
    amplitude = bisect(excess, 0.0, high, xtol=1e-15, rtol=1e-13)
    return amplitude * shape


def _integrate_stage(u: np.ndarray, mask: Optional[np.ndarray], start: float, end: float,
                     safety: float, min_steps: int = 1) -> Tuple[MetricTrajectory, int]:
    bound = stability_bound(u, mask=mask)
    steps = max(min_steps, math.ceil((end - start) / (safety * bound)))
    dt = (end - start) / steps
    record = integrate_conformal_surface_flow(u, dt, steps, mask=mask)
    times = start + dt * np.arange(steps + 1)
    times[0], times[-1] = start, end
    return MetricTrajectory(times, np.stack(record.states), mask, start, end), steps


def boundary_reach(u: np.ndarray, mask: Optional[np.ndarray], span: float, steps: int) -> int:
    """Cells a boundary change can move the field by the end of a stage.

    The explicit stencil moves one cell per step; past REACH_SIGMAS diffusion
    lengths sqrt(2 span max e^{-u}) its influence is negligible.
    """
    values = u if mask is None else u[mask]
    sigma = math.sqrt(2.0 * span * float(np.exp(-np.min(values))))
    return max(1, min(steps, math.ceil(REACH_SIGMAS * sigma * u.shape[0])))


def calibrate_c1(initial: np.ndarray, tau: float, settings: Optional[LabSettings] = None) -> float:
    """C1 from a calibration run over [0, tau/2]: max t |K|, floored at 4 tau so that tau <= C1/4"""
    settings = LabSettings(m=initial.shape[0]) if settings is None else settings
    bound = stability_bound(initial)
    steps = max(1, math.ceil(0.5 * tau / (settings.flow_safety * bound)))
    record = integrate_conformal_surface_flow(initial, 0.5 * tau / steps, steps,
                                              record_every=max(1, steps // CALIBRATION_RECORDS))
    decay = MetricTrajectory.from_record(record).curvature_decay()
    c1 = max(decay, 4.0 * tau)
    logger.debug("calibrated C1=%g (decay %g)", c1, decay)
    return c1


@dataclass
class StageSummary:
    index: int
    start: float
    end: float
    radius: float
    rho: Optional[float]
    steps: int
    cells: int
    core_cells: int
    ell_max: float
    decay: float
    curvature_max: float
    gamma_conf: Optional[float] = None
    # max |u(end) - u(start)| over the stage domain
    field_change: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)


@dataclass
class ExpansionRun:
    schedule: ExpansionSchedule
    flow: Optional[ExpansionFlow]
    stages: List[StageSummary]
    audit: AuditLog
    cone: str
    settings: LabSettings
    initial_ell: float
    v0_measured: float
    tail: Optional[Dict[str, Any]] = None
    cores: List[np.ndarray] = field(default_factory=list, repr=False)
    execution_time: Optional[float] = None

    @property
    def passed(self) -> bool:
        return self.audit.passed and self.flow is not None and len(self.stages) == len(self.schedule)

    @property
    def c4_measured(self) -> Optional[float]:
        if self.settings.alpha0 <= 0.0 or not self.stages:
            return None
        return max(s.ell_max for s in self.stages) / self.settings.alpha0

    @property
    def gamma_conf_measured(self) -> Optional[float]:
        values = [s.gamma_conf for s in self.stages if s.gamma_conf is not None]
        return max(values) if values else None

    def constants(self) -> Dict[str, Any]:
        constants = dict(self.schedule.constants)
        constants.update({"nu": self.schedule.nu, "C4": self.settings.c4, "C4_measured": self.c4_measured,
                          "alpha0": self.settings.alpha0, "v0": self.settings.v0,
                          "v0_measured": self.v0_measured, "gamma_conf_measured": self.gamma_conf_measured,
                          "radius_drop": self.schedule.radius_drop})
        return constants

    def to_frame(self) -> pd.DataFrame:
        columns = ["index", "start", "end", "radius", "rho", "steps", "cells", "core_cells", "ell_max",
                   "decay", "curvature_max", "gamma_conf", "field_change"]
        return pd.DataFrame([s.to_dict() for s in self.stages], columns=columns)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "cone": self.cone,
            "passed": self.passed,
            "schedule": self.schedule.to_dict(),
            "constants": self.constants(),
            "stages": [s.to_dict() for s in self.stages],
            "audits": self.audit.to_records(),
            "junction_margins": self.flow.junction_margins if self.flow is not None else [],
            "tail": self.tail,
            "settings": self.settings.to_dict(),
            "execution_time": self.execution_time,
        }

    def save(self, directory: Union[str, Path]) -> Path:
        """run.json, stages.csv and one end-of-stage metric snapshot per stage"""
        directory = Path(directory)
        write_csv(directory / "stages.csv", self.to_frame(), description="expansion stages")
        if self.flow is not None:
            for j, stage in enumerate(self.flow.stages):
                man = stage.manifold_at(stage.end)
                save_grid_field(directory / f"stage_{j:02d}.csv", man.u, man.mask, man.h, {"t": stage.end})
        return save_json(directory / "run.json", self.to_dict())

    def display(self):
        print(self.to_frame().to_markdown(index=False, floatfmt=".6g"))
        failures = self.audit.failures()
        print(f"audits: {len(self.audit.results)}, failures: {len(failures)}")
        for failure in failures:
            print(f"  {failure.audit_name}: value={failure.value} threshold={failure.threshold} "
                  f"at {failure.location}")


def _argmax_cell(values: np.ndarray, region: np.ndarray) -> Optional[Cell]:
    if not region.any():
        return None
    masked = np.where(region, values, -np.inf)
    return tuple(int(i) for i in np.unravel_index(int(np.argmax(masked)), masked.shape))


def _record(audit: AuditLog, result: AuditResult, stage: int, strict: bool) -> AuditResult:
    audit.add(result)
    if not result.passed:
        print(f"  audit {result.audit_name} failed: {result.value} > {result.threshold}")
        if strict:
            cell = (result.location or {}).get("cell")
            raise AuditFailureError(f"{result.audit_name} failed at stage {stage}: {result.detail or ''}",
                                    audit=result.audit_name, stage=stage, cell=cell)
    return result


def _stage_audits(trajectory: MetricTrajectory, core: np.ndarray, index: int, c3: float, bound_ell: float,
                  audit: AuditLog, strict: bool) -> Dict[str, float]:
    """APA 2-3 on the core and the doubling guard on the whole stage domain"""
    mask = trajectory.mask
    decay = ell_max = curvature_max = 0.0
    decay_cell = ell_cell = None
    k0 = float(np.max(np.abs(gauss_curvature(trajectory.fields[0], mask=mask)[mask])))
    doubling_max = 0.0
    for t, u in zip(trajectory.times, trajectory.fields):
        gauss = gauss_curvature(u, mask=mask)
        doubling_max = max(doubling_max, float(np.max(np.abs(gauss[mask]))))
        if not core.any():
            continue
        magnitude = np.abs(gauss)
        ell = np.where(core, ell_field(gauss), 0.0)
        curvature_max = max(curvature_max, float(np.max(magnitude[core])))
        if t > 0.0 and t * float(np.max(magnitude[core])) >= decay:
            decay = t * float(np.max(magnitude[core]))
            decay_cell = _argmax_cell(magnitude, core)
        if float(np.max(ell)) >= ell_max:
            ell_max = float(np.max(ell))
            ell_cell = _argmax_cell(ell, core)

    _record(audit, AuditResult("APA2", decay <= c3 * (1.0 + AUDIT_RTOL), value=decay, threshold=c3,
                               detail="t |K| on the stage core", location={"stage": index, "cell": decay_cell}),
            index, strict)
    _record(audit, AuditResult("APA3", ell_max <= bound_ell * (1.0 + AUDIT_RTOL) + 1e-12, value=ell_max,
                               threshold=bound_ell, detail="ell on the stage core",
                               location={"stage": index, "cell": ell_cell}), index, strict)
    length = trajectory.end - trajectory.start
    window = np.inf if k0 == 0.0 else 1.0 / (16.0 * k0)
    doubled = doubling_max <= 2.0 * k0 * (1.0 + AUDIT_RTOL) + 1e-12
    _record(audit, AuditResult("doubling", bool(length <= window and doubled), value=doubling_max,
                               threshold=2.0 * k0, detail=f"stage length {length:.3e}, window {window:.3e}",
                               location={"stage": index}), index, strict)
    return {"decay": decay, "ell_max": ell_max, "curvature_max": curvature_max}


def run_expansion(initial: np.ndarray, schedule: ExpansionSchedule, cone: Optional[ConeSpec] = None,
                  settings: Optional[LabSettings] = None) -> ExpansionRun:
    """Flow, restrict, complete and audit every scheduled stage.

    In report-only mode (the default) failed audits are recorded and the run
    goes on; otherwise the first failure raises AuditFailureError. A stage
    that cannot be integrated ends the run.
    """
    started = time.time()
    initial = np.asarray(initial, dtype=float)
    settings = LabSettings(m=initial.shape[0]) if settings is None else settings
    cone = ConeSpec(ConeKind.TWO_NONNEG) if cone is None else cone
    strict = not settings.report_only
    x0, h = settings.x0, 1.0 / initial.shape[0]
    constants = schedule.constants
    c1, c2, c3 = constants["C1"], constants["C2"], constants["C3"]
    audit = AuditLog()

    threshold = tail_threshold(2, c1, c2)
    tail_distance = threshold if settings.tail_distance is None else settings.tail_distance
    if tail_distance < threshold:
        raise ConfigurationError(f"tail_distance={tail_distance:g} is below the threshold {threshold:g}")

    man0 = DiscreteManifold(initial)
    working = metric_ball(man0, x0, schedule.r_seq[0])
    ell0 = surface_ell(initial)
    initial_ell = float(np.max(ell0[working]))
    _record(audit, AuditResult("initial ell", initial_ell <= settings.alpha0 * (1.0 + AUDIT_RTOL) + 1e-15,
                               value=initial_ell, threshold=settings.alpha0,
                               location={"stage": 0, "cell": _argmax_cell(ell0, working)}), 0, strict)
    v0_measured = volume_ratio_floor(man0, x0, settings.volume_radius)
    _record(audit, AuditResult("initial volume", v0_measured >= settings.v0, value=v0_measured,
                               threshold=settings.v0, location={"stage": 0}), 0, strict)

    print(f"Starting expansion run: {len(schedule)} stages, nu = {schedule.nu:.6g}")
    trajectories: List[MetricTrajectory] = []
    summaries: List[StageSummary] = []
    cores: List[np.ndarray] = []
    # cells whose conformal field no collar has reached yet
    clean = np.ones(initial.shape, dtype=bool)
    for j, (start, end) in enumerate(schedule.stage_bounds()):
        print(f"=== Stage {j} ===")
        radius = schedule.r_seq[j]
        rho: Optional[float] = None
        gamma: Optional[float] = None
        try:
            if j == 0:
                u, mask = initial, None
            else:
                previous = trajectories[-1].manifold_at(start)
                ball = metric_ball(previous, x0, radius)
                rho = max(schedule.rho_seq[j], settings.min_collar_cells * h)
                completed = conformal_completion(previous, ball, rho)
                check = audit_completion(previous, completed, rho)
                gamma = check.gamma_conf
                _record(audit, AuditResult("completion", check.passed, value=gamma,
                                           detail="g~ = g on U_2rho and g~ >= g",
                                           location={"stage": j}), j, strict)
                u, mask = completed.u, completed.mask
                clean &= completion_core(previous, mask, rho)
            trajectory, steps = _integrate_stage(u, mask, start, end, settings.flow_safety,
                                                 settings.min_stage_steps)
        except AuditFailureError:
            raise
        except (RicciLabError, ValueError) as e:
            print(f"Error integrating stage {j}: {e}")
            _record(audit, AuditResult("APA1", False, detail=str(e), location={"stage": j}), j, strict)
            break
        if j == 0:
            core = working
        else:
            # curvature reads one cell further than the field
            clean = erode(clean, boundary_reach(u, mask, end - start, steps))
            core = erode(clean, 1)
        finite = bool(np.all(np.isfinite(trajectory.fields)))
        _record(audit, AuditResult("APA1", finite, value=float(steps), detail="stage integrated",
                                   location={"stage": j}), j, strict)
        measured = _stage_audits(trajectory, core, j, c3, settings.c4 * settings.alpha0, audit, strict)
        field_change = float(np.max(np.abs(trajectory.fields[-1] - trajectory.fields[0])[trajectory.mask]))
        trajectories.append(trajectory)
        cores.append(core)
        summaries.append(StageSummary(index=j, start=start, end=end, radius=radius, rho=rho, steps=steps,
                                      cells=int(trajectory.mask.sum()), core_cells=int(core.sum()),
                                      ell_max=measured["ell_max"], decay=measured["decay"],
                                      curvature_max=measured["curvature_max"], gamma_conf=gamma,
                                      field_change=field_change))
        print(f"  [{start:.3e}, {end:.3e}] radius {radius:.4f}, {steps} steps, {int(trajectory.mask.sum())} cells, "
              f"max |du| {field_change:.3g}, sup ell on core {measured['ell_max']:.6g}")

    flow: Optional[ExpansionFlow] = None
    try:
        flow = ExpansionFlow(trajectories, nu=schedule.nu if len(trajectories) > 1 else None)
    except (ValueError, RicciLabError) as e:
        print(f"Error assembling the expansion flow: {e}")
    if flow is not None:
        for k, (margin, ok) in enumerate(zip(flow.junction_margins, flow.junction_flags), start=1):
            _record(audit, AuditResult("junction", ok, value=margin, threshold=0.0,
                                       detail="g_next >= g_prev", location={"stage": k}), k, strict)
    _record(audit, AuditResult("radius ledger", schedule.ledger_ok, value=schedule.radius_drop, threshold=1.0,
                               location={"stage": len(schedule) - 1}), len(schedule) - 1, strict)

    tail = None
    snapshots = [(stage.end, stage.manifold_at(stage.end)) for stage in trajectories if stage.end > 0.0]
    if snapshots:
        tail = gaussian_tail_check(snapshots, x0, tail_distance, c1, c2, with_scalar=False).to_dict()

    run = ExpansionRun(schedule=schedule, flow=flow, stages=summaries, audit=audit, cone=cone.kind.value,
                       settings=settings, initial_ell=initial_ell, v0_measured=v0_measured, tail=tail,
                       cores=cores, execution_time=time.time() - started)
    print(f"Expansion run complete: {len(summaries)}/{len(schedule)} stages, passed: {run.passed}")
    return run


def run_desk_expansion(settings: Optional[LabSettings] = None, cone: Optional[ConeSpec] = None) -> ExpansionRun:
    """Hyperbolic bump, calibrated C1, planned schedule and the full run"""
    settings = LabSettings() if settings is None else settings
    initial = hyperbolic_bump(settings.m, settings.x0, settings.bump_width, settings.alpha0)
    c1 = calibrate_c1(initial, settings.tau, settings)
    schedule = plan_schedule(c1, settings.tau, settings.t1, settings.r0, settings.gamma_conf, settings.beta,
                             settings.max_stages, settings.ledger_scale)
    schedule.display()
    return run_expansion(initial, schedule, cone, settings)
