"""Localized integral estimate for ell along a flow in expansion.

With L = exp(-C s) ell, C the fitted evolution constant, a cutoff phi around
x and the generalized conjugate kernel G(x, t; y, s), the reproduction
argument gives

    ell(x, t) <= exp(C t) (B + I + J)
    B = sum_y G phi L dV                          at s = t_1
    I = int sum_y G (|d_s phi| + |Lap phi|) L dV  ds over [t_1, t]
    J = 2 int sum_y |grad G| |grad phi| L dV      ds over [t_1, t]

Integrals in s are left sums over the kernel lattice, with forward
differences for d_s phi.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from expansion.pipeline import ExpansionRun, surface_ell
from expansion.schedule import junction_series_bound
from flows.apriori import ELL_ACTIVE
from flows.conformal_surface import gauss_curvature
from geometry.discrete_manifold import Cell, DiscreteManifold
from geometry.distances import metric_ball
from heat.expansion_flow import ExpansionFlow, KernelSolver
from heat.metric_trajectory import MetricTrajectory
from localization.cutoff import build_cutoff
from shared.errors import HypothesisViolationError, RicciLabError
from shared.serialization import save_json, write_csv

logger = logging.getLogger(__name__)

ESTIMATE_RTOL = 1e-6
ESTIMATE_ATOL = 1e-10
CUTOFF_RATIO = 3.0


class FlowView:
    """The window [start, end] of an expansion flow seen as one trajectory.

    Times inside the window read the stage that starts there, the end time
    reads the stage that ends there.
    """

    def __init__(self, flow: ExpansionFlow, start: float, end: float):
        if not start < end:
            raise ValueError(f"need start < end, got {start}, {end}")
        self.flow = flow
        self.start = float(start)
        self.end = float(end)
        times = {self.start, self.end}
        for stage in flow.stages:
            times.update(float(s) for s in stage.times if self.start < s < self.end)
        self.times = np.array(sorted(times))

    @property
    def is_static(self) -> bool:
        return False

    def manifold_at(self, t: float) -> DiscreteManifold:
        side = "target" if t >= self.end else "source"
        return self.flow.manifold_at(t, side)


def fit_evolution_constant(trajectory: MetricTrajectory, region: Optional[np.ndarray] = None) -> float:
    """Smallest C >= 0 with d_t ell <= Lap ell + scal ell + C ell^2 on the stored slices.

    Rates are forward differences; only cells with ell above ELL_ACTIVE count.
    """
    mask = trajectory.mask if region is None else np.asarray(region, dtype=bool) & trajectory.mask
    fitted = 0.0
    for k in range(trajectory.times.size - 1):
        span = trajectory.times[k + 1] - trajectory.times[k]
        u = trajectory.fields[k]
        man = DiscreteManifold(u, trajectory.mask)
        gauss = gauss_curvature(u, man.h, trajectory.mask)
        ell = surface_ell(u, trajectory.mask)
        rate = (surface_ell(trajectory.fields[k + 1], trajectory.mask) - ell) / span
        excess = rate - man.laplacian_apply(ell) - 2.0 * gauss * ell
        active = mask & (ell > ELL_ACTIVE)
        if active.any():
            fitted = max(fitted, float(np.max(excess[active] / ell[active] ** 2)))
    return fitted


def run_evolution_constant(run: ExpansionRun) -> float:
    """Evolution constant of the linearized ell inequality over every stage core.

    The quadratic constant is turned into a linear one with the measured sup
    of ell, so that L = exp(-C t) ell is a subsolution.
    """
    if run.flow is None:
        return 0.0
    quadratic = max(fit_evolution_constant(stage, core) for stage, core in zip(run.flow.stages, run.cores))
    ell_sup = max((s.ell_max for s in run.stages), default=0.0)
    return quadratic * ell_sup


@dataclass
class EllEstimateTrace:
    point: Cell
    t: float
    stage: int
    r: float
    radius: float
    evolution_c: float
    boundary_term: float
    i_term: float
    j_term: float
    measured_ell: float
    series_bound: Optional[float] = None
    gradient_weights: List[float] = field(default_factory=list)
    alpha0: Optional[float] = None
    error: Optional[str] = None

    @classmethod
    def failed(cls, point: Cell, t: Optional[float], error: str) -> "EllEstimateTrace":
        """A probe whose estimate could not be evaluated"""
        nan = float("nan")
        return cls(point=tuple(int(c) for c in point), t=nan if t is None else float(t), stage=-1, r=nan,
                   radius=nan, evolution_c=nan, boundary_term=nan, i_term=nan, j_term=nan, measured_ell=nan,
                   error=error)

    @property
    def bound(self) -> float:
        return float(np.exp(self.evolution_c * self.t)) * (self.boundary_term + self.i_term + self.j_term)

    @property
    def passed(self) -> bool:
        if self.error is not None:
            return False
        return self.measured_ell <= self.bound * (1.0 + ESTIMATE_RTOL) + ESTIMATE_ATOL

    @property
    def dominance(self) -> Optional[float]:
        """boundary / (I + J); None when both integrals vanish"""
        rest = self.i_term + self.j_term
        if self.error is not None or not rest > 0.0:
            return None
        return self.boundary_term / rest

    @property
    def remainder_share(self) -> Optional[float]:
        """(I + J) / (B + I + J)"""
        total = self.boundary_term + self.i_term + self.j_term
        if self.error is not None or not total > 0.0:
            return None
        return (self.i_term + self.j_term) / total

    @property
    def boundary_ratio(self) -> Optional[float]:
        if not self.alpha0:
            return None
        return self.boundary_term / (2.0 * self.alpha0)

    @property
    def j_ratio(self) -> Optional[float]:
        if not self.series_bound:
            return None
        return self.j_term / self.series_bound

    def to_dict(self) -> Dict[str, Any]:
        return {
            "point": list(self.point),
            "t": self.t,
            "stage": self.stage,
            "r": self.r,
            "R": self.radius,
            "evolution_C": self.evolution_c,
            "boundary_term": self.boundary_term,
            "I_term": self.i_term,
            "J_term": self.j_term,
            "measured_ell": self.measured_ell,
            "bound": self.bound,
            "passed": self.passed,
            "dominance": self.dominance,
            "boundary_ratio": self.boundary_ratio,
            "series_bound": self.series_bound,
            "J_ratio": self.j_ratio,
            "remainder_share": self.remainder_share,
            "gradient_weights": self.gradient_weights,
            "error": self.error,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def display(self):
        if self.error is not None:
            print(f"ell{self.point}: not evaluated ({self.error})")
            return
        print(f"ell{self.point} at t={self.t:.6g}: measured {self.measured_ell:.6g} <= bound {self.bound:.6g} "
              f"({'ok' if self.passed else 'FAILED'})")
        print(f"  B = {self.boundary_term:.6g}, I = {self.i_term:.6g}, J = {self.j_term:.6g}, "
              f"C = {self.evolution_c:.6g}")


def run_kernel_solver(run: ExpansionRun) -> KernelSolver:
    return KernelSolver(run.flow, run.settings.kernel_dt, min_steps=run.settings.min_stage_steps)


def cutoff_radii(run: ExpansionRun, t: float) -> tuple:
    """r = max(s (nu t)^{1/4}, floor) and R = 3 r, s the ledger scale"""
    floor = run.settings.min_cutoff_cells * run.settings.h
    r = max(run.settings.ledger_scale * float((run.schedule.nu * t) ** 0.25), floor)
    return r, CUTOFF_RATIO * r


def ell_integral_estimate(run: ExpansionRun, x: Cell, t: Optional[float] = None,
                          solver: Optional[KernelSolver] = None,
                          evolution_c: Optional[float] = None) -> EllEstimateTrace:
    """Evaluate B, I and J for the point (x, t) of a finished expansion run.

    Raises HypothesisViolationError when the cutoff ball B(x, R + r) leaves
    the audited core of the last stage or the cutoff hypotheses fail.
    """
    flow = run.flow
    if flow is None or len(flow.stages) < 2:
        raise HypothesisViolationError("the estimate needs an expansion flow with at least two stages")
    x = tuple(int(c) for c in x)
    t1 = flow.stage_start(1)
    t = flow.end if t is None else float(t)
    if not t > t1:
        raise ValueError(f"need t > t_1 = {t1}, got {t}")
    stage = flow.stage_of_target(t)
    r, radius = cutoff_radii(run, t)

    man1 = flow.manifold_at(t1, "source")
    reach = metric_ball(man1, x, radius + r)
    if np.any(reach & ~run.cores[-1]):
        raise HypothesisViolationError(f"B({x}, {radius + r:.4g}) leaves the audited core of the last stage")

    solver = run_kernel_solver(run) if solver is None else solver
    kernel = solver.backward_kernel(x, t, stop=t1)
    records = sorted(kernel.source_records(), key=lambda rec: rec.time)
    edges = [rec.time for rec in records] + [t]

    view = FlowView(flow, t1, t)
    k = c0 = 0.0
    for s in edges:
        man = view.manifold_at(s)
        gauss = gauss_curvature(man.u, man.h, man.mask)
        k = max(k, float(-np.min(gauss[reach])))
        if s > 0.0:
            c0 = max(c0, s * float(np.max(np.abs(gauss[reach]))))
    cutoff = build_cutoff(view, x, radius, r, times=edges, k=k, c0=c0, beta=run.settings.beta)
    c = run_evolution_constant(run) if evolution_c is None else float(evolution_c)

    boundary = i_term = j_term = 0.0
    weights: List[float] = []
    for n, record in enumerate(records):
        man = kernel.manifold(record)
        s, span = record.time, edges[n + 1] - edges[n]
        big_l = np.exp(-c * s) * surface_ell(man.u, man.mask)
        q = man.to_grid(record.weights)
        phi = cutoff.phi[n]
        if n == 0:
            boundary = float(np.sum(q * phi * big_l))
        rate = np.abs(cutoff.phi[n + 1] - phi) / span
        i_term += span * float(np.sum(q * (rate + np.abs(man.laplacian_apply(phi))) * big_l))
        grad_g = man.gradient_norm(kernel.field(record))
        j_term += 2.0 * span * float(np.sum(grad_g * man.gradient_norm(phi) * big_l * man.volumes))
        if cutoff.annulus.any():
            weights.append(float(np.max(grad_g[cutoff.annulus])) * float(np.sqrt(t - s)))

    end_man = flow.manifold_at(t, "target")
    measured = float(surface_ell(end_man.u, end_man.mask)[x])
    trace = EllEstimateTrace(point=x, t=t, stage=stage, r=r, radius=radius, evolution_c=c,
                             boundary_term=boundary, i_term=i_term, j_term=j_term, measured_ell=measured,
                             series_bound=junction_series_bound(t, run.schedule.nu),
                             gradient_weights=weights, alpha0=run.settings.alpha0)
    logger.debug("ell estimate at %s: %s", x, trace.to_dict())
    return trace


def probe_ell_estimates(run: ExpansionRun, probes: Optional[Sequence[Cell]] = None,
                        t: Optional[float] = None) -> List[EllEstimateTrace]:
    """One trace per probe cell; a probe that cannot be evaluated yields a failed trace"""
    if probes is None:
        m = run.settings.m
        probes = [((run.settings.x0[0] + di) % m, (run.settings.x0[1] + dj) % m)
                  for di, dj in run.settings.probe_offsets]
    solver = run_kernel_solver(run) if run.flow is not None else None
    traces = []
    for x in probes:
        try:
            traces.append(ell_integral_estimate(run, x, t, solver=solver))
        except (RicciLabError, ValueError) as e:
            print(f"Error estimating ell at {tuple(x)}: {e}")
            traces.append(EllEstimateTrace.failed(x, t, str(e)))
    return traces


def traces_frame(traces: List[EllEstimateTrace]) -> pd.DataFrame:
    rows = [{key: value for key, value in trace.to_dict().items() if key != "gradient_weights"}
            for trace in traces]
    return pd.DataFrame(rows)


def save_traces(path: Union[str, Path], traces: List[EllEstimateTrace]) -> Path:
    return write_csv(path, traces_frame(traces), description="ell estimate traces")
