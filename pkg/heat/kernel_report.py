import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from geometry.discrete_manifold import Cell
from geometry.distances import distance_field
from heat.conjugate_kernel import DEFAULT_DT
from heat.expansion_flow import BackwardKernel, ExpansionFlow, KernelSolver
from shared.errors import RicciLabError
from shared.fitting import fit_gaussian_constant
from shared.serialization import save_json

logger = logging.getLogger(__name__)

UNDERSHOOT = -1e-10
# Gaussian fits use d^2 / 4 (t - s) up to this value
GAUSSIAN_WINDOW = 9.0


@dataclass
class KernelReport:
    mass_deviation: float
    max_mass: float
    min_value: float
    reproduction_residual: float
    gaussian_constant: Optional[float]
    gradient_constant: Optional[float]
    curvature_decay: float
    samples: int
    notes: List[str] = field(default_factory=list)
    execution_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mass_deviation": self.mass_deviation,
            "max_mass": self.max_mass,
            "min_value": self.min_value,
            "reproduction_residual": self.reproduction_residual,
            "gaussian_constant": self.gaussian_constant,
            "gradient_constant": self.gradient_constant,
            "curvature_decay": self.curvature_decay,
            "samples": self.samples,
            "notes": self.notes,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def display(self):
        print(f"mass deviation: {self.mass_deviation:.3e} (max mass {self.max_mass:.12f})")
        print(f"reproduction residual: {self.reproduction_residual:.3e}")
        print(f"Gaussian constant: {self.gaussian_constant}")
        print(f"gradient constant: {self.gradient_constant}")


@dataclass
class GaussianSamples:
    values: List[np.ndarray] = field(default_factory=list)
    prefactor_time: List[np.ndarray] = field(default_factory=list)
    dist_sq: List[np.ndarray] = field(default_factory=list)
    exp_time: List[np.ndarray] = field(default_factory=list)

    def add(self, values, prefactor_time, dist_sq, exp_time):
        finite = np.isfinite(dist_sq)
        self.values.append(values[finite])
        self.prefactor_time.append(np.full(int(finite.sum()), prefactor_time))
        self.dist_sq.append(dist_sq[finite])
        self.exp_time.append(np.full(int(finite.sum()), exp_time))

    def fit(self, n: int) -> Optional[float]:
        if not self.values:
            return None
        return fit_gaussian_constant(np.concatenate(self.values), np.concatenate(self.prefactor_time),
                                     np.concatenate(self.dist_sq), np.concatenate(self.exp_time), n)


def _gaussian_samples(flow: ExpansionFlow, kernel: BackwardKernel, stride: int, min_elapsed: float,
                      gaussian: GaussianSamples, gradient: GaussianSamples) -> float:
    """Feed one backward kernel into both fits; returns its most negative value"""
    target_end = flow.stage_end(kernel.stage)
    lowest = 0.0
    for record in kernel.source_records()[::stride]:
        man = kernel.manifold(record)
        values = kernel.field(record)
        lowest = min(lowest, float(np.min(values[man.mask])))
        elapsed = kernel.t - record.time
        if elapsed < min_elapsed:
            continue
        dist = distance_field(man, kernel.x)
        active = man.mask
        near = active & (dist ** 2 <= 4.0 * GAUSSIAN_WINDOW * elapsed)
        gaussian.add(np.maximum(values[near], 0.0), elapsed, dist[near] ** 2, elapsed)
        since_start = record.time - flow.stage_start(record.stage)
        if since_start > 0.0:
            grad = man.gradient_norm(values)
            gradient.add(grad[active] * np.sqrt(since_start), target_end, dist[active] ** 2, target_end)
    return lowest


def _reproduction_residual(solver: KernelSolver, kernel: BackwardKernel, y: Cell, s: float,
                           fraction: float) -> Optional[float]:
    """|G(x,t;y,s) - sum_z G(x,t;z,mu) G(z,mu;y,s) V_mu(z)| relative to G(x,t;y,s)"""
    flow = solver.flow
    inner = [r for r in kernel.source_records()
             if s < r.time and (r.stage == 0 or r.time > flow.stage_start(r.stage))]
    if not inner:
        return None
    mu_target = s + fraction * (kernel.t - s)
    record = min(inner, key=lambda r: abs(r.time - mu_target))
    direct = kernel.value(y, s)
    forward = solver.forward_kernel(y, s, record.time)
    if forward.stage != record.stage:
        return None
    stepper = solver.steppers[record.stage]
    k = stepper.index_of(record.time)
    man = stepper.manifold(k)
    composed = float(np.dot(record.weights, man.to_active(forward.values)))
    scale = max(abs(direct), 1e-12)
    return abs(direct - composed) / scale


def verify_kernel_properties(flow: ExpansionFlow, targets: Sequence[Tuple[Cell, float]],
                             sources: Sequence[Tuple[Cell, float]], dt: float = DEFAULT_DT,
                             time_stride: int = 1, mu_fraction: float = 0.5,
                             min_elapsed: Optional[float] = None,
                             solver: Optional[KernelSolver] = None) -> KernelReport:
    """Mass, reproduction, Gaussian and gradient audits of the generalized kernel.

    `targets` are (x, t) points for the adjoint sweeps feeding the Gaussian and
    gradient fits; `sources` are (y, s) points whose forward masses are tracked
    through every junction and which pair with each target for the
    reproduction residual. Kernel slices closer than `min_elapsed` (default
    ten solver steps) to their target time stay out of the fits; there the
    one-step kernel has geometric rather than Gaussian tails. For the same
    reason the kernel fit only reads cells with d^2 <= 4 GAUSSIAN_WINDOW (t - s).
    """
    started = time.time()
    solver = KernelSolver(flow, dt) if solver is None else solver
    notes: List[str] = []
    if min_elapsed is None:
        min_elapsed = 10.0 * max(stepper.dt for stepper in solver.steppers)

    deviations, masses = [0.0], [0.0]
    for y, s in sources:
        trace = solver.stage_masses(y, s)
        complete_stages = [flow.stages[j].mask.all() for j in range(flow.stage_of_source(s), len(flow.stages))]
        for mass, complete in zip(trace["stage_end"], complete_stages):
            masses.append(mass)
            if complete:
                deviations.append(abs(mass - 1.0))
        masses.extend(trace["after_junction"])

    gaussian, gradient = GaussianSamples(), GaussianSamples()
    residuals = [0.0]
    lowest = 0.0
    for x, t in targets:
        kernel = solver.backward_kernel(x, t)
        lowest = min(lowest, _gaussian_samples(flow, kernel, max(1, time_stride), min_elapsed,
                                               gaussian, gradient))
        for y, s in sources:
            if s >= kernel.t:
                continue
            try:
                residual = _reproduction_residual(solver, kernel, y, s, mu_fraction)
            except (RicciLabError, ValueError) as e:
                notes.append(f"reproduction skipped for y={y}, s={s}: {e}")
                continue
            if residual is not None:
                residuals.append(residual)
    if lowest < UNDERSHOOT:
        notes.append(f"kernel undershoot {lowest:.3e} below {UNDERSHOOT:g}")

    report = KernelReport(
        mass_deviation=float(max(deviations)),
        max_mass=float(max(masses)),
        min_value=lowest,
        reproduction_residual=float(max(residuals)),
        gaussian_constant=gaussian.fit(2),
        gradient_constant=gradient.fit(2),
        curvature_decay=max(stage.curvature_decay() for stage in flow.stages),
        samples=len(targets) * len(sources),
        notes=notes,
        execution_time=time.time() - started,
    )
    logger.debug("kernel report: %s", report.to_dict())
    return report


def gradient_junction_sweep(flow: ExpansionFlow, x: Cell, t: float, junction: int,
                            offsets: Sequence[float], dt: float = DEFAULT_DT) -> List[float]:
    """sup_y |grad_y G(x,t;y,s)| * sqrt(s - t_j) for s = t_j + offset"""
    solver = KernelSolver(flow, dt)
    t_j = flow.stage_start(junction)
    kernel = solver.backward_kernel(x, t, stop=t_j)
    scaled = []
    for offset in offsets:
        record = kernel.record_at(t_j + offset)
        since = record.time - t_j
        if since <= 0.0:
            continue
        man = kernel.manifold(record)
        scaled.append(float(np.max(man.gradient_norm(kernel.field(record)))) * np.sqrt(since))
    return scaled
