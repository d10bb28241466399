"""Flows in expansion and the generalized conjugate heat kernel across them.

Stage j carries a metric trajectory on [t_j, t_{j+1}] over the domain M_j,
with M_0 > M_1 > ... nested. At a junction t_k the kernel is composed as

    G(x, t; y, s) = sum over z in M_k of G(x, t; z, t_k) G(z, t_k; y, s) V_{t_k^-}(z),

so a forward density G^- entering stage k becomes G^- V^- / V^+ on M_k, and
the adjoint weights leaving stage k become q^+ V^- / V^+ extended by zero.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from geometry.discrete_manifold import Cell, DiscreteManifold
from heat.conjugate_kernel import DEFAULT_DT, HeatKernelSlice, KernelStepper
from heat.metric_trajectory import MetricTrajectory, time_slack
from shared.errors import OutOfDomainError

logger = logging.getLogger(__name__)

RATIO_RTOL = 1e-12


@dataclass
class ExpansionFlow:
    stages: List[MetricTrajectory]
    nu: Optional[float] = None
    junction_flags: List[bool] = field(default_factory=list)
    junction_margins: List[float] = field(default_factory=list)

    def __post_init__(self):
        if not self.stages:
            raise ValueError("an expansion flow needs at least one stage")
        m = self.stages[0].m
        for j, (before, after) in enumerate(zip(self.stages, self.stages[1:])):
            if after.m != m:
                raise ValueError(f"stage {j + 1} lives on a different grid")
            if abs(after.start - before.end) > time_slack(before.end, after.start):
                raise ValueError(f"stage {j + 1} starts at {after.start}, stage {j} ends at {before.end}")
            if np.any(after.mask & ~before.mask):
                raise ValueError(f"mask of stage {j + 1} is not contained in the mask of stage {j}")
        if self.nu is not None:
            for j, stage in enumerate(self.stages[1:], start=1):
                ratio = stage.end / stage.start
                if abs(ratio - self.nu) > RATIO_RTOL * self.nu:
                    raise ValueError(f"stage {j} has time ratio {ratio!r}, expected nu={self.nu!r}")
        self.junction_flags, self.junction_margins = [], []
        for before, after in zip(self.stages, self.stages[1:]):
            t = after.start
            gap = (after.field_at(t) - before.field_at(t))[after.mask]
            margin = float(np.min(gap))
            self.junction_margins.append(margin)
            self.junction_flags.append(margin >= 0.0)
            if margin < 0.0:
                logger.warning("junction at t=%g violates g_next >= g_prev (margin %g)", t, margin)

    @property
    def junctions_ok(self) -> bool:
        return all(self.junction_flags)

    @property
    def junction_times(self) -> List[float]:
        return [stage.start for stage in self.stages[1:]]

    @property
    def start(self) -> float:
        return self.stages[0].start

    @property
    def end(self) -> float:
        return self.stages[-1].end

    def stage_of_target(self, t: float) -> int:
        """Stage i with t in (t_i, t_{i+1}]; the very first instant belongs to stage 0"""
        for i, stage in enumerate(self.stages):
            if stage.contains(t) and (t > stage.start or i == 0):
                return i
        raise OutOfDomainError(f"t={t} is outside the expansion flow [{self.start}, {self.end}]")

    def stage_of_source(self, s: float) -> int:
        """Stage j with s in [t_j, t_{j+1}); the final instant belongs to the last stage"""
        for j, stage in enumerate(self.stages):
            last = j == len(self.stages) - 1
            if stage.contains(s) and (s < stage.end - time_slack(stage.end) or last):
                return j
        raise OutOfDomainError(f"s={s} is outside the expansion flow [{self.start}, {self.end}]")

    def manifold_at(self, t: float, side: str = "source") -> DiscreteManifold:
        index = self.stage_of_source(t) if side == "source" else self.stage_of_target(t)
        return self.stages[index].manifold_at(t)

    def stage_start(self, j: int) -> float:
        return self.stages[j].start

    def stage_end(self, j: int) -> float:
        return self.stages[j].end

    @classmethod
    def single(cls, trajectory: MetricTrajectory) -> "ExpansionFlow":
        return cls([trajectory])


@dataclass
class KernelRecord:
    time: float
    stage: int
    weights: np.ndarray  # q = G(x, t; ., s) V_s on the active cells of the stage


@dataclass
class BackwardKernel:
    """G(x, t; y, s) for fixed (x, t) at every lattice time s <= t"""
    x: Cell
    t: float
    stage: int
    records: List[KernelRecord]
    solver: "KernelSolver"

    def record_at(self, s: float) -> KernelRecord:
        j = self.solver.flow.stage_of_source(s)
        candidates = [r for r in self.records if r.stage == j]
        if not candidates:
            raise OutOfDomainError(f"s={s} precedes no recorded kernel slice in stage {j}")
        return min(candidates, key=lambda r: abs(r.time - s))

    def field(self, record: KernelRecord) -> np.ndarray:
        """Kernel values y -> G(x, t; y, s) as a grid (0 outside the stage mask)"""
        stepper = self.solver.steppers[record.stage]
        k = stepper.index_of(record.time)
        man = stepper.manifold(k)
        return man.to_grid(record.weights / stepper.volumes(k))

    def value(self, y: Cell, s: float) -> float:
        record = self.record_at(s)
        stepper = self.solver.steppers[record.stage]
        k = stepper.index_of(record.time)
        position = stepper.manifold(k).require_active(y)
        return float(record.weights[position] / stepper.volumes(k)[position])

    def manifold(self, record: KernelRecord) -> DiscreteManifold:
        stepper = self.solver.steppers[record.stage]
        return stepper.manifold(stepper.index_of(record.time))

    def source_records(self) -> List[KernelRecord]:
        """Records with s < t, one per (time, stage) as a source sees it"""
        return [r for r in self.records if r.time < self.t and
                self.solver.flow.stage_of_source(r.time) == r.stage]


class KernelSolver:
    """Generalized kernel solves over an expansion flow with one stepper per stage"""

    def __init__(self, flow: ExpansionFlow, dt: float = DEFAULT_DT, include_scalar: bool = True,
                 min_steps: int = 1):
        self.flow = flow
        self.dt = dt
        self.steppers = [KernelStepper(stage, dt, include_scalar, min_steps) for stage in flow.stages]

    def _junction_ratio(self, k: int) -> Tuple[np.ndarray, np.ndarray]:
        """V^- / V^+ on the active cells of stage k, and their positions within stage k - 1"""
        before, after = self.steppers[k - 1], self.steppers[k]
        man_before = before.manifold(before.steps)
        man_after = after.manifold(0)
        positions_before = man_before.index_map[man_after.active_cells]
        ratio = before.volumes(before.steps)[positions_before] / after.volumes(0)
        return ratio, positions_before

    def forward_kernel(self, y: Cell, s: float, t: float) -> HeatKernelSlice:
        """G(., t; y, s) composed across every junction between s and t"""
        if not s < t:
            raise ValueError(f"need s < t, got s={s}, t={t}")
        j, i = self.flow.stage_of_source(s), self.flow.stage_of_target(t)
        if j > i:
            raise OutOfDomainError(f"source stage {j} lies after target stage {i}")
        stepper = self.steppers[j]
        k0 = stepper.index_of(s)
        values = stepper.point_mass(y, k0)
        for stage in range(j, i + 1):
            stepper = self.steppers[stage]
            if stage > j:
                ratio, positions = self._junction_ratio(stage)
                values = values[positions] * ratio
                k0 = 0
            k1 = stepper.index_of(t) if stage == i else stepper.steps
            values = stepper.forward(values, k0, k1)
        man = stepper.manifold(k1)
        mass = float(np.dot(values, stepper.volumes(k1)))
        return HeatKernelSlice(source=tuple(int(c) for c in y), source_time=float(s),
                               eval_time=float(stepper.lattice[k1]), values=man.to_grid(values),
                               mass=mass, stage=i)

    def stage_masses(self, y: Cell, s: float) -> Dict[str, List[float]]:
        """Kernel mass from (y, s) just before and just after every later junction, and at the end"""
        j = self.flow.stage_of_source(s)
        stepper = self.steppers[j]
        k0 = stepper.index_of(s)
        values = stepper.point_mass(y, k0)
        before, after = [], []
        for stage in range(j, len(self.steppers)):
            stepper = self.steppers[stage]
            if stage > j:
                ratio, positions = self._junction_ratio(stage)
                values = values[positions] * ratio
                after.append(float(np.dot(values, stepper.volumes(0))))
                k0 = 0
            values = stepper.forward(values, k0, stepper.steps)
            before.append(float(np.dot(values, stepper.volumes(stepper.steps))))
        return {"stage_end": before, "after_junction": after}

    def backward_kernel(self, x: Cell, t: float, stop: Optional[float] = None) -> BackwardKernel:
        """Adjoint sweep from (x, t) down to `stop` (default: the start of the flow)"""
        i = self.flow.stage_of_target(t)
        stop = self.flow.start if stop is None else stop
        stepper = self.steppers[i]
        k = stepper.index_of(t)
        man = stepper.manifold(k)
        weights = np.zeros(man.active_cells.size)
        weights[man.require_active(x)] = 1.0
        records = [KernelRecord(float(stepper.lattice[k]), i, weights)]
        stage = i
        while True:
            while k > 0 and stepper.lattice[k] > stop + time_slack(stop):
                weights = stepper.adjoint_step(weights, k)
                k -= 1
                records.append(KernelRecord(float(stepper.lattice[k]), stage, weights))
            if stage == 0 or stepper.lattice[k] <= stop + time_slack(stop):
                break
            ratio, positions = self._junction_ratio(stage)
            stage -= 1
            stepper = self.steppers[stage]
            extended = np.zeros(self.steppers[stage].manifold(stepper.steps).active_cells.size)
            extended[positions] = weights * ratio
            weights = extended
            k = stepper.steps
            records.append(KernelRecord(float(stepper.lattice[k]), stage, weights))
        return BackwardKernel(x=tuple(int(c) for c in x), t=float(records[0].time), stage=i,
                              records=records, solver=self)


def generalized_kernel(flow: ExpansionFlow, x: Cell, t: float, y: Cell, s: float,
                       dt: float = DEFAULT_DT, solver: Optional[KernelSolver] = None) -> float:
    """G(x, t; y, s) on an expansion flow"""
    solver = KernelSolver(flow, dt) if solver is None else solver
    j, i = flow.stage_of_source(s), flow.stage_of_target(t)
    if j > i:
        raise OutOfDomainError(f"(y, s) in stage {j} comes after (x, t) in stage {i}")
    return solver.backward_kernel(x, t, stop=s).value(y, s)


def identity_junction_flow(trajectory: MetricTrajectory, split: float) -> ExpansionFlow:
    """The same metric cut into two stages at `split`"""
    return ExpansionFlow([trajectory.window(trajectory.start, split), trajectory.window(split, trajectory.end)])


def stages_from_fields(fields: Sequence[np.ndarray], times: Sequence[float],
                       masks: Sequence[np.ndarray]) -> ExpansionFlow:
    """Static stages: metric fields[j] on [times[j], times[j+1]] over masks[j]"""
    stages = [MetricTrajectory.static(u, times[j], times[j + 1], masks[j]) for j, u in enumerate(fields)]
    return ExpansionFlow(stages)
