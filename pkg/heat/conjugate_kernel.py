"""Conjugate heat kernel (d/dt - Lap - scal) G = 0 on one metric trajectory.

Steps are backward Euler on a uniform time lattice covering the trajectory
interval. On a static metric A_k G^k = G^{k-1} with A_k = I - dt (Lap + scal).
On an evolving metric the reaction term is carried by the cell volumes:
G^k = (I - dt Lap_k)^{-1} (V^{k-1} / V^k) G^{k-1}. Along the conformal flow
d log V / dt = -scal, so this is the same equation, and sum G V is conserved
to round-off because the graph Laplacian is symmetric in the volume pairing.
Both forms keep G non-negative (the static one once dt * scal < 1). The same
factorizations drive the forward solve from a point source and the
transposed (adjoint) sweep that yields G(x, t; ., s) for all s at once.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from geometry.discrete_manifold import Cell, DiscreteManifold, cell_centres
from heat.metric_trajectory import MetricTrajectory
from shared.errors import ConfigurationError, OutOfDomainError
from shared.serialization import save_grid_field, save_json

logger = logging.getLogger(__name__)

DEFAULT_DT = 1e-4
THETA_IMAGES = 3


@dataclass
class HeatKernelSlice:
    source: Cell
    source_time: float
    eval_time: float
    values: np.ndarray
    mass: float
    stage: int = 0

    def clamped(self) -> np.ndarray:
        return np.maximum(self.values, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "source": list(self.source),
            "source_time": self.source_time,
            "eval_time": self.eval_time,
            "stage": self.stage,
            "mass": self.mass,
            "min_value": float(np.min(self.values)),
        }

    def save(self, path: Union[str, Path], man: DiscreteManifold) -> Path:
        path = save_grid_field(path, self.values, man.mask, man.h)
        save_json(Path(path).with_suffix(".meta.json"), self.to_dict())
        return path


class KernelStepper:
    """Backward Euler lattice and cached LU factors for one trajectory"""

    def __init__(self, trajectory: MetricTrajectory, dt: float = DEFAULT_DT, include_scalar: bool = True,
                 min_steps: int = 1):
        if dt <= 0.0:
            raise ConfigurationError(f"kernel time step must be positive, got {dt}")
        if min_steps < 1:
            raise ConfigurationError(f"kernel needs at least one step per trajectory, got {min_steps}")
        self.trajectory = trajectory
        length = trajectory.end - trajectory.start
        self.steps = max(min_steps, math.ceil(length / dt - 1e-9))
        self.dt = length / self.steps
        self.lattice = trajectory.start + self.dt * np.arange(self.steps + 1)
        self.lattice[-1] = trajectory.end
        self.include_scalar = include_scalar
        self._factors: Dict[int, Any] = {}
        self._volumes: Dict[int, np.ndarray] = {}

    def index_of(self, t: float) -> int:
        if not self.trajectory.contains(t):
            raise OutOfDomainError(f"t={t} outside [{self.trajectory.start}, {self.trajectory.end}]")
        k = int(round((t - self.trajectory.start) / self.dt))
        k = min(max(k, 0), self.steps)
        if abs(self.lattice[k] - t) > 1e-9 * max(self.dt, abs(t)):
            logger.debug("t=%r snapped to lattice time %r", t, self.lattice[k])
        return k

    def manifold(self, k: int) -> DiscreteManifold:
        return self.trajectory.manifold_at(float(self.lattice[k]))

    def volumes(self, k: int) -> np.ndarray:
        """Active-cell volumes at lattice time k"""
        key = 0 if self.trajectory.is_static else k
        if key not in self._volumes:
            man = self.manifold(k)
            self._volumes[key] = man.volumes.ravel()[man.active_cells]
        return self._volumes[key]

    def _volume_ratio(self, k: int) -> Optional[np.ndarray]:
        """V^{k-1} / V^k when the reaction term rides on the volumes, else None"""
        if self.trajectory.is_static or not self.include_scalar:
            return None
        return self.volumes(k - 1) / self.volumes(k)

    def _factor(self, k: int):
        key = 0 if self.trajectory.is_static else k
        if key in self._factors:
            return self._factors[key]
        man = self.manifold(k)
        operator = man.laplacian_matrix
        if self.include_scalar and self.trajectory.is_static:
            scal = self.trajectory.scalar_curvature_at(float(self.lattice[k])).ravel()[man.active_cells]
            worst = self.dt * float(np.max(scal, initial=0.0))
            if worst >= 1.0:
                raise ConfigurationError(
                    f"kernel step dt={self.dt:g} breaks positivity: dt * max(scal) = {worst:g} >= 1")
            operator = operator + sparse.diags(scal)
        size = man.active_cells.size
        matrix = (sparse.identity(size, format="csc") - self.dt * operator).tocsc()
        self._factors[key] = splu(matrix)
        return self._factors[key]

    def forward(self, values: np.ndarray, k0: int, k1: int) -> np.ndarray:
        """Advance a density from lattice index k0 to k1"""
        for k in range(k0 + 1, k1 + 1):
            ratio = self._volume_ratio(k)
            if ratio is not None:
                values = ratio * values
            values = self._factor(k).solve(values)
        return values

    def adjoint_step(self, weights: np.ndarray, k: int) -> np.ndarray:
        """Pull weights at lattice index k back to k - 1"""
        weights = self._factor(k).solve(weights, trans="T")
        ratio = self._volume_ratio(k)
        return weights if ratio is None else ratio * weights

    def point_mass(self, cell: Cell, k: int) -> np.ndarray:
        man = self.manifold(k)
        position = man.require_active(cell)
        values = np.zeros(man.active_cells.size)
        values[position] = 1.0 / self.volumes(k)[position]
        return values


def solve_conjugate_kernel(trajectory: MetricTrajectory, y: Cell, s: float, t: float,
                           dt: float = DEFAULT_DT, include_scalar: bool = True,
                           stepper: Optional[KernelStepper] = None) -> HeatKernelSlice:
    """G(., t; y, s) from the volume-normalized indicator of y at time s"""
    if not s < t:
        raise ValueError(f"need s < t, got s={s}, t={t}")
    stepper = KernelStepper(trajectory, dt, include_scalar) if stepper is None else stepper
    k0, k1 = stepper.index_of(s), stepper.index_of(t)
    values = stepper.forward(stepper.point_mass(y, k0), k0, k1)
    man = stepper.manifold(k1)
    mass = float(np.dot(values, stepper.volumes(k1)))
    return HeatKernelSlice(source=tuple(int(i) for i in y), source_time=float(stepper.lattice[k0]),
                           eval_time=float(stepper.lattice[k1]), values=man.to_grid(values), mass=mass)


def flat_torus_heat_kernel(m: int, y: Cell, elapsed: float, images: int = THETA_IMAGES) -> np.ndarray:
    """Periodic Gaussian sum (4 pi tau)^{-1} sum_k exp(-|x - y + k|^2 / 4 tau) at cell centres"""
    x1, x2 = cell_centres(m)
    y1, y2 = (np.asarray(y, dtype=float) + 0.5) / m
    total = np.zeros((m, m))
    for a in range(-images, images + 1):
        for b in range(-images, images + 1):
            total += np.exp(-((x1 - y1 + a) ** 2 + (x2 - y2 + b) ** 2) / (4.0 * elapsed))
    return total / (4.0 * np.pi * elapsed)


def compare_with_heat_kernel(trajectory: MetricTrajectory, y: Cell, s: float, t: float,
                             dt: float = DEFAULT_DT) -> float:
    """min over cells of G_conjugate - G_heat from the same point source"""
    conjugate = solve_conjugate_kernel(trajectory, y, s, t, dt, include_scalar=True)
    plain = solve_conjugate_kernel(trajectory, y, s, t, dt, include_scalar=False)
    mask = trajectory.mask
    return float(np.min((conjugate.values - plain.values)[mask]))
