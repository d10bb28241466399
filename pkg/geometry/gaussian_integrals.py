"""Quadrature checks of the Gaussian integral estimates used by the kernel bounds.

Three estimates are measured on grids:
- a whole-ball Gaussian integral stays bounded uniformly in t;
- the Gaussian tail outside B_t(x, t^{1/4} d) decays like exp(-d^2 / (C sqrt t));
- the scalar comparison (C/t^{n/2}) e^{-d^2/Ct} <= (C1/T^{n/2}) e^{-d^2/C1 T} for t < T <= d^2.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from geometry.discrete_manifold import Cell, DiscreteManifold
from geometry.distances import distance_field
from shared.fitting import CONSTANT_GRID, fit_gaussian_constant, smallest_feasible_constant
from shared.serialization import save_json

logger = logging.getLogger(__name__)

SCALAR_SAMPLES = 1000
SCALAR_SEED = 11
SCALAR_D_RANGE = (0.05, 3.0)


@dataclass
class GaussianSweep:
    times: List[float]
    values: List[float]

    @property
    def constant(self) -> float:
        return max(self.values) if self.values else 0.0


def whole_ball_gaussian_integral(man: DiscreteManifold, x: Cell, radius: float, c1: float,
                                 times: Sequence[float]) -> GaussianSweep:
    """(C1 / t^{n/2}) * integral over B(x, R) of exp(-d^2 / (C1 t)), one value per t"""
    dist = distance_field(man, x, limit=radius)
    ball = dist <= radius
    values = []
    for t in times:
        integrand = np.zeros_like(dist)
        integrand[ball] = np.exp(-dist[ball] ** 2 / (c1 * t))
        values.append(c1 / t ** (man.dim / 2.0) * man.integrate(integrand, ball))
    return GaussianSweep(times=[float(t) for t in times], values=[float(v) for v in values])


def gaussian_ratio(c: float, c1: float, n: int, t: float, big_t: float, d: float) -> float:
    """LHS / RHS of the scalar comparison at one sample"""
    log_lhs = np.log(c) - 0.5 * n * np.log(t) - d ** 2 / (c * t)
    log_rhs = np.log(c1) - 0.5 * n * np.log(big_t) - d ** 2 / (c1 * big_t)
    return float(np.exp(log_lhs - log_rhs))


@dataclass
class ScalarGaussianReport:
    c: float
    n: int
    fitted_c1: Optional[float]
    samples: int
    worst_ratio: float


def scalar_gaussian_inequality(c: float, n: int, samples: int = SCALAR_SAMPLES,
                               rng: Optional[np.random.Generator] = None,
                               d_range: Tuple[float, float] = SCALAR_D_RANGE,
                               grid: np.ndarray = CONSTANT_GRID) -> ScalarGaussianReport:
    """Fit one C1 that works for every random (t < T <= d^2)"""
    rng = np.random.default_rng(SCALAR_SEED) if rng is None else rng
    d = rng.uniform(*d_range, size=samples)
    big_t = d ** 2 * (1.0 - rng.uniform(0.0, 1.0, size=samples))
    t = big_t * (1.0 - rng.uniform(0.0, 1.0, size=samples))
    t = np.maximum(t, 1e-300)
    log_lhs = np.log(c) - 0.5 * n * np.log(t) - d ** 2 / (c * t)

    def feasible(c1: float) -> bool:
        log_rhs = np.log(c1) - 0.5 * n * np.log(big_t) - d ** 2 / (c1 * big_t)
        return bool(np.all(log_lhs <= log_rhs + 1e-12))

    c1 = smallest_feasible_constant(feasible, grid)
    worst = 0.0
    if c1 is not None:
        log_rhs = np.log(c1) - 0.5 * n * np.log(big_t) - d ** 2 / (c1 * big_t)
        worst = float(np.exp(np.max(log_lhs - log_rhs)))
    logger.debug("scalar Gaussian comparison: C=%g n=%d -> C1=%s", c, n, c1)
    return ScalarGaussianReport(c=c, n=n, fitted_c1=c1, samples=samples, worst_ratio=worst)


@dataclass
class TailReport:
    x: Cell
    d: float
    c1: float
    c2: float
    times: List[float]
    tails: List[float]
    fitted_constant: Optional[float]
    threshold: float
    threshold_ok: bool
    scalar: Optional[ScalarGaussianReport] = None
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        data = {
            "x": list(self.x), "d": self.d, "C1": self.c1, "C2": self.c2,
            "times": self.times, "tails": self.tails,
            "fitted_constant": self.fitted_constant,
            "threshold": self.threshold, "threshold_ok": self.threshold_ok,
            "notes": self.notes,
        }
        if self.scalar is not None:
            data["scalar_C1"] = self.scalar.fitted_c1
            data["scalar_worst_ratio"] = self.scalar.worst_ratio
        return data

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())


def tail_threshold(n: int, c1: float, c2: float) -> float:
    """Smallest d for which the tail estimate is claimed"""
    return 2.0 * (n - 1) ** 1.5 * np.sqrt(c1) * c2


def gaussian_tail_check(snapshots: Sequence[Tuple[float, DiscreteManifold]], x: Cell, d: float,
                        c1: float, c2: float, with_scalar: bool = True) -> TailReport:
    """Tail of the C2-Gaussian outside B_{g(t)}(x, t^{1/4} d), fitted against C exp(-d^2/(C sqrt t))"""
    times, tails = [], []
    n = 2
    for t, man in snapshots:
        if t <= 0.0:
            continue
        dist = distance_field(man, x)
        outside = man.mask & (dist > t ** 0.25 * d)
        integrand = np.where(outside, np.exp(-np.where(outside, dist, 0.0) ** 2 / (c2 * t)), 0.0)
        tails.append(c2 / t ** (n / 2.0) * man.integrate(integrand, outside))
        times.append(float(t))
    times_arr = np.array(times)
    fitted = fit_gaussian_constant(np.array(tails), np.ones_like(times_arr),
                                   np.full_like(times_arr, d ** 2), np.sqrt(times_arr), n=0)
    threshold = tail_threshold(n, c1, c2)
    report = TailReport(x=tuple(int(i) for i in x), d=d, c1=c1, c2=c2, times=times,
                        tails=[float(v) for v in tails], fitted_constant=fitted,
                        threshold=threshold, threshold_ok=bool(d >= threshold))
    if not report.threshold_ok:
        report.notes.append(f"d={d:g} is below the claimed threshold {threshold:g}")
    if with_scalar:
        report.scalar = scalar_gaussian_inequality(c2, n)
    return report


def volume_ratio_floor(man: DiscreteManifold, x: Cell, radius: float) -> float:
    """Vol B(x, radius) / radius^n"""
    dist = distance_field(man, x, limit=radius)
    return man.integrate(1.0, dist <= radius) / radius ** man.dim
