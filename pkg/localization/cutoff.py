"""Space-time cutoff functions built from a covering of an annulus.

For a centre x0 and radii r < R, the centres p_k form a maximal
r/(4 e^K)-separated set in the annulus B_0(x0, R) minus B_0(x0, R - r/4),
where B_0 are g(0)-balls. On B_0(p_k, r) the bump f_k(y, s) = f(d_s(p_k, y) / r)
uses the time-s distance, and the cutoff is

    phi(y, s) = F(1 - sum_k f_k(y, s))  inside B_0(x0, R),   0 outside.

f drops from 1 to 0 on [1/4, 1/2] and F is convex with F(0) = 0, F(1) = 1,
so phi = 1 wherever no bump reaches and phi = 0 wherever a bump is at its
plateau.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from flows.conformal_surface import gauss_curvature
from geometry.discrete_manifold import Cell, DiscreteManifold
from geometry.distances import distance_field
from heat.metric_trajectory import MetricTrajectory
from localization.profiles import PLATEAU_END, RAMP_END, inner_profile, outer_profile
from localization.separated_sets import maximal_separated_set
from shared.errors import HypothesisViolationError
from shared.fitting import loglog_slope
from shared.serialization import save_grid_field, save_json

logger = logging.getLogger(__name__)

DEFAULT_BETA = 1.0
DERIVATIVE_FLOOR = 1e-12
# bound exponents of |grad phi|, Lap phi, d+phi/ds and the centre count in dimension n
SCALING_EXPONENTS = {
    "gradient": lambda n: -(n + 1.0),
    "laplacian": lambda n: -(2.0 * n + 2.0),
    "time_derivative": lambda n: -float(n),
    "centres": lambda n: -float(n),
}
EXPONENT_SLACK = 0.5

NEIGHBOUR_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1))


def dilate(region: np.ndarray) -> np.ndarray:
    """Grow a periodic cell set by one 8-neighbour layer"""
    grown = np.array(region, dtype=bool)
    for di, dj in NEIGHBOUR_STEPS:
        grown |= np.roll(region, (di, dj), axis=(0, 1))
    return grown


def domain_edge(mask: np.ndarray) -> np.ndarray:
    """Active cells with an inactive 8-neighbour"""
    return mask & dilate(~mask)


def lower_ricci_bound(man: DiscreteManifold) -> float:
    """Smallest K >= 0 with Ric >= -K; in two dimensions Ric = K_gauss g"""
    gauss = gauss_curvature(man.u, man.h, man.mask)
    return float(max(0.0, -np.min(gauss[man.mask])))


def comparison_bound(d: np.ndarray, k: float, n: int = 2) -> np.ndarray:
    """(n-1) sqrt(K) coth(sqrt(K) d), with the K -> 0 limit (n-1)/d"""
    if k <= 0.0:
        return (n - 1.0) / d
    root = np.sqrt(k)
    return (n - 1.0) * root / np.tanh(root * d)


@dataclass
class CutoffField:
    x0: Cell
    radius: float
    r: float
    k: float
    c0: float
    beta: float
    eps: float
    times: np.ndarray
    phi: np.ndarray  # (len(times), m, m)
    centres: List[Cell]
    inner: np.ndarray  # B_0(x0, R - r)
    outer: np.ndarray  # B_0(x0, R)
    annulus: np.ndarray
    trajectory: MetricTrajectory = field(repr=False)
    bump_sums: np.ndarray = field(repr=False, default=None)
    measured: Dict[str, Any] = field(default_factory=dict)

    @property
    def params(self) -> Dict[str, float]:
        return {"R": self.radius, "r": self.r, "K": self.k, "c0": self.c0, "beta": self.beta}

    def manifold(self, index: int) -> DiscreteManifold:
        return self.trajectory.manifold_at(float(self.times[index]))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "x0": list(self.x0),
            "params": self.params,
            "eps": self.eps,
            "times": self.times,
            "centres": [list(c) for c in self.centres],
            "measured": self.measured,
        }

    def save(self, directory: Union[str, Path]) -> Path:
        """One grid CSV per sampled time plus cutoff.json"""
        directory = Path(directory)
        for i, s in enumerate(self.times):
            man = self.manifold(i)
            save_grid_field(directory / f"phi_{i:03d}.csv", self.phi[i], man.mask, man.h, {"time": float(s)})
        return save_json(directory / "cutoff.json", self.to_dict())


def build_cutoff(trajectory: MetricTrajectory, x0: Cell, radius: float, r: float,
                 times: Optional[Sequence[float]] = None, k: Optional[float] = None,
                 c0: Optional[float] = None, beta: float = DEFAULT_BETA) -> CutoffField:
    """Assemble phi on the sampled times of a metric trajectory.

    `k` defaults to the lower Ricci bound of g(0) and `c0` to the trajectory's
    measured curvature decay max t |Rm|. Raises HypothesisViolationError when
    beta sqrt(c0 T) > r/4 or when B_0(x0, R + r) reaches the edge of the domain.
    """
    if not 0.0 < r < radius:
        raise ValueError(f"need 0 < r < R, got r={r}, R={radius}")
    if times is None:
        times = [trajectory.start, trajectory.end] if trajectory.is_static else trajectory.times
    times = np.array(sorted(float(s) for s in times))
    man0 = trajectory.manifold_at(trajectory.start)
    k = lower_ricci_bound(man0) if k is None else float(k)
    c0 = trajectory.curvature_decay() if c0 is None else float(c0)
    horizon = float(times[-1] - trajectory.start)
    shrink = beta * np.sqrt(max(c0, 0.0) * horizon)
    if shrink > 0.25 * r:
        raise HypothesisViolationError(
            f"beta sqrt(c0 T) = {shrink:.4g} exceeds r/4 = {0.25 * r:.4g} (c0={c0:.4g}, T={horizon:.4g})")

    d0 = distance_field(man0, x0)
    if not man0.is_complete and np.any((d0 <= radius + r) & domain_edge(man0.mask)):
        raise HypothesisViolationError(f"B(x0, R + r) with R + r = {radius + r:g} reaches the domain edge")

    outer = d0 < radius
    inner = d0 <= radius - r
    annulus = outer & (d0 >= radius - 0.25 * r)
    eps = r / (4.0 * np.exp(k))
    centres = maximal_separated_set(man0, annulus, eps) if annulus.any() else []
    local_balls = [distance_field(man0, p, limit=r) < r for p in centres]

    phi = np.zeros((times.size,) + man0.u.shape)
    sums = np.zeros_like(phi)
    for i, s in enumerate(times):
        man = trajectory.manifold_at(float(s))
        total = np.zeros(man.u.shape)
        for p, ball in zip(centres, local_balls):
            ds = distance_field(man, p, limit=RAMP_END * r)
            bump = np.where(ball & np.isfinite(ds), inner_profile(np.where(np.isfinite(ds), ds, r) / r), 0.0)
            total += bump
        sums[i] = total
        phi[i] = np.where(outer, outer_profile(1.0 - total), 0.0)
    logger.debug("cutoff at x0=%s: %d centres, eps=%g", x0, len(centres), eps)
    return CutoffField(x0=tuple(int(c) for c in x0), radius=float(radius), r=float(r), k=k, c0=c0,
                       beta=float(beta), eps=float(eps), times=times, phi=phi, centres=centres,
                       inner=inner, outer=outer, annulus=annulus, trajectory=trajectory, bump_sums=sums)


@dataclass
class CutoffReport:
    gradient_sup: float
    laplacian_sup: float
    time_derivative_sup: float
    centre_count: int
    range_ok: bool
    inclusion_ok: bool
    support_ok: bool
    covering_ok: bool
    kink_cells: int
    comparison_samples: int
    constants: Dict[str, float]
    violations: List[Dict[str, Any]] = field(default_factory=list)
    execution_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "gradient_sup": self.gradient_sup,
            "laplacian_sup": self.laplacian_sup,
            "time_derivative_sup": self.time_derivative_sup,
            "centre_count": self.centre_count,
            "range_ok": self.range_ok,
            "inclusion_ok": self.inclusion_ok,
            "support_ok": self.support_ok,
            "covering_ok": self.covering_ok,
            "kink_cells": self.kink_cells,
            "comparison_samples": self.comparison_samples,
            "constants": self.constants,
            "violations": self.violations,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def display(self):
        print(f"centres: {self.centre_count}")
        print(f"sup |grad phi| = {self.gradient_sup:.6g}, sup Lap phi = {self.laplacian_sup:.6g}, "
              f"sup d+phi/ds = {self.time_derivative_sup:.6g}")
        print(f"inclusion ok: {self.inclusion_ok}, support ok: {self.support_ok}, "
              f"covering ok: {self.covering_ok}, kink cells: {self.kink_cells}")


def _comparison_audit(cf: CutoffField, man: DiscreteManifold, n: int) -> Dict[str, int]:
    """Count band cells r/4 <= d <= r/2 where the discrete Lap d_p exceeds the comparison bound"""
    flagged = samples = 0
    for p in cf.centres:
        d = distance_field(man, p, limit=cf.r)
        band = (d >= PLATEAU_END * cf.r) & (d <= RAMP_END * cf.r)
        if not band.any():
            continue
        lap = man.laplacian_apply(np.where(np.isfinite(d), d, cf.r) * man.mask)
        bound = comparison_bound(d[band], cf.k, n)
        samples += int(band.sum())
        flagged += int(np.sum(lap[band] > bound))
    return {"flagged": flagged, "samples": samples}


def verify_cutoff(cf: CutoffField, n: int = 2, comparison: bool = True) -> CutoffReport:
    """Measure the derivative sizes of phi and audit its sets.

    The Laplacian and time derivative are one-sided: only their upper values
    are reported. Cells where the distance Laplacian beats the comparison
    bound (kinks of the distance function) are counted, not treated as
    failures.
    """
    started = time.time()
    violations: List[Dict[str, Any]] = []
    transition = dilate(cf.outer & ~cf.inner)
    grad_sup = lap_sup = 0.0
    derivative_support = np.zeros(cf.phi.shape[1:], dtype=bool)
    kinks = {"flagged": 0, "samples": 0}
    range_ok = bool(np.all(cf.phi >= 0.0) and np.all(cf.phi <= 1.0))
    inclusion_ok = support_ok = covering_ok = True

    for i, s in enumerate(cf.times):
        man = cf.manifold(i)
        phi = cf.phi[i]
        grad = man.gradient_norm(phi)
        lap = man.laplacian_apply(phi)
        grad_sup = max(grad_sup, float(np.max(grad)))
        lap_sup = max(lap_sup, float(np.max(lap)))
        derivative_support |= (grad > DERIVATIVE_FLOOR) | (np.abs(lap) > DERIVATIVE_FLOOR)

        if np.any(phi[~cf.outer] != 0.0):
            support_ok = False
            violations.append({"check": "support", "time": float(s)})
        if np.any(phi[cf.inner] != 1.0):
            inclusion_ok = False
            violations.append({"check": "phi=1 on B_0(x0, R - r)", "time": float(s),
                               "cells": int(np.sum(phi[cf.inner] != 1.0))})
        ds = distance_field(man, cf.x0, limit=cf.radius)
        moved_ball = ds <= cf.radius - 1.25 * cf.r
        if np.any(moved_ball & ~cf.inner):
            inclusion_ok = False
            violations.append({"check": "B_s(x0, R - 5r/4) inside B_0(x0, R - r)", "time": float(s),
                               "cells": int(np.sum(moved_ball & ~cf.inner))})
        if np.any(cf.bump_sums[i][cf.annulus] < 1.0):
            covering_ok = False
        if comparison:
            audit = _comparison_audit(cf, man, n)
            kinks["flagged"] += audit["flagged"]
            kinks["samples"] += audit["samples"]

    time_sup = 0.0
    if cf.times.size > 1:
        rates = np.diff(cf.phi, axis=0) / np.diff(cf.times)[:, None, None]
        time_sup = max(0.0, float(np.max(rates)))
        derivative_support |= np.any(np.abs(rates) > DERIVATIVE_FLOOR, axis=0)
    if np.any(derivative_support & ~transition):
        support_ok = False
        violations.append({"check": "derivative support", "cells": int(np.sum(derivative_support & ~transition))})
    if not covering_ok:
        logger.info("annulus not covered by the plateaus of the bumps at every sampled time")

    constants = {
        "gradient": grad_sup * cf.r ** (n + 1),
        "laplacian": lap_sup * cf.r ** (2 * n + 2),
        "time_derivative": time_sup * cf.r ** n,
        "centres": len(cf.centres) * cf.r ** n,
    }
    cf.measured = {"gradient_sup": grad_sup, "laplacian_sup": lap_sup, "time_derivative_sup": time_sup,
                   "constants": constants}
    return CutoffReport(
        gradient_sup=grad_sup,
        laplacian_sup=lap_sup,
        time_derivative_sup=time_sup,
        centre_count=len(cf.centres),
        range_ok=range_ok,
        inclusion_ok=inclusion_ok,
        support_ok=support_ok,
        covering_ok=covering_ok,
        kink_cells=kinks["flagged"],
        comparison_samples=kinks["samples"],
        constants=constants,
        violations=violations,
        execution_time=time.time() - started,
    )


@dataclass
class ScalingStudy:
    rs: List[float]
    reports: List[CutoffReport]
    slopes: Dict[str, Optional[float]]
    exponents: Dict[str, float]
    within: Dict[str, Optional[bool]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rs": self.rs,
            "slopes": self.slopes,
            "exponents": self.exponents,
            "within": self.within,
            "reports": [r.to_dict() for r in self.reports],
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    @property
    def passed(self) -> bool:
        return all(ok is not False for ok in self.within.values())


def cutoff_scaling_study(trajectory: MetricTrajectory, x0: Cell, rs: Sequence[float], radius: float,
                         times: Optional[Sequence[float]] = None, n: int = 2,
                         **kwargs) -> ScalingStudy:
    """Build and verify the cutoff for each r and fit log-log slopes against r.

    The measured quantities must grow no faster than the bounds as r shrinks,
    so each slope is checked one-sided: slope >= bound exponent - 0.5. A
    quantity that vanishes at some r (a static flow's time derivative) has
    no slope.
    """
    rs = sorted(float(r) for r in rs)
    reports = [verify_cutoff(build_cutoff(trajectory, x0, radius, r, times, **kwargs), n) for r in rs]
    series = {
        "gradient": [rep.gradient_sup for rep in reports],
        "laplacian": [rep.laplacian_sup for rep in reports],
        "time_derivative": [rep.time_derivative_sup for rep in reports],
        "centres": [float(rep.centre_count) for rep in reports],
    }
    slopes: Dict[str, Optional[float]] = {}
    within: Dict[str, Optional[bool]] = {}
    exponents = {name: rule(n) for name, rule in SCALING_EXPONENTS.items()}
    for name, values in series.items():
        if len(rs) < 2 or min(values) <= 0.0:
            slopes[name], within[name] = None, None
            continue
        slopes[name] = loglog_slope(rs, values).slope
        within[name] = slopes[name] >= exponents[name] - EXPONENT_SLACK
    logger.debug("cutoff slopes: %s", slopes)
    return ScalingStudy(rs=rs, reports=reports, slopes=slopes, exponents=exponents, within=within)
