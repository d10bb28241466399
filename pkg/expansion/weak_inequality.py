"""Integrated weak-derivative inequality for L = exp(-C t) ell.

For a test field psi >= 0 on a window [a, b] inside one stage,

    sum L psi dV |_a^b  <=  int_a^b sum L (Lap psi + d_t psi) dV dt,

and, with envelopes Lap psi <= u and d_t psi <= v, the same with u + v on
the right. Time integrals are left sums over the sampled times with
forward differences in time.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from expansion.pipeline import surface_ell
from geometry.discrete_manifold import DiscreteManifold
from heat.metric_trajectory import MetricTrajectory, time_slack
from shared.serialization import save_json

logger = logging.getLogger(__name__)

WEAK_ATOL = 1e-6
WEAK_RTOL = 1e-6

TestField = Union[np.ndarray, Callable[[float, DiscreteManifold], np.ndarray]]
Envelope = Union[float, np.ndarray]


@dataclass
class WeakInequalityReport:
    window: Tuple[float, float]
    evolution_c: float
    lhs: float
    rhs: float
    samples: int
    envelope_rhs: Optional[float] = None
    envelopes_hold: Optional[bool] = None
    violations: List[Dict[str, Any]] = field(default_factory=list)

    @property
    def tolerance(self) -> float:
        return WEAK_ATOL + WEAK_RTOL * max(abs(self.lhs), abs(self.rhs))

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> Dict[str, Any]:
        return {
            "window": list(self.window),
            "evolution_C": self.evolution_c,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "slack": self.slack,
            "envelope_rhs": self.envelope_rhs,
            "envelopes_hold": self.envelopes_hold,
            "samples": self.samples,
            "passed": self.passed,
            "violations": self.violations,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def display(self):
        print(f"window [{self.window[0]:.6g}, {self.window[1]:.6g}]: lhs {self.lhs:.6g}, rhs {self.rhs:.6g}, "
              f"slack {self.slack:.3g}")
        if self.envelope_rhs is not None:
            print(f"  envelope rhs {self.envelope_rhs:.6g}, envelopes hold: {self.envelopes_hold}")


def window_times(trajectory: MetricTrajectory, a: float, b: float) -> np.ndarray:
    """Stored times strictly inside [a, b] plus both ends"""
    if not a < b:
        raise ValueError(f"need a < b, got [{a}, {b}]")
    if not (trajectory.contains(a) and trajectory.contains(b)):
        raise ValueError(f"window [{a}, {b}] leaves the stage [{trajectory.start}, {trajectory.end}]")
    slack = time_slack(a, b)
    inner = [float(s) for s in trajectory.times if a + slack < s < b - slack]
    return np.array([float(a)] + inner + [float(b)])


def weak_inequality_check(trajectory: MetricTrajectory, psi: TestField,
                          window: Optional[Tuple[float, float]] = None, evolution_c: float = 0.0,
                          times: Optional[Sequence[float]] = None,
                          envelopes: Optional[Tuple[Envelope, Envelope]] = None) -> WeakInequalityReport:
    """Compare both sides of the integrated inequality on one stage window.

    `psi` is either a callable (s, manifold) -> grid field or an array of
    grid fields at `times`. Report-only: violations are recorded, never
    raised.
    """
    if times is None:
        a, b = (trajectory.start, trajectory.end) if window is None else window
        times = window_times(trajectory, a, b)
    times = np.asarray(times, dtype=float)
    manifolds = [trajectory.manifold_at(float(s)) for s in times]
    if callable(psi):
        fields = np.stack([np.asarray(psi(float(s), man), dtype=float) for s, man in zip(times, manifolds)])
    else:
        fields = np.asarray(psi, dtype=float)
        if fields.shape[0] != times.size:
            raise ValueError(f"{fields.shape[0]} test fields for {times.size} times")

    violations: List[Dict[str, Any]] = []
    if np.any(fields < 0.0):
        violations.append({"check": "psi >= 0", "cells": int(np.sum(fields < 0.0))})

    big_l = [np.exp(-evolution_c * s) * surface_ell(man.u, man.mask) for s, man in zip(times, manifolds)]
    weights = [lk * man.volumes * man.mask for lk, man in zip(big_l, manifolds)]
    lhs = float(np.sum(weights[-1] * fields[-1])) - float(np.sum(weights[0] * fields[0]))

    if envelopes is not None:
        u, v = (np.broadcast_to(np.asarray(e, dtype=float), fields.shape[1:]) for e in envelopes)
    rhs = envelope_rhs = 0.0
    envelopes_hold = None if envelopes is None else True
    for k in range(times.size - 1):
        man = manifolds[k]
        span = times[k + 1] - times[k]
        lap = man.laplacian_apply(fields[k])
        rate = (fields[k + 1] - fields[k]) / span
        rhs += span * float(np.sum(weights[k] * (lap + rate)))
        if envelopes is not None:
            envelope_rhs += span * float(np.sum(weights[k] * (u + v)))
            active = man.mask
            if np.any(lap[active] > u[active] + WEAK_ATOL) or np.any(rate[active] > v[active] + WEAK_ATOL):
                envelopes_hold = False

    report = WeakInequalityReport(window=(float(times[0]), float(times[-1])), evolution_c=float(evolution_c),
                                  lhs=lhs, rhs=rhs, samples=int(times.size),
                                  envelope_rhs=envelope_rhs if envelopes is not None else None,
                                  envelopes_hold=envelopes_hold, violations=violations)
    if lhs > rhs + report.tolerance:
        violations.append({"check": "integrated inequality", "lhs": lhs, "rhs": rhs})
    if envelopes is not None and lhs > envelope_rhs + report.tolerance:
        violations.append({"check": "envelope inequality", "lhs": lhs, "rhs": envelope_rhs})
    if envelopes_hold is False:
        logger.info("test field exceeds its envelopes on window %s", report.window)
    return report


def bump_test_field(centre: Tuple[float, float], radius: float) -> Callable[[float, DiscreteManifold], np.ndarray]:
    """Time-independent (1 - |y - centre|^2 / radius^2)^3, zero outside the flat radius and the mask"""
    cx, cy = centre

    def psi(s: float, man: DiscreteManifold) -> np.ndarray:
        grid = (np.arange(man.m) + 0.5) / man.m
        dx = np.abs(grid[:, None] - cx)
        dy = np.abs(grid[None, :] - cy)
        dist_sq = np.minimum(dx, 1.0 - dx) ** 2 + np.minimum(dy, 1.0 - dy) ** 2
        return np.where(man.mask, np.maximum(1.0 - dist_sq / radius ** 2, 0.0) ** 3, 0.0)

    return psi
