import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np

from distortion.distortion_report import DISTANCE_RTOL, Pair
from geometry.distances import pair_distances
from heat.metric_trajectory import MetricTrajectory
from shared.errors import NonConvergentLimitError
from shared.serialization import save_json

logger = logging.getLogger(__name__)

LADDER_RATIO = 0.5
LIMIT_TOL = 1e-5
MAX_RUNGS = 60


@dataclass
class LimitMetric:
    """d_0 = lim_{t -> 0} d_t on a set of pairs, with its sandwich constants"""
    pairs: List[Pair]
    d0: np.ndarray
    ladder: List[float]
    corrected: np.ndarray  # (pairs, rungs): d_t + beta sqrt(C) sqrt(t)
    increments: List[float]
    rungs_ok: bool
    gamma: Optional[float]
    k: float
    exponent: float
    sandwich_ok: bool
    violations: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pairs": [[list(x), list(y)] for x, y in self.pairs],
            "d0": self.d0,
            "ladder": self.ladder,
            "increments": self.increments,
            "rungs_ok": self.rungs_ok,
            "gamma": self.gamma,
            "K": self.k,
            "exponent": self.exponent,
            "sandwich_ok": self.sandwich_ok,
            "violations": self.violations,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())


def time_ladder(t_max: float, t_min: float, ratio: float = LADDER_RATIO) -> List[float]:
    """t_max, ratio t_max, ... down to and including t_min"""
    if not 0.0 < t_min <= t_max:
        raise ValueError(f"need 0 < t_min <= t_max, got t_min={t_min}, t_max={t_max}")
    ladder = [t_max]
    while ladder[-1] * ratio > t_min and len(ladder) < MAX_RUNGS:
        ladder.append(ladder[-1] * ratio)
    if ladder[-1] > t_min:
        ladder.append(t_min)
    return ladder


def limit_metric(trajectory: MetricTrajectory, t_min: float, pairs: Sequence[Pair],
                 beta_sqrt_c: float = 0.0, c: Optional[float] = None, n: int = 2,
                 ratio: float = LADDER_RATIO, tol: float = LIMIT_TOL,
                 sample_times: Optional[Sequence[float]] = None) -> LimitMetric:
    """Extrapolate d_0 through the corrected ladder d_t + beta sqrt(C) sqrt(t).

    The corrected values are non-increasing as t decreases whenever the
    shrinking estimate holds, so they converge; the last increment must be
    below `tol` or NonConvergentLimitError is raised. The sandwich
    gamma d_0^{1 + 2 (n - 1) C} <= d_t <= e^{K t} d_0 is then fitted on
    `sample_times` (default: the ladder).
    """
    t_max = trajectory.end
    ladder = time_ladder(t_max, max(t_min, trajectory.start), ratio)
    pairs = [(tuple(x), tuple(y)) for x, y in pairs]
    raw = np.column_stack([pair_distances(trajectory.manifold_at(t), pairs) for t in ladder])
    corrected = raw + beta_sqrt_c * np.sqrt(np.array(ladder))[None, :]

    increments = [float(np.max(np.abs(corrected[:, i] - corrected[:, i + 1])))
                  for i in range(len(ladder) - 1)]
    violations: List[Dict[str, Any]] = []
    rungs_ok = True
    for i in range(len(ladder) - 1):
        allowed = beta_sqrt_c * (np.sqrt(ladder[i]) - np.sqrt(ladder[i + 1]))
        grown = raw[:, i + 1] - raw[:, i]
        bad = np.flatnonzero(grown > allowed + DISTANCE_RTOL * raw[:, i])
        if bad.size:
            rungs_ok = False
            violations.extend({"check": "rung", "pair": int(p), "t": ladder[i + 1]} for p in bad)
    if increments and increments[-1] > tol:
        raise NonConvergentLimitError(
            f"ladder not Cauchy: last increment {increments[-1]:.3e} exceeds {tol:g} at t={ladder[-1]:g}")
    d0 = corrected[:, -1]

    c = trajectory.curvature_decay() if c is None else float(c)
    exponent = 1.0 + 2.0 * (n - 1) * c
    times = ladder if sample_times is None else [float(t) for t in sample_times]
    sampled = np.column_stack([pair_distances(trajectory.manifold_at(t), pairs) for t in times])
    positive = d0 > 0.0
    gamma = float(np.min(sampled[positive] / d0[positive, None] ** exponent)) if positive.any() else None
    k = 0.0
    for j, t in enumerate(times):
        if t > 0.0 and positive.any():
            k = max(k, float(np.max(np.log(sampled[positive, j] / d0[positive]))) / t)
    sandwich_ok = True
    if gamma is not None:
        for j, t in enumerate(times):
            upper = np.exp(k * t) * d0[positive] * (1.0 + DISTANCE_RTOL)
            lower = gamma * d0[positive] ** exponent * (1.0 - DISTANCE_RTOL)
            if np.any(sampled[positive, j] > upper) or np.any(sampled[positive, j] < lower):
                sandwich_ok = False
                violations.append({"check": "sandwich", "t": float(t)})
    logger.debug("limit metric: gamma=%s K=%g increments=%s", gamma, k, increments)
    return LimitMetric(pairs=pairs, d0=d0, ladder=ladder, corrected=corrected, increments=increments,
                       rungs_ok=rungs_ok, gamma=gamma, k=k, exponent=exponent, sandwich_ok=sandwich_ok,
                       violations=violations)
