"""Empirical constant fitting.

The estimates being checked carry constants that are only known to exist.
These helpers measure them: either the smallest value on a log-spaced grid
for which an inequality holds at every sample, or a log-log slope.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

CONSTANT_GRID = np.logspace(-1, 4, 501)


@dataclass
class SlopeFit:
    slope: float
    intercept: float
    relative_residual: float


def smallest_feasible_constant(feasible: Callable[[float], bool],
                               grid: np.ndarray = CONSTANT_GRID) -> Optional[float]:
    """Smallest grid value C with feasible(C) true.

    feasible must be monotone in C (false ... false true ... true). Returns
    None when even the largest grid value fails.
    """
    if not feasible(float(grid[-1])):
        logger.debug("no feasible constant up to %g", grid[-1])
        return None
    lo, hi = 0, len(grid) - 1
    if feasible(float(grid[0])):
        return float(grid[0])
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(float(grid[mid])):
            hi = mid
        else:
            lo = mid
    return float(grid[hi])


def fit_gaussian_constant(values: np.ndarray, prefactor_time: np.ndarray,
                          dist_sq: np.ndarray, exp_time: np.ndarray, n: int,
                          grid: np.ndarray = CONSTANT_GRID,
                          rtol: float = 1e-12) -> Optional[float]:
    """Smallest C with values <= C / T^{n/2} * exp(-d^2 / (C * S)) at every sample.

    T is `prefactor_time` and S is `exp_time`; both are arrays matching
    `values`. The bound is increasing in C, so the grid search applies.
    """
    values = np.asarray(values, dtype=float)
    prefactor_time = np.asarray(prefactor_time, dtype=float)
    dist_sq = np.asarray(dist_sq, dtype=float)
    exp_time = np.asarray(exp_time, dtype=float)

    def feasible(c: float) -> bool:
        bound = c / prefactor_time ** (n / 2.0) * np.exp(-dist_sq / (c * exp_time))
        return bool(np.all(values <= bound * (1.0 + rtol) + 1e-300))

    return smallest_feasible_constant(feasible, grid)


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> SlopeFit:
    """Least-squares slope of log(y) against log(x)"""
    lx = np.log(np.asarray(xs, dtype=float))
    ly = np.log(np.asarray(ys, dtype=float))
    if lx.size < 2:
        raise ValueError("need at least two points for a slope")
    slope, intercept = np.polyfit(lx, ly, 1)
    predicted = slope * lx + intercept
    scale = max(float(np.max(np.abs(ly))), 1e-300)
    residual = float(np.max(np.abs(predicted - ly))) / scale
    return SlopeFit(slope=float(slope), intercept=float(intercept), relative_residual=residual)


def relative_spread(values: Sequence[float]) -> float:
    """(max - min) / mean of positive values; 0 for a single value"""
    arr = np.asarray(values, dtype=float)
    if arr.size < 2:
        return 0.0
    return float((arr.max() - arr.min()) / arr.mean())
