"""Distance distortion along a metric trajectory.

Three lower-bound estimates are audited on sampled pairs:

    expanding:  d_t <= e^{K (t - s)} d_s                 (Ric >= -K)
    shrinking:  d_t >= d_s - beta sqrt(c0) (sqrt t - sqrt s)   (|Rm| <= c0 / t)
    Hoelder:    d_t >= gamma d_0^{1 + 2 (n - 1) c0}

beta sqrt(c0) and gamma are fitted as the smallest constants that work. The
shrinking estimate is audited against a configured beta when one is given
(shrinking_beta gives the value integrated from the distance derivative
bound) and against the fitted slope otherwise. The Hoelder bound is also
checked in the two regimes split at t0 = (d_0 / (2 beta))^2 / c0: retention
d_t >= d_0 / 2 before t0 and power decay d_t >= d_{t0} (t0 / t)^{(n - 1) c0}
after it.
"""
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from flows.conformal_surface import gauss_curvature
from geometry.discrete_manifold import Cell
from geometry.distances import pair_distances, sample_pairs
from heat.metric_trajectory import MetricTrajectory
from shared.serialization import save_json, write_csv

logger = logging.getLogger(__name__)

DISTORTION_SEED = 2024
DEFAULT_PAIRS = 200
DISTANCE_RTOL = 1e-9
HOELDER_BAND_CELLS = 20  # d_0 floor of the Hoelder fit: 2h times 10
HOELDER_BAND_MAX = 0.25

Pair = Tuple[Cell, Cell]


@dataclass
class DistortionReport:
    pairs: List[Pair]
    times: List[float]
    series: np.ndarray  # (pairs, times)
    k: float
    c0: float
    beta_sqrt_c0: float
    audited_slope: float
    beta: Optional[float]
    gamma: Optional[float]
    exponent: float
    hypotheses_met: bool
    violations: List[Dict[str, Any]] = field(default_factory=list)
    skipped: int = 0
    regime_counts: Dict[str, int] = field(default_factory=dict)
    band_pairs: int = 0
    execution_time: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pair_count": len(self.pairs),
            "times": self.times,
            "K": self.k,
            "c0": self.c0,
            "beta_sqrt_c0": self.beta_sqrt_c0,
            "audited_slope": self.audited_slope,
            "beta": self.beta,
            "gamma": self.gamma,
            "exponent": self.exponent,
            "hypotheses_met": self.hypotheses_met,
            "violations": self.violations,
            "skipped": self.skipped,
            "regime_counts": self.regime_counts,
            "band_pairs": self.band_pairs,
        }

    def to_frame(self) -> pd.DataFrame:
        """Long table: one row per (pair, time)"""
        rows = []
        for p, (x, y) in enumerate(self.pairs):
            for j, t in enumerate(self.times):
                rows.append({"pair": p, "x_row": x[0], "x_col": x[1], "y_row": y[0], "y_col": y[1],
                             "t": t, "distance": float(self.series[p, j])})
        return pd.DataFrame(rows, columns=["pair", "x_row", "x_col", "y_row", "y_col", "t", "distance"])

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def save_series(self, path: Union[str, Path]) -> Path:
        return write_csv(path, self.to_frame(), description="pair distance series")

    def display(self):
        print(f"pairs: {len(self.pairs)} (skipped {self.skipped}), times: {len(self.times)}")
        print(f"beta sqrt(c0) = {self.beta_sqrt_c0:.6g} (audited {self.audited_slope:.6g}), gamma = {self.gamma}, "
              f"exponent = {self.exponent:.6g}, Hoelder band pairs = {self.band_pairs}")
        print(f"hypotheses met: {self.hypotheses_met}, violations: {len(self.violations)}")


def _hypotheses(trajectory: MetricTrajectory, times: Sequence[float], k: float, c0: float,
                region: np.ndarray) -> bool:
    """Ric >= -K and t |Rm| <= c0 on the region at every sampled time"""
    met = True
    for t in times:
        gauss = gauss_curvature(trajectory.field_at(t), mask=trajectory.mask)[region]
        if np.min(gauss) < -k * (1.0 + DISTANCE_RTOL) - 1e-12:
            logger.info("Ric >= -K fails at t=%g (min %g)", t, np.min(gauss))
            met = False
        if t > 0.0 and t * np.max(np.abs(gauss)) > c0 * (1.0 + DISTANCE_RTOL) + 1e-12:
            logger.info("|Rm| <= c0/t fails at t=%g", t)
            met = False
    return met


def _controlled_pairs(pairs: Sequence[Pair], region: np.ndarray) -> Tuple[List[Pair], int]:
    kept = [(tuple(x), tuple(y)) for x, y in pairs if region[tuple(x)] and region[tuple(y)]]
    skipped = len(pairs) - len(kept)
    if skipped:
        logger.info("%d pairs leave the controlled region and are skipped", skipped)
    return kept, skipped


def verify_distortion(trajectory: MetricTrajectory, k: Optional[float] = None, c0: Optional[float] = None,
                      samples: Union[int, Sequence[Pair]] = DEFAULT_PAIRS, times: Optional[Sequence[float]] = None,
                      beta: Optional[float] = None, region: Optional[np.ndarray] = None, n: int = 2,
                      seed: int = DISTORTION_SEED) -> DistortionReport:
    """Audit the expanding, shrinking and Hoelder estimates on sampled pairs.

    `k` and `c0` default to the trajectory's own lower Ricci bound and
    curvature decay. The shrinking estimate is audited against beta sqrt(c0)
    when `beta` is given and against the fitted slope otherwise.
    """
    started = time.time()
    times = list(trajectory.times) if times is None else sorted(float(t) for t in times)
    if trajectory.is_static and len(times) == 1:
        times = [trajectory.start, trajectory.end]
    man0 = trajectory.manifold_at(times[0])
    region = man0.mask if region is None else np.asarray(region, dtype=bool) & man0.mask
    if isinstance(samples, int):
        pairs = list(sample_pairs(man0, samples, np.random.default_rng(seed), region))
    else:
        pairs = list(samples)
    pairs, skipped = _controlled_pairs(pairs, region)

    if k is None:
        k = max(max(0.0, -float(np.min(gauss_curvature(trajectory.field_at(t), mask=trajectory.mask)[region])))
                for t in times)
    c0 = trajectory.curvature_decay() if c0 is None else float(c0)
    hypotheses_met = _hypotheses(trajectory, times, k, c0, region)
    exponent = 1.0 + 2.0 * (n - 1) * c0

    series = np.column_stack([pair_distances(trajectory.manifold_at(t), pairs) for t in times]) \
        if pairs else np.zeros((0, len(times)))
    violations: List[Dict[str, Any]] = []

    windows = [(a, b) for a in range(len(times)) for b in range(a + 1, len(times))]
    slope = 0.0
    for a, b in windows:
        s, t = times[a], times[b]
        ds, dt_ = series[:, a], series[:, b]
        grown = dt_ > np.exp(k * (t - s)) * ds * (1.0 + DISTANCE_RTOL)
        for p in np.flatnonzero(grown):
            violations.append({"estimate": "expanding", "pair": int(p), "s": s, "t": t})
        gap = np.sqrt(max(t, 0.0)) - np.sqrt(max(s, 0.0))
        if gap > 0.0 and ds.size:
            slope = max(slope, float(np.max((ds - dt_) / gap)))

    audited_slope = beta * np.sqrt(c0) if beta is not None else slope
    for a, b in windows:
        s, t = times[a], times[b]
        ds, dt_ = series[:, a], series[:, b]
        allowed = ds - audited_slope * (np.sqrt(max(t, 0.0)) - np.sqrt(max(s, 0.0)))
        for p in np.flatnonzero(dt_ < allowed - DISTANCE_RTOL * ds):
            violations.append({"estimate": "shrinking", "pair": int(p), "s": s, "t": t})
    fitted_beta = beta if beta is not None else (slope / np.sqrt(c0) if c0 > 0.0 else None)

    gamma: Optional[float] = None
    regimes = {"retention": 0, "power_decay": 0}
    band_pairs = 0
    if pairs:
        d0 = series[:, 0]
        band = (d0 >= HOELDER_BAND_CELLS * man0.h) & (d0 <= HOELDER_BAND_MAX)
        band_pairs = int(np.count_nonzero(band))
        if band.any():
            ratios = series[band] / d0[band, None] ** exponent
            gamma = float(np.min(ratios))
            for p in np.flatnonzero(band):
                violations.extend(_regime_audit(int(p), d0[p], series[p], times, fitted_beta, c0, n, regimes))
        else:
            logger.info("no pair has d_0 in the Hoelder band [%g, %g]", HOELDER_BAND_CELLS * man0.h,
                        HOELDER_BAND_MAX)

    report = DistortionReport(pairs=pairs, times=[float(t) for t in times], series=series, k=float(k),
                              c0=c0, beta_sqrt_c0=max(slope, 0.0), audited_slope=float(audited_slope),
                              beta=fitted_beta, gamma=gamma, exponent=exponent, hypotheses_met=hypotheses_met,
                              violations=violations, skipped=skipped, regime_counts=regimes,
                              band_pairs=band_pairs, execution_time=time.time() - started)
    logger.debug("distortion fit: %s", report.to_dict())
    return report


def split_time(d0: float, beta: float, c0: float) -> float:
    """t0 = (d_0 / (2 beta))^2 / c0, the end of the retention regime"""
    return (d0 / (2.0 * beta)) ** 2 / c0


def _regime_audit(p: int, d0: float, distances: np.ndarray, times: Sequence[float], beta: Optional[float],
                  c0: float, n: int, counts: Dict[str, int]) -> List[Dict[str, Any]]:
    t0 = split_time(d0, beta, c0) if beta and c0 > 0.0 else np.inf
    found = []
    anchor: Optional[Tuple[float, float]] = None
    for t, d in zip(times, distances):
        if t <= t0:
            counts["retention"] += 1
            anchor = (t, d)
            if d < 0.5 * d0 * (1.0 - DISTANCE_RTOL):
                found.append({"estimate": "hoelder-retention", "pair": p, "t": float(t), "t0": float(t0)})
        else:
            counts["power_decay"] += 1
            if anchor is None or anchor[0] <= 0.0:
                continue
            floor = anchor[1] * (anchor[0] / t) ** ((n - 1) * c0)
            if d < floor * (1.0 - DISTANCE_RTOL):
                found.append({"estimate": "hoelder-decay", "pair": p, "t": float(t), "t0": float(t0)})
    return found


def shrinking_beta(n: int = 2) -> float:
    """beta for which d_s - d_t <= beta sqrt(c0) (sqrt t - sqrt s) follows from |Rm| <= c0 / t.

    The distance derivative is at least -(n - 1)(2 r K / 3 + 1 / r) with
    K = c0 / t; the best radius r = sqrt(3 t / (2 c0)) gives the rate
    -2 (n - 1) sqrt(2 / 3) sqrt(c0 / t), which integrates to this beta.
    """
    if n < 2:
        raise ValueError(f"need n >= 2, got {n}")
    return 4.0 * (n - 1) * np.sqrt(2.0 / 3.0)
