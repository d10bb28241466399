"""Conformal completion of an open region of the grid.

The metric is blown up near the interface of the region U with the rest of
the domain, g~ = w^2 g with w = eta(d(x, dU) / rho):

    eta(s) = 1 / s                        s <= 1/2   (hyperbolic cusp)
    log eta interpolated by smoothstep    1/2 < s < 2
    eta(s) = 1                            s >= 2

so g~ = g on U_{2 rho} and g~ >= g everywhere. In the conformal field this
is u~ = u + 2 log w. The cusp is cut off by the grid: the half-cell next to
the interface is the closest the completed metric gets to the edge.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np

from flows.conformal_surface import gauss_curvature
from geometry.discrete_manifold import Cell, DiscreteManifold
from geometry.distances import boundary_distance, distance_field
from localization.cutoff import dilate, domain_edge
from localization.profiles import smoothstep
from shared.serialization import save_json

logger = logging.getLogger(__name__)

CUSP_END = 0.5
FLAT_START = 2.0
CUSP_CONSTANT = 1.0


def cusp_profile(s: np.ndarray) -> np.ndarray:
    """eta(s): c/s up to 1/2, 1 from 2 on, monotone in between"""
    s = np.asarray(s, dtype=float)
    safe = np.maximum(s, 1e-300)
    top = np.log(CUSP_CONSTANT / CUSP_END)
    blend = smoothstep((safe - CUSP_END) / (FLAT_START - CUSP_END))
    log_eta = np.where(safe <= CUSP_END, np.log(CUSP_CONSTANT / safe), top * (1.0 - blend))
    return np.where(safe >= FLAT_START, 1.0, np.exp(log_eta))


def conformal_completion(man: DiscreteManifold, region: np.ndarray, rho: float) -> DiscreteManifold:
    """Complete g on `region` by a cusp of scale rho; the result lives on `region` only"""
    if not 0.0 < rho <= 1.0:
        raise ValueError(f"completion scale must lie in (0, 1], got {rho}")
    region = np.asarray(region, dtype=bool) & man.mask
    if not region.any():
        raise ValueError("cannot complete an empty region")
    d = boundary_distance(man, region)
    if not np.any(np.isfinite(d[region])):
        logger.info("region has no boundary inside the domain, nothing to complete")
        return man.with_mask(region)
    w = np.where(region, cusp_profile(d / rho), 1.0)
    return DiscreteManifold(man.u + 2.0 * np.log(w), region)


@dataclass
class CompletionAudit:
    rho: float
    equal_on_core: bool
    dominates: bool
    core_cells: int
    collar_cells: int
    gamma_conf: Optional[float]
    boundary_ratio: Optional[float]

    @property
    def passed(self) -> bool:
        return self.equal_on_core and self.dominates

    def to_dict(self) -> Dict[str, Any]:
        return {
            "rho": self.rho,
            "equal_on_core": self.equal_on_core,
            "dominates": self.dominates,
            "core_cells": self.core_cells,
            "collar_cells": self.collar_cells,
            "gamma_conf": self.gamma_conf,
            "boundary_ratio": self.boundary_ratio,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())


def completion_core(man: DiscreteManifold, region: np.ndarray, rho: float) -> np.ndarray:
    """U_{2 rho}: cells of the region at distance >= 2 rho from its interface"""
    d = boundary_distance(man, region)
    return np.asarray(region, dtype=bool) & man.mask & (d >= FLAT_START * rho)


def audit_completion(original: DiscreteManifold, completed: DiscreteManifold, rho: float,
                     centre: Optional[Cell] = None) -> CompletionAudit:
    """Check g~ = g on U_{2 rho} and g~ >= g, and measure the collar curvature.

    gamma_conf is max |K~| rho^2 over the collar, leaving out the two layers
    next to the interface where the masked Laplacian is one-sided. With a
    centre, boundary_ratio compares the distance from it to the interface
    layer under g~ and under g.
    """
    region = completed.mask
    core = completion_core(original, region, rho)
    gap = completed.u - original.u
    equal_on_core = bool(np.all(gap[core] == 0.0))
    dominates = bool(np.all(gap[region] >= 0.0))

    edge = domain_edge(region)
    collar = region & ~core & ~dilate(edge)
    gamma: Optional[float] = None
    if collar.any():
        gauss = gauss_curvature(completed.u, completed.h, region)
        gamma = float(np.max(np.abs(gauss[collar]))) * rho ** 2

    ratio: Optional[float] = None
    if centre is not None and edge.any():
        plain = distance_field(original.with_mask(region), centre)[edge]
        blown = distance_field(completed, centre)[edge]
        ratio = float(np.min(blown) / np.min(plain))
    logger.debug("completion audit rho=%g gamma_conf=%s ratio=%s", rho, gamma, ratio)
    return CompletionAudit(rho=float(rho), equal_on_core=equal_on_core, dominates=dominates,
                           core_cells=int(core.sum()), collar_cells=int((region & ~core).sum()),
                           gamma_conf=gamma, boundary_ratio=ratio)
