import logging
from typing import List

import numpy as np

from geometry.discrete_manifold import Cell, DiscreteManifold
from geometry.distances import distance_field

logger = logging.getLogger(__name__)


def maximal_separated_set(man: DiscreteManifold, region: np.ndarray, eps: float) -> List[Cell]:
    """Greedy maximal eps-separated subset of `region`.

    Cells are visited in row-major order. A cell is taken when it lies at
    distance >= eps from every point taken so far, so the result is
    pairwise eps-separated and every region cell ends up within eps of it.
    """
    if eps <= 0.0:
        raise ValueError(f"separation must be positive, got {eps}")
    region = np.asarray(region, dtype=bool) & man.mask
    if not region.any():
        raise ValueError("region has no active cells")
    covered = np.zeros_like(region)
    centres: List[Cell] = []
    for flat in np.flatnonzero(region.ravel()):
        cell = man.cell_of(int(flat))
        if covered[cell]:
            continue
        centres.append(cell)
        covered |= distance_field(man, cell, limit=eps) < eps
    logger.debug("%d centres at separation %g", len(centres), eps)
    return centres
