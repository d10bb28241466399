import logging
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse.csgraph import dijkstra

from geometry.discrete_manifold import Cell, DiscreteManifold
from shared.errors import UnreachableError

logger = logging.getLogger(__name__)


def distance_field(man: DiscreteManifold, source: Cell, limit: float = np.inf) -> np.ndarray:
    """Path distance from `source` to every cell; inf outside the mask or beyond `limit`"""
    position = man.require_active(source)
    dist = dijkstra(man.path_graph, directed=False, indices=position, limit=limit)
    return man.to_grid(dist, fill=np.inf)


def distance_to_set(man: DiscreteManifold, sources: np.ndarray, limit: float = np.inf) -> np.ndarray:
    """Distance to the nearest active cell of the boolean grid `sources`"""
    sources = np.asarray(sources, dtype=bool) & man.mask
    positions = man.index_map[np.flatnonzero(sources.ravel())]
    if positions.size == 0:
        return np.full(man.u.shape, np.inf)
    dist = dijkstra(man.path_graph, directed=False, indices=positions, limit=limit, min_only=True)
    return man.to_grid(dist, fill=np.inf)


def geodesic_distance(man: DiscreteManifold, x: Cell, y: Cell) -> float:
    man.require_active(y)
    value = float(distance_field(man, x)[tuple(np.mod(y, man.m))])
    if not np.isfinite(value):
        raise UnreachableError(f"cells {tuple(x)} and {tuple(y)} lie in different components of the mask")
    return value


def pairwise_distances(man: DiscreteManifold, cells: Sequence[Cell]) -> np.ndarray:
    """Distance matrix between the given active cells"""
    positions = [man.require_active(c) for c in cells]
    dist = dijkstra(man.path_graph, directed=False, indices=positions)
    return dist[:, positions]


def pair_distances(man: DiscreteManifold, pairs: Sequence[Tuple[Cell, Cell]]) -> np.ndarray:
    """d(x, y) for each pair, one Dijkstra run per distinct first cell"""
    if not pairs:
        return np.zeros(0)
    firsts = [man.require_active(x) for x, _ in pairs]
    seconds = [man.require_active(y) for _, y in pairs]
    sources, rows = np.unique(firsts, return_inverse=True)
    dist = dijkstra(man.path_graph, directed=False, indices=sources)
    return dist[rows, seconds]


def metric_ball(man: DiscreteManifold, x: Cell, r: float) -> np.ndarray:
    """Boolean grid of active cells within path distance r of x"""
    if r < 0:
        raise ValueError(f"ball radius must be non-negative, got {r}")
    return distance_field(man, x, limit=r) <= r


def ball_volume(man: DiscreteManifold, x: Cell, r: float) -> float:
    return man.integrate(1.0, metric_ball(man, x, r))


def boundary_distance(man: DiscreteManifold, region: np.ndarray) -> np.ndarray:
    """Distance from each cell of `region` to the interface with the rest of the domain.

    The interface sits half a cell beyond the last region cell, so cells next
    to it get half their own width. Returns inf everywhere when the region
    covers the whole active domain.
    """
    region = np.asarray(region, dtype=bool) & man.mask
    outside = man.mask & ~region
    if not outside.any():
        logger.info("region covers the whole domain, it has no boundary")
        return np.full(man.u.shape, np.inf)
    half_width = 0.5 * man.h * np.exp(0.5 * man.u)
    to_outside = distance_to_set(man, outside)
    dist = np.maximum(to_outside - half_width, half_width)
    return np.where(region, dist, 0.0)


def sample_pairs(man: DiscreteManifold, count: int, rng: np.random.Generator,
                 region: Optional[np.ndarray] = None) -> Iterable[tuple]:
    """Distinct random pairs of active cells (optionally restricted to `region`)"""
    allowed = man.mask if region is None else np.asarray(region, dtype=bool) & man.mask
    flat = np.flatnonzero(allowed.ravel())
    if flat.size < 2:
        return []
    pairs = []
    for _ in range(count):
        a, b = rng.choice(flat, size=2, replace=False)
        pairs.append((man.cell_of(a), man.cell_of(b)))
    return pairs
