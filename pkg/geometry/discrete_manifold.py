"""Cell-centred conformal metrics g = e^u g_flat on the periodic unit square.

A DiscreteManifold is an immutable value: the conformal field u on an m x m
torus plus an active mask standing for the current domain. Cells outside
the mask take no part in integrals, Laplacians or paths. Changing the mask
or the metric returns a new manifold.
"""
import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from scipy import sparse

from shared.errors import MaskedDomainError
from shared.serialization import save_grid_field

logger = logging.getLogger(__name__)

MIN_GRID = 4
AXIAL_STEPS = ((1, 0), (0, 1))
DIAGONAL_STEPS = ((1, 1), (1, -1))
FIVE_POINT_STEPS = ((1, 0), (-1, 0), (0, 1), (0, -1))

Cell = Tuple[int, int]


@dataclass(frozen=True, eq=False)
class DiscreteManifold:
    u: np.ndarray
    mask: Optional[np.ndarray] = None

    def __post_init__(self):
        u = np.array(self.u, dtype=float)
        if u.ndim != 2 or u.shape[0] != u.shape[1]:
            raise ValueError(f"conformal field must be square, got shape {u.shape}")
        if u.shape[0] < MIN_GRID:
            raise ValueError(f"grid needs at least {MIN_GRID} cells per side, got {u.shape[0]}")
        if not np.all(np.isfinite(u)):
            raise ValueError("conformal field has non-finite values")
        mask = np.ones(u.shape, dtype=bool) if self.mask is None else np.array(self.mask, dtype=bool)
        if mask.shape != u.shape:
            raise ValueError(f"mask shape {mask.shape} does not match grid {u.shape}")
        if not mask.any():
            raise ValueError("active mask is empty")
        u.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "mask", mask)

    @property
    def dim(self) -> int:
        return 2

    @property
    def m(self) -> int:
        return self.u.shape[0]

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @property
    def is_complete(self) -> bool:
        return bool(self.mask.all())

    @cached_property
    def volumes(self) -> np.ndarray:
        """Cell volumes e^u h^2, zero outside the mask"""
        vol = np.where(self.mask, np.exp(self.u) * self.h ** 2, 0.0)
        vol.setflags(write=False)
        return vol

    @property
    def total_volume(self) -> float:
        return float(self.volumes.sum())

    @cached_property
    def active_cells(self) -> np.ndarray:
        """Row-major flat indices of the active cells"""
        return np.flatnonzero(self.mask.ravel())

    @cached_property
    def index_map(self) -> np.ndarray:
        """Flat grid index -> position among active cells, -1 when inactive"""
        positions = np.full(self.m * self.m, -1, dtype=np.int64)
        positions[self.active_cells] = np.arange(self.active_cells.size)
        return positions

    def flat_index(self, cell: Cell) -> int:
        i, j = cell
        return (int(i) % self.m) * self.m + int(j) % self.m

    def cell_of(self, flat: int) -> Cell:
        return divmod(int(flat), self.m)

    def require_active(self, cell: Cell) -> int:
        """Position of `cell` among the active cells"""
        position = int(self.index_map[self.flat_index(cell)])
        if position < 0:
            raise MaskedDomainError(f"cell {tuple(cell)} is outside the active domain")
        return position

    def to_active(self, field: np.ndarray) -> np.ndarray:
        field = np.asarray(field, dtype=float)
        if field.shape == (self.active_cells.size,):
            return field
        if field.shape != self.u.shape:
            raise ValueError(f"field shape {field.shape} matches neither the grid nor the active cells")
        return field.ravel()[self.active_cells]

    def to_grid(self, values: np.ndarray, fill: float = 0.0) -> np.ndarray:
        out = np.full(self.m * self.m, fill, dtype=float)
        out[self.active_cells] = values
        return out.reshape(self.u.shape)

    def _neighbour_pairs(self, steps):
        """Active (a, b) position pairs linked by the given periodic steps"""
        rows, cols = np.divmod(self.active_cells, self.m)
        firsts, seconds, kinds = [], [], []
        for kind, (di, dj) in enumerate(steps):
            neighbour = ((rows + di) % self.m) * self.m + (cols + dj) % self.m
            linked = self.index_map[neighbour] >= 0
            firsts.append(np.flatnonzero(linked))
            seconds.append(self.index_map[neighbour[linked]])
            kinds.append(np.full(int(linked.sum()), kind))
        return np.concatenate(firsts), np.concatenate(seconds), np.concatenate(kinds)

    @cached_property
    def flat_stiffness(self) -> sparse.csr_matrix:
        """Unscaled 5-point graph Laplacian on the active cells (symmetric, rows sum to 0)"""
        n = self.active_cells.size
        a, b, _ = self._neighbour_pairs(FIVE_POINT_STEPS)
        off = sparse.coo_matrix((np.ones(a.size), (a, b)), shape=(n, n)).tocsr()
        degree = np.asarray(off.sum(axis=1)).ravel()
        return (off - sparse.diags(degree)).tocsr()

    @cached_property
    def laplacian_matrix(self) -> sparse.csr_matrix:
        """Laplace-Beltrami e^{-u} Lap0 restricted to the active cells"""
        scale = np.exp(-self.u.ravel()[self.active_cells]) / self.h ** 2
        return (sparse.diags(scale) @ self.flat_stiffness).tocsr()

    @cached_property
    def path_graph(self) -> sparse.csr_matrix:
        """8-neighbour edges with length h * mean(e^{u/2}), times sqrt(2) on diagonals"""
        n = self.active_cells.size
        half = np.exp(0.5 * self.u.ravel()[self.active_cells])
        a1, b1, _ = self._neighbour_pairs(AXIAL_STEPS)
        a2, b2, _ = self._neighbour_pairs(DIAGONAL_STEPS)
        axial = self.h * 0.5 * (half[a1] + half[b1])
        diagonal = np.sqrt(2.0) * self.h * 0.5 * (half[a2] + half[b2])
        rows = np.concatenate((a1, a2))
        cols = np.concatenate((b1, b2))
        weights = np.concatenate((axial, diagonal))
        return sparse.coo_matrix((weights, (rows, cols)), shape=(n, n)).tocsr()

    def laplacian_apply(self, f: np.ndarray) -> np.ndarray:
        """Laplace-Beltrami of a cell field, returned on the full grid (0 outside the mask)"""
        values = self.to_active(f)
        if not np.all(np.isfinite(values)):
            raise MaskedDomainError("field is undefined on part of the active domain")
        return self.to_grid(self.laplacian_matrix @ values)

    def gradient_norm(self, f: np.ndarray) -> np.ndarray:
        """Forward-difference |grad f|_g per cell; links leaving the mask count as zero"""
        field = self.to_grid(self.to_active(f))
        total = np.zeros_like(field)
        for axis in (0, 1):
            ahead = np.roll(field, -1, axis=axis)
            linked = self.mask & np.roll(self.mask, -1, axis=axis)
            total += np.where(linked, (ahead - field) ** 2, 0.0)
        return np.where(self.mask, np.sqrt(np.exp(-self.u) * total) / self.h, 0.0)

    def integrate(self, f: Union[np.ndarray, float], region: Optional[np.ndarray] = None) -> float:
        """Sum of f times cell volume over `region` (default: the whole active domain)"""
        if region is None:
            region = self.mask
        else:
            region = np.asarray(region, dtype=bool)
            if np.any(region & ~self.mask):
                raise MaskedDomainError("integration region leaves the active domain")
        values = np.broadcast_to(np.asarray(f, dtype=float), self.u.shape)
        return float(np.sum(values[region] * self.volumes[region]))

    def with_mask(self, mask: np.ndarray) -> "DiscreteManifold":
        """Same metric on a smaller domain (intersection with the current mask)"""
        return DiscreteManifold(self.u, np.asarray(mask, dtype=bool) & self.mask)

    def with_metric(self, u: np.ndarray) -> "DiscreteManifold":
        return DiscreteManifold(u, self.mask)

    def save(self, path: Union[str, Path]) -> Path:
        return save_grid_field(path, self.u, self.mask, self.h, {"field": "u"})


def flat_manifold(m: int, mask: Optional[np.ndarray] = None) -> DiscreteManifold:
    return DiscreteManifold(np.zeros((m, m)), mask)


def cell_centres(m: int) -> Tuple[np.ndarray, np.ndarray]:
    """Coordinates (x, y) of the cell centres, x along rows"""
    x = (np.arange(m) + 0.5) / m
    return np.meshgrid(x, x, indexing="ij")


def disk_mask(m: int, centre: Tuple[float, float] = (0.5, 0.5), radius: float = 0.25) -> np.ndarray:
    """Cells whose centre lies within the flat periodic distance `radius` of `centre`"""
    x, y = cell_centres(m)
    dx = np.abs(x - centre[0])
    dy = np.abs(y - centre[1])
    dx = np.minimum(dx, 1.0 - dx)
    dy = np.minimum(dy, 1.0 - dy)
    return dx ** 2 + dy ** 2 <= radius ** 2
