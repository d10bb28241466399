"""Multi-start frame search for the isotropic curvature quantity.

For a frame E = (e1, e2, e3, e4) the quantity is

    R(e1,e3,e1,e3) + R(e1,e4,e1,e4) + R(e2,e3,e2,e3) + R(e2,e4,e2,e4) - 2 R(e1,e2,e3,e4).

The orthonormal search runs projected gradient descent on the Stiefel
manifold V_4(R^n) with a polar retraction. The complex-frame search reads
the same expression as R(z, w, zbar, wbar) with z = e1 + i e2, w = e3 + i e4,
where (e1, e2) and (e3, e4) only need unit length as stacked vectors.
"""
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from curvature.curvature_operator import CurvatureOperator, bivector_to_matrix, wedge
from shared.errors import DimensionTooSmallError

DEFAULT_RESTARTS = 64
DEFAULT_ITERATIONS = 200
DEFAULT_SEED = 20240607
MIN_STEP = 1e-12

# (coefficient, a, b, c, d): the term coefficient * R(E_a, E_b, E_c, E_d)
ISOTROPIC_TERMS = (
    (1.0, 0, 2, 0, 2),
    (1.0, 0, 3, 0, 3),
    (1.0, 1, 2, 1, 2),
    (1.0, 1, 3, 1, 3),
    (-2.0, 0, 1, 2, 3),
)


@dataclass(frozen=True)
class SearchBudget:
    restarts: int = DEFAULT_RESTARTS
    iterations: int = DEFAULT_ITERATIONS

    def __post_init__(self):
        if self.restarts < 1 or self.iterations < 1:
            raise ValueError("search budget must have at least one restart and one iteration")


@dataclass
class FrameSearchResult:
    value: float
    frame: np.ndarray
    restarts: int
    iterations: int


def isotropic_value(rm: CurvatureOperator, frames: np.ndarray) -> np.ndarray:
    """Quantity for a batch of frames of shape (B, n, 4)"""
    e = np.moveaxis(frames, -1, 0)
    total = np.zeros(frames.shape[0])
    for coef, a, b, c, d in ISOTROPIC_TERMS:
        total += coef * rm.bivector_form(e[a], e[b], e[c], e[d])
    return total


def isotropic_gradient(rm: CurvatureOperator, frames: np.ndarray) -> np.ndarray:
    """Euclidean gradient with respect to the frame entries, shape (B, n, 4)"""
    n = rm.dim
    e = np.moveaxis(frames, -1, 0)
    grad = np.zeros_like(e)
    matrix = rm.lambda2_matrix
    for coef, a, b, c, d in ISOTROPIC_TERMS:
        left = wedge(e[a], e[b])
        right = wedge(e[c], e[d])
        # d/dx of theta . (x ^ y) is hat(theta) y, d/dy is -hat(theta) x
        theta_right = bivector_to_matrix(right @ matrix, n)
        theta_left = bivector_to_matrix(left @ matrix, n)
        grad[a] += coef * np.einsum('zij,zj->zi', theta_right, e[b])
        grad[b] -= coef * np.einsum('zij,zj->zi', theta_right, e[a])
        grad[c] += coef * np.einsum('zij,zj->zi', theta_left, e[d])
        grad[d] -= coef * np.einsum('zij,zj->zi', theta_left, e[c])
    return np.moveaxis(grad, 0, -1)


def project_to_stiefel_tangent(frames: np.ndarray, grad: np.ndarray) -> np.ndarray:
    """G - E sym(E^T G)"""
    inner = np.einsum('zia,zib->zab', frames, grad)
    sym = 0.5 * (inner + np.swapaxes(inner, 1, 2))
    return grad - np.einsum('zia,zab->zib', frames, sym)


def polar_retraction(frames: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(frames, full_matrices=False)
    return u @ vt


def random_stiefel_frames(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    raw = rng.standard_normal((count, n, 4))
    q, r = np.linalg.qr(raw)
    signs = np.sign(np.einsum('zii->zi', r))
    signs[signs == 0] = 1.0
    return q * signs[:, None, :]


def _block_normalize(frames: np.ndarray) -> np.ndarray:
    out = frames.copy()
    for cols in ((0, 1), (2, 3)):
        block = out[:, :, cols]
        norm = np.sqrt(np.sum(block ** 2, axis=(1, 2)))
        out[:, :, cols] = block / norm[:, None, None]
    return out


def _project_to_sphere_tangent(frames: np.ndarray, grad: np.ndarray) -> np.ndarray:
    out = grad.copy()
    for cols in ((0, 1), (2, 3)):
        block = frames[:, :, cols]
        radial = np.sum(block * grad[:, :, cols], axis=(1, 2))
        out[:, :, cols] = grad[:, :, cols] - radial[:, None, None] * block
    return out


def random_complex_frames(rng: np.random.Generator, count: int, n: int) -> np.ndarray:
    return _block_normalize(rng.standard_normal((count, n, 4)))


def _descend(rm: CurvatureOperator, frames: np.ndarray, iterations: int,
             project, retract) -> Tuple[np.ndarray, np.ndarray]:
    """Projected descent with per-frame step halving on non-decrease"""
    values = isotropic_value(rm, frames)
    step = np.full(frames.shape[0], 0.5 / max(rm.norm(), 1e-12))
    for _ in range(iterations):
        active = step > MIN_STEP
        if not np.any(active):
            break
        direction = project(frames, isotropic_gradient(rm, frames))
        trial = retract(frames - step[:, None, None] * direction)
        trial_values = isotropic_value(rm, trial)
        improved = active & (trial_values < values)
        frames = np.where(improved[:, None, None], trial, frames)
        values = np.where(improved, trial_values, values)
        step = np.where(improved, 1.25 * step, 0.5 * step)
    return frames, values


def _search(rm: CurvatureOperator, budget: SearchBudget, rng: np.random.Generator,
            sampler, project, retract, chunk: int = 16) -> FrameSearchResult:
    best_value = np.inf
    best_frame: Optional[np.ndarray] = None
    remaining = budget.restarts
    while remaining > 0:
        count = min(chunk, remaining)
        frames = sampler(rng, count, rm.dim)
        frames, values = _descend(rm, frames, budget.iterations, project, retract)
        idx = int(np.argmin(values))
        if values[idx] < best_value:
            best_value = float(values[idx])
            best_frame = frames[idx]
        remaining -= count
    return FrameSearchResult(value=best_value, frame=best_frame,
                             restarts=budget.restarts, iterations=budget.iterations)


def search_isotropic_frame(rm: CurvatureOperator, budget: SearchBudget = SearchBudget(),
                           rng: Optional[np.random.Generator] = None) -> FrameSearchResult:
    if rm.dim < 4:
        raise DimensionTooSmallError(f"isotropic curvature needs dimension >= 4, got {rm.dim}")
    rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
    return _search(rm, budget, rng, random_stiefel_frames,
                   project_to_stiefel_tangent, polar_retraction)


def min_isotropic_curvature(rm: CurvatureOperator, budget: SearchBudget = SearchBudget(),
                            rng: Optional[np.random.Generator] = None) -> float:
    """Approximate minimum of the isotropic quantity over orthonormal 4-frames"""
    return search_isotropic_frame(rm, budget, rng).value


def search_complex_frame(rm: CurvatureOperator, budget: SearchBudget = SearchBudget(),
                         rng: Optional[np.random.Generator] = None) -> FrameSearchResult:
    rng = rng if rng is not None else np.random.default_rng(DEFAULT_SEED)
    return _search(rm, budget, rng, random_complex_frames,
                   _project_to_sphere_tangent, _block_normalize)


def min_isotropic_curvature_complex(rm: CurvatureOperator, budget: SearchBudget = SearchBudget(),
                                    rng: Optional[np.random.Generator] = None) -> float:
    """Minimum of R(z, w, zbar, wbar) over |z| = |w| = 1 in C^n.

    Nonnegative exactly on the cone that the product with R^2 makes
    isotropically nonnegative; the value itself is not comparable to the
    orthonormal search, only its sign is.
    """
    return search_complex_frame(rm, budget, rng).value
