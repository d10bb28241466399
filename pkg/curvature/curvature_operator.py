"""Algebraic curvature operators on the space of 2-vectors.

Basis convention: the unit bivectors e_i^e_j with i < j in lexicographic
order. The (ij),(kl) entry of `lambda2_matrix` is R_ijkl in an orthonormal
frame, with R_ijij the sectional curvature of the (i,j) plane. In this
normalization the unit sphere has the identity matrix and scal = n(n-1).
"""
from dataclasses import dataclass
from functools import cached_property
from typing import Dict, List, Tuple

import numpy as np

from shared.errors import InvalidDimensionError, UnsupportedFactorError
from shared.serialization import fmt17

SYMMETRY_TOL = 1e-12


def bivector_dim(n: int) -> int:
    return n * (n - 1) // 2


def bivector_pairs(n: int) -> List[Tuple[int, int]]:
    return [(i, j) for i in range(n) for j in range(i + 1, n)]


def wedge(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Bivector coordinates of a^b in the unit basis; batched over leading axes"""
    n = a.shape[-1]
    iu, ju = np.triu_indices(n, 1)
    return a[..., iu] * b[..., ju] - a[..., ju] * b[..., iu]


def bivector_to_matrix(theta: np.ndarray, n: int) -> np.ndarray:
    """Antisymmetric n x n matrix with upper triangle theta; batched"""
    iu, ju = np.triu_indices(n, 1)
    out = np.zeros(theta.shape[:-1] + (n, n))
    out[..., iu, ju] = theta
    out[..., ju, iu] = -theta
    return out


@dataclass(frozen=True, eq=False)
class CurvatureOperator:
    dim: int
    lambda2_matrix: np.ndarray

    def __post_init__(self):
        if self.dim < 2:
            raise InvalidDimensionError(f"dimension must be at least 2, got {self.dim}")
        matrix = np.array(self.lambda2_matrix, dtype=float)
        size = bivector_dim(self.dim)
        if matrix.shape != (size, size):
            raise InvalidDimensionError(
                f"expected a {size}x{size} matrix for n={self.dim}, got {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, "lambda2_matrix", matrix)

    @property
    def size(self) -> int:
        return bivector_dim(self.dim)

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.lambda2_matrix)

    @cached_property
    def eigensystem(self) -> Tuple[np.ndarray, np.ndarray]:
        return np.linalg.eigh(self.lambda2_matrix)

    def norm(self) -> float:
        """Operator norm, the largest |eigenvalue|"""
        return float(np.max(np.abs(self.eigenvalues)))

    def symmetry_defect(self) -> float:
        return float(np.max(np.abs(self.lambda2_matrix - self.lambda2_matrix.T)))

    def __add__(self, other: "CurvatureOperator") -> "CurvatureOperator":
        _check_same_dim(self, other)
        return CurvatureOperator(self.dim, self.lambda2_matrix + other.lambda2_matrix)

    def __sub__(self, other: "CurvatureOperator") -> "CurvatureOperator":
        _check_same_dim(self, other)
        return CurvatureOperator(self.dim, self.lambda2_matrix - other.lambda2_matrix)

    def scaled(self, c: float) -> "CurvatureOperator":
        return CurvatureOperator(self.dim, c * self.lambda2_matrix)

    def shifted(self, eps: float) -> "CurvatureOperator":
        """Rm + eps * I"""
        return CurvatureOperator(self.dim, self.lambda2_matrix + eps * np.eye(self.size))

    def bivector_form(self, a: np.ndarray, b: np.ndarray, c: np.ndarray, d: np.ndarray) -> np.ndarray:
        """R(a, b, c, d), batched over leading axes of the vectors"""
        left = wedge(a, b)
        right = wedge(c, d)
        return np.einsum('...p,pq,...q->...', left, self.lambda2_matrix, right)


def _check_same_dim(a: CurvatureOperator, b: CurvatureOperator):
    if a.dim != b.dim:
        raise InvalidDimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")


def make_identity_operator(n: int) -> CurvatureOperator:
    if n < 2:
        raise InvalidDimensionError(f"dimension must be at least 2, got {n}")
    return CurvatureOperator(n, np.eye(bivector_dim(n)))


def zero_operator(n: int) -> CurvatureOperator:
    return CurvatureOperator(n, np.zeros((bivector_dim(n), bivector_dim(n))))


def riemann_tensor(rm: CurvatureOperator) -> np.ndarray:
    """Full 4-tensor R[i, j, k, l] from the bivector matrix"""
    n = rm.dim
    tensor = np.zeros((n, n, n, n))
    pairs = bivector_pairs(n)
    for p, (i, j) in enumerate(pairs):
        for q, (k, l) in enumerate(pairs):
            value = rm.lambda2_matrix[p, q]
            tensor[i, j, k, l] = value
            tensor[j, i, k, l] = -value
            tensor[i, j, l, k] = -value
            tensor[j, i, l, k] = value
    return tensor


def from_riemann_tensor(n: int, tensor: np.ndarray) -> CurvatureOperator:
    pairs = bivector_pairs(n)
    matrix = np.empty((len(pairs), len(pairs)))
    for p, (i, j) in enumerate(pairs):
        for q, (k, l) in enumerate(pairs):
            matrix[p, q] = tensor[i, j, k, l]
    return CurvatureOperator(n, matrix)


def bianchi_defect(rm: CurvatureOperator) -> float:
    """max |R_ijkl + R_iklj + R_iljk| over all index quadruples"""
    tensor = riemann_tensor(rm)
    cyclic = (tensor
              + np.einsum('iklj->ijkl', tensor)
              + np.einsum('iljk->ijkl', tensor))
    return float(np.max(np.abs(cyclic)))


def scalar_curvature(rm: CurvatureOperator) -> float:
    """Sum over i != j of R_ijij, i.e. twice the trace of the bivector matrix"""
    return float(2.0 * np.trace(rm.lambda2_matrix))


def ricci_tensor(rm: CurvatureOperator) -> np.ndarray:
    """Ric_jl = sum_i R_ijil"""
    tensor = riemann_tensor(rm)
    ric = np.einsum('ijil->jl', tensor)
    return 0.5 * (ric + ric.T)


def product_with_flat_factor(rm: CurvatureOperator, k: int) -> CurvatureOperator:
    """Curvature operator of M x R^k; the flat directions are appended last"""
    if k not in (1, 2):
        raise UnsupportedFactorError(f"flat factor dimension must be 1 or 2, got {k}")
    n_out = rm.dim + k
    old_index = {pair: p for p, pair in enumerate(bivector_pairs(rm.dim))}
    new_pairs = bivector_pairs(n_out)
    keep = [(q, old_index[pair]) for q, pair in enumerate(new_pairs) if pair in old_index]
    matrix = np.zeros((len(new_pairs), len(new_pairs)))
    new_idx = np.array([q for q, _ in keep])
    old_idx = np.array([p for _, p in keep])
    matrix[np.ix_(new_idx, new_idx)] = rm.lambda2_matrix[np.ix_(old_idx, old_idx)]
    return CurvatureOperator(n_out, matrix)


def random_curvature_operator(n: int, rng: np.random.Generator, scale: float = 1.0) -> CurvatureOperator:
    """Random algebraic curvature operator.

    A Gaussian symmetric bivector matrix is lifted to a 4-tensor and the
    totally antisymmetric part (the first Bianchi defect) is removed.
    """
    size = bivector_dim(n)
    raw = rng.standard_normal((size, size)) * scale
    sym = 0.5 * (raw + raw.T)
    tensor = riemann_tensor(CurvatureOperator(n, sym))
    cyclic = (tensor
              + np.einsum('jkil->ijkl', tensor)
              + np.einsum('kijl->ijkl', tensor)) / 3.0
    projected = from_riemann_tensor(n, tensor - cyclic)
    matrix = projected.lambda2_matrix
    return CurvatureOperator(n, 0.5 * (matrix + matrix.T))


def operator_from_spectrum(n: int, eigenvalues: np.ndarray, rng: np.random.Generator = None) -> CurvatureOperator:
    """Diagonal (or randomly rotated, n = 3 only) operator with a given spectrum.

    For n <= 3 every symmetric bivector matrix satisfies the Bianchi identity,
    so a random orthogonal conjugation keeps it algebraic.
    """
    size = bivector_dim(n)
    values = np.asarray(eigenvalues, dtype=float)
    if values.shape != (size,):
        raise InvalidDimensionError(f"expected {size} eigenvalues for n={n}")
    matrix = np.diag(values)
    if rng is not None and n <= 3:
        q, _ = np.linalg.qr(rng.standard_normal((size, size)))
        matrix = q @ matrix @ q.T
        matrix = 0.5 * (matrix + matrix.T)
    return CurvatureOperator(n, matrix)


def to_record(rm: CurvatureOperator) -> Dict[str, object]:
    """Flat record: n, then upper-triangular entries row-major"""
    iu, ju = np.triu_indices(rm.size)
    return {"n": rm.dim, "entries": [fmt17(v) for v in rm.lambda2_matrix[iu, ju]]}


def from_record(record: Dict[str, object]) -> CurvatureOperator:
    n = int(record["n"])
    size = bivector_dim(n)
    values = np.array([float(v) for v in record["entries"]])
    iu, ju = np.triu_indices(size)
    matrix = np.zeros((size, size))
    matrix[iu, ju] = values
    matrix[ju, iu] = values
    return CurvatureOperator(n, matrix)
