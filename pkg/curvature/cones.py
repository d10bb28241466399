from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np

from curvature.curvature_operator import CurvatureOperator, product_with_flat_factor
from curvature.isotropic import (SearchBudget, search_complex_frame,
                                 search_isotropic_frame)
from shared.errors import BracketFailureError

EIGEN_TOL = 1e-9
FRAME_TOL = 1e-6
CONE_SEED = 1729
ROUNDING_SLACK = 1e-12


class ConeKind(Enum):
    NONNEG_OPERATOR = "NonnegOperator"
    TWO_NONNEG = "TwoNonneg"
    WPIC2 = "WPIC2"
    WPIC1 = "WPIC1"

    @property
    def uses_frame_search(self) -> bool:
        return self in (ConeKind.WPIC2, ConeKind.WPIC1)

    @property
    def default_tol(self) -> float:
        return FRAME_TOL if self.uses_frame_search else EIGEN_TOL


@dataclass(frozen=True)
class ConeSpec:
    kind: ConeKind
    tol: Optional[float] = None
    budget: SearchBudget = field(default_factory=SearchBudget)
    seed: int = CONE_SEED

    def __post_init__(self):
        if isinstance(self.kind, str):
            object.__setattr__(self, "kind", ConeKind(self.kind))
        if self.tol is None:
            object.__setattr__(self, "tol", self.kind.default_tol)
        if self.tol < 0:
            raise ValueError(f"cone tolerance must be nonnegative, got {self.tol}")

    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    def with_tol(self, tol: float) -> "ConeSpec":
        return replace(self, tol=tol)


@dataclass
class MembershipResult:
    contains: bool
    margin: float
    witness: Optional[np.ndarray]
    evaluated_dim: int


@dataclass
class EllResult:
    value: float
    certificate: Dict[str, Any]
    method: str


class CurvatureCone(ABC):
    """One curvature condition, evaluated through its membership margin"""

    @abstractmethod
    def get_cone_name(self) -> str:
        pass

    @abstractmethod
    def margin(self, rm: CurvatureOperator, spec: ConeSpec) -> Tuple[float, Optional[np.ndarray], int]:
        """Signed margin (>= 0 inside the cone), witness and evaluated dimension"""
        pass

    def closed_form_ell(self, rm: CurvatureOperator) -> Optional[Tuple[float, Dict[str, Any]]]:
        return None


class NonnegOperatorCone(CurvatureCone):

    def get_cone_name(self) -> str:
        return ConeKind.NONNEG_OPERATOR.value

    def margin(self, rm, spec):
        values, vectors = rm.eigensystem
        return float(values[0]), vectors[:, 0], rm.dim

    def closed_form_ell(self, rm):
        values, vectors = rm.eigensystem
        return max(0.0, -float(values[0])), {"eigenvalues": values[:1], "eigenvectors": vectors[:, :1]}


class TwoNonnegCone(CurvatureCone):

    def get_cone_name(self) -> str:
        return ConeKind.TWO_NONNEG.value

    def margin(self, rm, spec):
        values, vectors = rm.eigensystem
        if rm.size == 1:
            return float(values[0]), vectors[:, 0], rm.dim
        return float(values[0] + values[1]), vectors[:, :2], rm.dim

    def closed_form_ell(self, rm):
        values, vectors = rm.eigensystem
        if rm.size == 1:
            return max(0.0, -float(values[0])), {"eigenvalues": values[:1], "eigenvectors": vectors[:, :1]}
        return (max(0.0, -0.5 * float(values[0] + values[1])),
                {"eigenvalues": values[:2], "eigenvectors": vectors[:, :2]})


class WeakPICCone(CurvatureCone):
    """Weakly PIC after the product with a flat factor of dimension k"""

    def __init__(self, kind: ConeKind, flat_dim: int):
        self.kind = kind
        self.flat_dim = flat_dim

    def get_cone_name(self) -> str:
        return self.kind.value

    def margin(self, rm, spec):
        product = product_with_flat_factor(rm, self.flat_dim)
        result = search_isotropic_frame(product, spec.budget, spec.rng())
        return result.value, result.frame, product.dim


CONE_REGISTRY: Dict[ConeKind, CurvatureCone] = {
    ConeKind.NONNEG_OPERATOR: NonnegOperatorCone(),
    ConeKind.TWO_NONNEG: TwoNonnegCone(),
    ConeKind.WPIC2: WeakPICCone(ConeKind.WPIC2, 2),
    ConeKind.WPIC1: WeakPICCone(ConeKind.WPIC1, 1),
}


def get_cone(rm: CurvatureOperator, kind: ConeKind) -> CurvatureCone:
    # Lambda^2 R^2 is one-dimensional: every condition reduces to K >= 0
    if rm.dim == 2:
        return CONE_REGISTRY[ConeKind.NONNEG_OPERATOR]
    return CONE_REGISTRY[kind]


def cone_contains(rm: CurvatureOperator, cone: ConeSpec) -> MembershipResult:
    margin, witness, evaluated_dim = get_cone(rm, cone.kind).margin(rm, cone)
    contains = margin >= -cone.tol
    return MembershipResult(contains=bool(contains), margin=margin,
                            witness=None if contains else witness,
                            evaluated_dim=evaluated_dim)


def complex_frame_contains(rm: CurvatureOperator, cone: ConeSpec) -> MembershipResult:
    """WPIC2 membership through the complex-frame parametrization"""
    if rm.dim == 2:
        return cone_contains(rm, cone)
    result = search_complex_frame(rm, cone.budget, cone.rng())
    contains = result.value >= -cone.tol
    return MembershipResult(contains=bool(contains), margin=result.value,
                            witness=None if contains else result.frame, evaluated_dim=rm.dim)


def ell(rm: CurvatureOperator, cone: ConeSpec, method: Optional[str] = None) -> EllResult:
    """Smallest eps >= 0 with Rm + eps * I in the cone.

    method=None uses the closed form where one exists; "bisection" forces
    the bracket search on [0, 1 + |lambda_min| * N]. Membership inside the
    bisection is evaluated without the cone's slack, and the bracket width
    is `cone.tol`.
    """
    strategy = get_cone(rm, cone.kind)
    if method != "bisection":
        closed = strategy.closed_form_ell(rm)
        if closed is not None:
            value, certificate = closed
            return EllResult(value=value, certificate=certificate, method="closed_form")

    # frame searches always reach 0 on degenerate frames, so keep a rounding-level slack
    slack = ROUNDING_SLACK * (1.0 + rm.norm()) if cone.kind.uses_frame_search else 0.0
    exact = cone.with_tol(slack)
    if cone_contains(rm, exact).contains:
        return EllResult(value=0.0, certificate={"bracket": (0.0, 0.0)}, method="bisection")

    lo = 0.0
    hi = 1.0 + abs(float(rm.eigenvalues[0])) * rm.size
    top = cone_contains(rm.shifted(hi), exact)
    if not top.contains:
        raise BracketFailureError(
            f"{strategy.get_cone_name()} membership fails at the bracket top eps={hi}")
    width = max(cone.tol, 1e-15)
    witness = None
    while hi - lo >= width:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        result = cone_contains(rm.shifted(mid), exact)
        if result.contains:
            hi = mid
        else:
            lo = mid
            witness = result.witness
    return EllResult(value=hi, certificate={"bracket": (lo, hi), "witness": witness},
                     method="bisection")


def ell_field(gauss_curvature: np.ndarray) -> np.ndarray:
    """Pointwise ell on a surface: all cones reduce to max(0, -K)"""
    return np.maximum(0.0, -np.asarray(gauss_curvature, dtype=float))
