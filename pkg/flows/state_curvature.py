from typing import Sequence, Tuple, Union

import numpy as np

from curvature.curvature_operator import CurvatureOperator, make_identity_operator
from flows.conformal_surface import gauss_curvature
from flows.flow_record import FlowKind
from flows.homogeneous import SU2, homogeneous_curvature


def curvature_of_state(kind: FlowKind, state: np.ndarray, n: int = 3, k0: float = 1.0,
                       structure: Sequence[float] = SU2) -> Union[CurvatureOperator, np.ndarray]:
    """Curvature of one stored state.

    SpaceForm states hold the scale factor, Homogeneous3 states the Milnor
    coefficients, ConformalSurface states the grid field u; the surface
    result is the Gauss curvature field, one 1x1 operator per cell.
    """
    if kind is FlowKind.SPACE_FORM:
        return make_identity_operator(n).scaled(k0 / float(np.ravel(state)[0]))
    if kind is FlowKind.HOMOGENEOUS3:
        return homogeneous_curvature(np.asarray(state, dtype=float), structure)
    return gauss_curvature(np.asarray(state, dtype=float))


def surface_operator(gauss_field: np.ndarray, cell: Tuple[int, int]) -> CurvatureOperator:
    return CurvatureOperator(2, np.array([[float(gauss_field[cell])]]))
