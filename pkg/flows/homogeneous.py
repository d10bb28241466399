"""Left-invariant metrics on unimodular 3-dimensional Lie groups.

A Milnor frame e1, e2, e3 has [e2,e3] = l1 e1, [e3,e1] = l2 e2, [e1,e2] = l3 e3
and the metric is A th1^2 + B th2^2 + C th3^2. The flow stays diagonal in
this frame, so it reduces to three coefficient ODEs.
"""
import logging
import math
from typing import Sequence, Tuple

import numpy as np

from curvature.curvature_operator import CurvatureOperator
from flows.flow_record import FlowKind, FlowRecord
from shared.errors import SingularityReachedError

logger = logging.getLogger(__name__)

SU2 = (2.0, 2.0, 2.0)


def orthonormal_structure(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> np.ndarray:
    """mu_i with [f_j, f_k] = mu_i f_i for the orthonormal frame f_i = e_i / sqrt(a_i)"""
    a, b, c = coeffs
    l1, l2, l3 = structure
    return np.array([
        l1 * math.sqrt(a / (b * c)),
        l2 * math.sqrt(b / (c * a)),
        l3 * math.sqrt(c / (a * b)),
    ])


def milnor_ricci(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> np.ndarray:
    """Principal Ricci curvatures in the orthonormal frame"""
    mu = orthonormal_structure(coeffs, structure)
    half = 0.5 * math.fsum(mu)
    m1, m2, m3 = half - mu[0], half - mu[1], half - mu[2]
    return np.array([2.0 * m2 * m3, 2.0 * m1 * m3, 2.0 * m1 * m2])


def milnor_sectional(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> np.ndarray:
    """Sectional curvatures (K12, K13, K23), the eigenvalues of Rm in that bivector order"""
    r1, r2, r3 = milnor_ricci(coeffs, structure)
    return np.array([
        0.5 * (r1 + r2 - r3),
        0.5 * (r1 + r3 - r2),
        0.5 * (r2 + r3 - r1),
    ])


def homogeneous_curvature(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> CurvatureOperator:
    return CurvatureOperator(3, np.diag(milnor_sectional(coeffs, structure)))


def homogeneous_rhs(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> np.ndarray:
    """d a_i / dt = -2 Ric(e_i, e_i) = -2 a_i r_i"""
    return -2.0 * np.asarray(coeffs) * milnor_ricci(coeffs, structure)


def _require_positive(coeffs: np.ndarray, last: np.ndarray, t: float):
    if not np.all(np.isfinite(coeffs)) or np.any(coeffs <= 0.0):
        raise SingularityReachedError(
            f"Milnor coefficients left the positive orthant near t={t}", last_state=last, last_time=t)


def step_homogeneous_flow(coeffs: np.ndarray, dt: float, structure: Sequence[float] = SU2,
                          t: float = 0.0) -> np.ndarray:
    """One classical RK4 step"""
    coeffs = np.asarray(coeffs, dtype=float)
    _require_positive(coeffs, coeffs, t)
    if dt == 0.0:
        return coeffs.copy()
    k1 = homogeneous_rhs(coeffs, structure)
    stage = coeffs + 0.5 * dt * k1
    _require_positive(stage, coeffs, t)
    k2 = homogeneous_rhs(stage, structure)
    stage = coeffs + 0.5 * dt * k2
    _require_positive(stage, coeffs, t)
    k3 = homogeneous_rhs(stage, structure)
    stage = coeffs + dt * k3
    _require_positive(stage, coeffs, t)
    k4 = homogeneous_rhs(stage, structure)
    result = coeffs + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    _require_positive(result, coeffs, t)
    return result


def integrate_homogeneous_flow(coeffs: np.ndarray, dt: float, steps: int,
                               structure: Sequence[float] = SU2) -> FlowRecord:
    """Fixed-step RK4 trajectory; stops at the last valid state before a singularity"""
    record = FlowRecord(kind=FlowKind.HOMOGENEOUS3,
                        params={"structure": list(structure), "initial": list(map(float, coeffs))},
                        dt=dt)
    state = np.asarray(coeffs, dtype=float)
    t = 0.0
    record.append(t, state, homogeneous_curvature(state, structure))
    for step in range(steps):
        try:
            state = step_homogeneous_flow(state, dt, structure, t)
        except SingularityReachedError as e:
            logger.info("homogeneous flow stopped at t=%g: %s", e.last_time, e)
            record.params["stopped_at"] = t
            break
        t = (step + 1) * dt
        record.append(t, state, homogeneous_curvature(state, structure))
    return record


def round_sphere_state(radius_sq: float = 1.0) -> np.ndarray:
    """SU(2) with equal coefficients: the round sphere with sectional curvature 1/a"""
    return np.full(3, float(radius_sq))


def berger_state(alpha0: float) -> np.ndarray:
    """Berger sphere (A, 1, 1) whose TwoNonneg ell equals alpha0 (needs alpha0 >= 0).

    Sectional curvatures are (A, A, 4 - 3A), so for A >= 2 the two lowest
    sum to 4 - 2A and ell = A - 2.
    """
    return np.array([2.0 + alpha0, 1.0, 1.0])


def left_invariant_curvature(structure_constants: np.ndarray) -> CurvatureOperator:
    """Curvature from orthonormal structure constants c[i, j, k] ([f_i, f_j] = c_ij^k f_k).

    Koszul: Gamma_ij^k = (c_ij^k - c_jk^i + c_ki^j) / 2, then
    R(f_i, f_j) f_l = grad_i grad_j f_l - grad_j grad_i f_l - grad_[f_i,f_j] f_l.
    Works for any dimension.
    """
    c = np.asarray(structure_constants, dtype=float)
    n = c.shape[0]
    gamma = 0.5 * (c - np.einsum('jki->ijk', c) + np.einsum('kij->ijk', c))
    # R[i, j, l, m] = <R(f_i, f_j) f_l, f_m>
    rlm = (np.einsum('jlk,ikm->ijlm', gamma, gamma)
           - np.einsum('ilk,jkm->ijlm', gamma, gamma)
           - np.einsum('ijk,klm->ijlm', c, gamma))
    # R_ijkl = <R(f_i, f_j) f_l, f_k>
    tensor = np.einsum('ijlk->ijkl', rlm)
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    matrix = np.array([[tensor[i, j, k, l] for (k, l) in pairs] for (i, j) in pairs])
    return CurvatureOperator(n, 0.5 * (matrix + matrix.T))


def milnor_structure_tensor(coeffs: np.ndarray, structure: Sequence[float] = SU2) -> np.ndarray:
    mu = orthonormal_structure(coeffs, structure)
    c = np.zeros((3, 3, 3))
    for (i, j, k), value in zip(((1, 2, 0), (2, 0, 1), (0, 1, 2)), mu):
        c[i, j, k] = value
        c[j, i, k] = -value
    return c


def exact_round_coefficient(a0: float, t: float) -> float:
    return a0 - 4.0 * t


def richardson_errors(coeffs: np.ndarray, horizon: float, step_counts: Tuple[int, ...],
                      reference_steps: int, structure: Sequence[float] = SU2) -> np.ndarray:
    """Terminal errors of RK4 at several step counts against a fine reference run"""
    reference = integrate_homogeneous_flow(coeffs, horizon / reference_steps, reference_steps,
                                           structure).state_at(-1)
    errors = []
    for count in step_counts:
        final = integrate_homogeneous_flow(coeffs, horizon / count, count, structure).state_at(-1)
        errors.append(float(np.max(np.abs(final - reference))))
    return np.array(errors)
