from dataclasses import dataclass
from typing import Iterable

import numpy as np

from curvature.curvature_operator import CurvatureOperator, make_identity_operator
from flows.flow_record import FlowKind, FlowRecord
from shared.errors import SingularTimeError


@dataclass
class SpaceFormSlice:
    scale: float
    sectional_curvature: float
    curvature: CurvatureOperator


def blowup_time(n: int, k0: float) -> float:
    if k0 <= 0:
        return float("inf")
    return 1.0 / (2.0 * (n - 1) * k0)


def exact_space_form_flow(n: int, k0: float, t: float) -> SpaceFormSlice:
    """g(t) = (1 - 2(n-1) K0 t) g0 for a metric of constant curvature K0"""
    scale = 1.0 - 2.0 * (n - 1) * k0 * t
    if scale <= 0.0:
        raise SingularTimeError(f"space form with K0={k0} is singular at t={t}",
                                blowup_time=blowup_time(n, k0))
    k = k0 / scale
    return SpaceFormSlice(scale=scale, sectional_curvature=k,
                          curvature=make_identity_operator(n).scaled(k))


def space_form_record(n: int, k0: float, times: Iterable[float]) -> FlowRecord:
    record = FlowRecord(kind=FlowKind.SPACE_FORM, params={"n": n, "K0": k0})
    for t in times:
        piece = exact_space_form_flow(n, k0, float(t))
        record.append(float(t), np.array([piece.scale]), piece.curvature)
    return record
