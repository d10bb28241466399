import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np

from curvature.cones import ConeSpec, ell, ell_field
from curvature.curvature_operator import CurvatureOperator, scalar_curvature
from flows.flow_record import FlowRecord
from shared.serialization import save_json

logger = logging.getLogger(__name__)

ELL_ACTIVE = 1e-6


@dataclass
class AprioriReport:
    doubling_ok: bool
    doubling_window: float
    decay_constant: float
    ell_series: Dict[str, List[float]]
    times: List[float]
    evolution_C: Optional[float]
    c4: Optional[float]
    ell_lipschitz: float
    violations: List[Dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "doubling_ok": self.doubling_ok,
            "doubling_window": self.doubling_window,
            "decay_constant": self.decay_constant,
            "evolution_C": self.evolution_C,
            "c4": self.c4,
            "ell_lipschitz": self.ell_lipschitz,
            "times": self.times,
            "ell_series": self.ell_series,
            "violations": self.violations,
        }

    def save(self, path: Union[str, Path]) -> Path:
        return save_json(path, self.to_dict())

    def display(self):
        print(f"doubling ok: {self.doubling_ok} (t <= {self.doubling_window:.4g})")
        print(f"decay constant: {self.decay_constant:.6g}")
        print(f"evolution C: {self.evolution_C}")
        print(f"C4: {self.c4}")


def _ell_and_scal(flow: FlowRecord, index: int, cone: ConeSpec):
    curvature = flow.curvature_at(index)
    if isinstance(curvature, CurvatureOperator):
        return ell(curvature, cone).value, scalar_curvature(curvature)
    # surface: sup of ell over the grid, scal reported at the maximizing cell
    field_values = ell_field(curvature)
    cell = np.unravel_index(int(np.argmax(field_values)), field_values.shape)
    return float(field_values[cell]), float(2.0 * curvature[cell])


def verify_apriori_bounds(flow: FlowRecord, cone: ConeSpec, k: float, tau: float) -> AprioriReport:
    """Audit the doubling estimate, the C/t decay and the ell evolution along a flow"""
    times = flow.times
    window = 1.0 / (16.0 * k)
    within = [i for i, t in enumerate(times) if t <= tau * (1.0 + 1e-12)]
    violations: List[Dict[str, Any]] = []

    norms = np.array([flow.curvature_norm(i) for i in within])
    doubling_ok = True
    for i, norm in zip(within, norms):
        if times[i] <= window and norm > 2.0 * k * (1.0 + 1e-12):
            doubling_ok = False
            violations.append({"check": "doubling", "t": float(times[i]), "norm": float(norm)})

    positive = [(times[i], norm) for i, norm in zip(within, norms) if times[i] > 0.0]
    decay_constant = max((t * norm for t, norm in positive), default=0.0)

    ells, scals = [], []
    for i in within:
        value, scal = _ell_and_scal(flow, i, cone)
        ells.append(value)
        scals.append(scal)
    ells = np.array(ells)
    scals = np.array(scals)
    sample_times = times[within]

    diffs = np.diff(ells) / np.diff(sample_times) if len(within) > 1 else np.array([])
    lipschitz = float(np.max(np.abs(diffs))) if diffs.size else 0.0

    evolution_c: Optional[float] = None
    if flow.kind.spatially_constant:
        evolution_c = 0.0
        for j, rate in enumerate(diffs):
            if ells[j] > ELL_ACTIVE:
                needed = (rate - scals[j] * ells[j]) / ells[j] ** 2
                evolution_c = max(evolution_c, float(needed))
    else:
        logger.debug("evolution constant skipped for a spatially varying flow")

    c4: Optional[float]
    if ells.size and ells[0] > 0.0:
        c4 = float(np.max(ells) / ells[0])
    elif ells.size and np.all(ells == 0.0):
        c4 = 1.0
    else:
        c4 = None
        violations.append({"check": "c4", "detail": "ell(0) = 0 but ell becomes positive"})

    return AprioriReport(
        doubling_ok=doubling_ok,
        doubling_window=window,
        decay_constant=float(decay_constant),
        ell_series={cone.kind.value: [float(v) for v in ells]},
        times=[float(t) for t in sample_times],
        evolution_C=evolution_c,
        c4=c4,
        ell_lipschitz=lipschitz,
        violations=violations,
    )
