from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from curvature.curvature_operator import CurvatureOperator
from shared.serialization import save_json, write_csv


class FlowKind(Enum):
    SPACE_FORM = "SpaceForm"
    HOMOGENEOUS3 = "Homogeneous3"
    CONFORMAL_SURFACE = "ConformalSurface"

    @property
    def spatially_constant(self) -> bool:
        return self is not FlowKind.CONFORMAL_SURFACE


# constant kinds store a CurvatureOperator, the surface stores its Gauss curvature field
Curvature = Union[CurvatureOperator, np.ndarray]


@dataclass
class FlowRecord:
    """Time-indexed metrics of one model flow.

    Slices are append-only; every stored array is made read-only.
    """
    kind: FlowKind
    params: Dict[str, Any] = field(default_factory=dict)
    dt: Optional[float] = None
    _times: List[float] = field(default_factory=list, repr=False)
    _states: List[np.ndarray] = field(default_factory=list, repr=False)
    _curvatures: List[Curvature] = field(default_factory=list, repr=False)

    def append(self, t: float, state: np.ndarray, curvature: Curvature) -> None:
        if self._times and not t > self._times[-1]:
            raise ValueError(f"flow times must increase: {t} after {self._times[-1]}")
        arr = np.array(state, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite metric data at t={t}")
        if self.kind.spatially_constant and np.any(arr <= 0.0):
            raise ValueError(f"metric coefficients must be positive at t={t}: {arr}")
        arr.setflags(write=False)
        if isinstance(curvature, np.ndarray):
            curvature = np.array(curvature, dtype=float)
            curvature.setflags(write=False)
        self._times.append(float(t))
        self._states.append(arr)
        self._curvatures.append(curvature)

    def __len__(self) -> int:
        return len(self._times)

    @property
    def times(self) -> np.ndarray:
        return np.array(self._times)

    @property
    def states(self) -> List[np.ndarray]:
        return list(self._states)

    def state_at(self, index: int) -> np.ndarray:
        return self._states[index]

    def curvature_at(self, index: int) -> Curvature:
        return self._curvatures[index]

    @property
    def last_time(self) -> float:
        return self._times[-1]

    def curvature_norm(self, index: int) -> float:
        """|Rm| as the largest |eigenvalue| of the curvature operator"""
        curvature = self._curvatures[index]
        if isinstance(curvature, CurvatureOperator):
            return curvature.norm()
        return float(np.max(np.abs(curvature)))

    def to_frame(self) -> pd.DataFrame:
        rows = []
        for t, state in zip(self._times, self._states):
            for idx, value in enumerate(np.ravel(state)):
                rows.append({"time": t, "index": idx, "value": float(value)})
        return pd.DataFrame(rows, columns=["time", "index", "value"])

    def header(self) -> Dict[str, Any]:
        header = {"kind": self.kind.value, "params": self.params, "dt": self.dt,
                  "slices": len(self._times)}
        if self._states and self.kind is FlowKind.CONFORMAL_SURFACE:
            header["grid_size"] = int(self._states[0].shape[0])
        return header

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        write_csv(path, self.to_frame(), description=f"{self.kind.value} flow")
        save_json(path.with_suffix(".json"), self.header())
        return path
