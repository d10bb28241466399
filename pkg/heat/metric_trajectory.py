import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from flows.conformal_surface import scalar_curvature_field
from flows.flow_record import FlowKind, FlowRecord
from geometry.discrete_manifold import DiscreteManifold
from shared.errors import OutOfDomainError

logger = logging.getLogger(__name__)

TIME_SLACK = 1e-12


def time_slack(*times: float) -> float:
    """Tolerance for comparing times on the scale of the given ones"""
    return TIME_SLACK * max(abs(float(t)) for t in times)


@dataclass(frozen=True, eq=False)
class MetricTrajectory:
    """Conformal fields u(t) on one time interval, linear in t between stored slices.

    A single stored slice is a static metric on [start, end].
    """
    times: np.ndarray
    fields: np.ndarray
    mask: Optional[np.ndarray] = None
    start: Optional[float] = None
    end: Optional[float] = None

    def __post_init__(self):
        times = np.array(self.times, dtype=float).ravel()
        fields = np.array(self.fields, dtype=float)
        if fields.ndim == 2:
            fields = fields[None, :, :]
        if fields.shape[0] != times.size:
            raise ValueError(f"{times.size} times for {fields.shape[0]} fields")
        if times.size > 1 and np.any(np.diff(times) <= 0.0):
            raise ValueError("trajectory times must increase")
        start = float(times[0]) if self.start is None else float(self.start)
        end = float(times[-1]) if self.end is None else float(self.end)
        slack = time_slack(times[0], times[-1])
        if times.size > 1 and (start < times[0] - slack or end > times[-1] + slack):
            raise ValueError("trajectory interval exceeds the stored slices")
        if end <= start:
            raise ValueError(f"empty interval [{start}, {end}]")
        for arr in (times, fields):
            arr.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", fields)
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)
        # validates the mask once
        object.__setattr__(self, "mask", self._first_manifold.mask)

    @cached_property
    def _first_manifold(self) -> DiscreteManifold:
        return DiscreteManifold(self.fields[0], self.mask)

    @property
    def is_static(self) -> bool:
        return self.times.size == 1

    @property
    def m(self) -> int:
        return self.fields.shape[1]

    def contains(self, t: float) -> bool:
        slack = time_slack(self.start, self.end)
        return self.start - slack <= t <= self.end + slack

    def field_at(self, t: float) -> np.ndarray:
        if not self.contains(t):
            raise OutOfDomainError(f"t={t} outside the trajectory interval [{self.start}, {self.end}]")
        if self.is_static:
            return self.fields[0]
        k = int(np.clip(np.searchsorted(self.times, t, side="right") - 1, 0, self.times.size - 2))
        t0, t1 = self.times[k], self.times[k + 1]
        weight = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        if weight == 0.0:
            return self.fields[k]
        if weight == 1.0:
            return self.fields[k + 1]
        return (1.0 - weight) * self.fields[k] + weight * self.fields[k + 1]

    def manifold_at(self, t: float) -> DiscreteManifold:
        if self.is_static:
            self.field_at(t)
            return self._first_manifold
        return DiscreteManifold(self.field_at(t), self.mask)

    def scalar_curvature_at(self, t: float) -> np.ndarray:
        return scalar_curvature_field(self.field_at(t), mask=self.mask)

    def curvature_decay(self) -> float:
        """max over stored slices with t > 0 of t * max|K|"""
        values = [t * 0.5 * float(np.max(np.abs(scalar_curvature_field(u, mask=self.mask)[self.mask])))
                  for t, u in zip(self.times, self.fields) if t > 0.0]
        return max(values, default=0.0)

    def restricted(self, mask: np.ndarray) -> "MetricTrajectory":
        return MetricTrajectory(self.times, self.fields, np.asarray(mask, dtype=bool) & self.mask,
                                self.start, self.end)

    def window(self, start: float, end: float) -> "MetricTrajectory":
        """The same metric on [start, end], with slices at both ends"""
        if not (self.contains(start) and self.contains(end)):
            raise OutOfDomainError(f"[{start}, {end}] leaves [{self.start}, {self.end}]")
        if self.is_static:
            return MetricTrajectory.static(self.fields[0], start, end, self.mask)
        inner = [k for k, t in enumerate(self.times) if start < t < end]
        times = [start] + [float(self.times[k]) for k in inner] + [end]
        fields = [self.field_at(start)] + [self.fields[k] for k in inner] + [self.field_at(end)]
        return MetricTrajectory(np.array(times), np.stack(fields), self.mask)

    @classmethod
    def static(cls, u: np.ndarray, start: float, end: float,
               mask: Optional[np.ndarray] = None) -> "MetricTrajectory":
        return cls(np.array([start]), np.asarray(u, dtype=float)[None], mask, start, end)

    @classmethod
    def from_record(cls, record: FlowRecord, mask: Optional[np.ndarray] = None,
                    time_offset: float = 0.0) -> "MetricTrajectory":
        if record.kind is not FlowKind.CONFORMAL_SURFACE:
            raise ValueError(f"need a conformal surface flow, got {record.kind.value}")
        return cls(record.times + time_offset, np.stack(record.states), mask)
