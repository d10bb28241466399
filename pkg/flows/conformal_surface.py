"""Ricci flow of a conformal metric g = e^u g_flat on the periodic unit square.

In two dimensions the flow keeps the conformal class and reduces to
du/dt = -2K = e^{-u} Lap0 u, with K = -1/2 e^{-u} Lap0 u.
"""
import logging
from typing import Optional

import numpy as np

from flows.flow_record import FlowKind, FlowRecord
from shared.errors import StepRejectedError

logger = logging.getLogger(__name__)

STABILITY_FACTOR = 0.2
METHODS = ("euler", "rk2")


def grid_spacing(u: np.ndarray) -> float:
    return 1.0 / u.shape[0]


def flat_laplacian(u: np.ndarray, h: Optional[float] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Periodic 5-point Laplacian; with a mask, links to inactive cells are dropped"""
    h = grid_spacing(u) if h is None else h
    out = np.zeros_like(u, dtype=float)
    for axis in (0, 1):
        for shift in (1, -1):
            neighbour = np.roll(u, shift, axis=axis)
            if mask is None:
                out += neighbour - u
            else:
                linked = mask & np.roll(mask, shift, axis=axis)
                out += np.where(linked, neighbour - u, 0.0)
    if mask is not None:
        out = np.where(mask, out, 0.0)
    return out / h ** 2


def gauss_curvature(u: np.ndarray, h: Optional[float] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
    return -0.5 * np.exp(-u) * flat_laplacian(u, h, mask)


def scalar_curvature_field(u: np.ndarray, h: Optional[float] = None, mask: Optional[np.ndarray] = None) -> np.ndarray:
    return 2.0 * gauss_curvature(u, h, mask)


def stability_bound(u: np.ndarray, h: Optional[float] = None, mask: Optional[np.ndarray] = None) -> float:
    h = grid_spacing(u) if h is None else h
    values = u if mask is None else u[mask]
    return STABILITY_FACTOR * h ** 2 * float(np.exp(np.min(values)))


def _velocity(u, h, mask):
    velocity = np.exp(-u) * flat_laplacian(u, h, mask)
    return velocity if mask is None else np.where(mask, velocity, 0.0)


def step_conformal_surface_flow(u: np.ndarray, dt: float, h: Optional[float] = None,
                                method: str = "euler", mask: Optional[np.ndarray] = None) -> np.ndarray:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}, expected one of {METHODS}")
    bound = stability_bound(u, h, mask)
    if dt > bound * (1.0 + 1e-12):
        raise StepRejectedError(f"dt={dt:g} exceeds the stability bound {bound:g}", suggested_dt=bound)
    if dt == 0.0:
        return np.array(u, dtype=float)
    k1 = _velocity(u, h, mask)
    if method == "euler":
        return u + dt * k1
    k2 = _velocity(u + dt * k1, h, mask)
    return u + 0.5 * dt * (k1 + k2)


def total_area(u: np.ndarray, h: Optional[float] = None, mask: Optional[np.ndarray] = None) -> float:
    h = grid_spacing(u) if h is None else h
    values = np.exp(u) if mask is None else np.where(mask, np.exp(u), 0.0)
    return float(np.sum(values) * h ** 2)


def integrate_conformal_surface_flow(u0: np.ndarray, dt: float, steps: int,
                                     method: str = "euler", record_every: int = 1,
                                     mask: Optional[np.ndarray] = None) -> FlowRecord:
    """Fixed-step trajectory stored every `record_every` steps (and at the end)"""
    h = grid_spacing(u0)
    record = FlowRecord(kind=FlowKind.CONFORMAL_SURFACE,
                        params={"m": int(u0.shape[0]), "h": h, "method": method}, dt=dt)
    u = np.array(u0, dtype=float)
    record.append(0.0, u, gauss_curvature(u, h, mask))
    for step in range(1, steps + 1):
        u = step_conformal_surface_flow(u, dt, h, method, mask)
        if step % record_every == 0 or step == steps:
            record.append(step * dt, u, gauss_curvature(u, h, mask))
    return record


def sinusoidal_field(m: int, amplitude: float, mode: int = 1) -> np.ndarray:
    x = (np.arange(m) + 0.5) / m
    return amplitude * np.sin(2.0 * np.pi * mode * x)[:, None] * np.ones((1, m))
