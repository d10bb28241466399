"""Geometric time schedule and radius ledger of a flow in expansion.

Constants follow C2 = gamma_conf C1, C3 = 4 C2 and nu = 1 + 1/(4 C3). Times
are t_j = t_1 nu^{j-1}, radii shrink by

    r_{j+1} = r_j - 4 sqrt(t_{j+1} / tau) - 6 t_{j+2}^{1/4},

and stage j, ending at t_{j+1}, is completed at scale sqrt(t_{j+1} / C1).
A ledger scale below 1 multiplies both radius drops, for runs whose
stages must stay resolvable on the grid.
Planning stops at the first time beyond tau/2, at the first radius below
r0 - 1 or at the stage cap.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import pandas as pd

from shared.errors import InfeasibleConstantsError
from shared.serialization import save_json, write_csv

logger = logging.getLogger(__name__)

RADIUS_BUDGET = 1.0


@dataclass
class ExpansionSchedule:
    nu: float
    t_seq: List[float]
    r_seq: List[float]
    rho_seq: List[float]
    constants: Dict[str, float] = field(default_factory=dict)
    exit_reason: str = ""

    def __len__(self) -> int:
        return len(self.t_seq)

    @property
    def radius_drop(self) -> float:
        return self.r_seq[0] - self.r_seq[-1]

    @property
    def exact_radius_drop(self) -> float:
        """The drop the unscaled ledger charges for the same times"""
        return self.radius_drop / self.constants.get("ledger_scale", 1.0)

    @property
    def ledger_ok(self) -> bool:
        return self.radius_drop <= RADIUS_BUDGET

    def stage_bounds(self) -> List[tuple]:
        """[0, t_1], [t_1, t_2], ..., one interval per planned stage"""
        edges = [0.0] + list(self.t_seq)
        return list(zip(edges[:-1], edges[1:]))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"stage": range(len(self.t_seq)), "t": self.t_seq, "r": self.r_seq,
                             "rho": self.rho_seq})

    def to_dict(self) -> Dict[str, Any]:
        return {
            "nu": self.nu,
            "t_seq": self.t_seq,
            "r_seq": self.r_seq,
            "rho_seq": self.rho_seq,
            "constants": self.constants,
            "radius_drop": self.radius_drop,
            "exact_radius_drop": self.exact_radius_drop,
            "exit_reason": self.exit_reason,
        }

    def save(self, path: Union[str, Path]) -> Path:
        path = Path(path)
        write_csv(path.with_suffix(".csv"), self.to_frame(), description="schedule")
        return save_json(path, self.to_dict())

    def display(self):
        print(f"nu = {self.nu!r}, stages: {len(self.t_seq)} ({self.exit_reason})")
        print(self.to_frame().to_markdown(index=False, floatfmt=".6g"))


def check_constants(c1: float, c3: float, tau: float, beta: float) -> None:
    """Raise InfeasibleConstantsError naming the first violated inequality"""
    root = np.sqrt(tau)
    if not tau <= 1.0:
        raise InfeasibleConstantsError(f"tau={tau:g} exceeds 1", inequality="tau <= 1")
    if not beta ** 2 * c3 * tau <= root / 16.0:
        raise InfeasibleConstantsError(
            f"beta^2 C3 tau = {beta ** 2 * c3 * tau:.6g} exceeds sqrt(tau)/16 = {root / 16.0:.6g}",
            inequality="beta^2 C3 tau <= sqrt(tau)/16")
    if not root / 16.0 <= 1.0:
        raise InfeasibleConstantsError(f"sqrt(tau)/16 = {root / 16.0:g} exceeds 1",
                                       inequality="sqrt(tau)/16 <= 1")
    if not tau <= c1 / 4.0:
        raise InfeasibleConstantsError(f"tau={tau:g} exceeds C1/4 = {c1 / 4.0:g}", inequality="tau <= C1/4")


def plan_schedule(c1: float, tau: float, t1: float, r0: float, gamma_conf: float = 2.0,
                  beta: float = 1.0, max_stages: Optional[int] = None,
                  ledger_scale: float = 1.0) -> ExpansionSchedule:
    if not 0.0 < ledger_scale <= 1.0:
        raise ValueError(f"ledger_scale must lie in (0, 1], got {ledger_scale}")
    if c1 <= 0.0 or tau <= 0.0 or t1 <= 0.0:
        raise ValueError(f"C1, tau and t1 must be positive, got {c1}, {tau}, {t1}")
    if max_stages is not None and max_stages < 1:
        raise ValueError(f"need at least one stage, got max_stages={max_stages}")
    c2 = gamma_conf * c1
    c3 = 4.0 * c2
    check_constants(c1, c3, tau, beta)
    if not t1 <= 0.5 * tau:
        raise InfeasibleConstantsError(f"t1={t1:g} exceeds tau/2 = {0.5 * tau:g}", inequality="t1 <= tau/2")
    nu = 1.0 + 1.0 / (4.0 * c3)

    t_seq, r_seq = [float(t1)], [float(r0)]
    exit_reason = "stage cap"
    while max_stages is None or len(t_seq) < max_stages:
        t_next = t_seq[-1] * nu
        if t_next > 0.5 * tau:
            exit_reason = "uniform time tau/2 reached"
            break
        r_next = r_seq[-1] - ledger_scale * (4.0 * np.sqrt(t_next / tau) + 6.0 * (t_next * nu) ** 0.25)
        if r_next < r0 - RADIUS_BUDGET:
            exit_reason = "radius budget exhausted"
            break
        t_seq.append(t_next)
        r_seq.append(float(r_next))
    # stage j runs up to t_seq[j] on the ball of radius r_seq[j], completed at scale rho_seq[j]
    rho_seq = [float(np.sqrt(t / c1)) for t in t_seq]
    constants = {"C1": c1, "C2": c2, "C3": c3, "tau": tau, "beta": beta, "gamma_conf": gamma_conf,
                 "r0": r0, "t1": t1, "ledger_scale": ledger_scale}
    schedule = ExpansionSchedule(nu=nu, t_seq=t_seq, r_seq=r_seq, rho_seq=rho_seq, constants=constants,
                                 exit_reason=exit_reason)
    logger.debug("schedule: nu=%r, %d stages, radius drop %g", nu, len(t_seq), schedule.radius_drop)
    return schedule


def junction_series_sum(t_seq: List[float]) -> float:
    """Direct sum of sqrt(t_{j+1} - t_j) over consecutive scheduled times"""
    t = np.asarray(t_seq, dtype=float)
    return float(np.sum(np.sqrt(np.diff(t))))


def junction_series_closed_form(t_final: float, nu: float, terms: int) -> float:
    """sqrt(t (1 - 1/nu)) (1 - nu^{-N/2}) / (1 - nu^{-1/2}) for N terms ending at t_final"""
    ratio = nu ** -0.5
    return float(np.sqrt(t_final * (1.0 - 1.0 / nu)) * (1.0 - ratio ** terms) / (1.0 - ratio))


def junction_series_bound(t_final: float, nu: float) -> float:
    """sqrt((nu - 1) t) / (sqrt(nu) - 1), the sum over infinitely many earlier junctions"""
    return float(np.sqrt((nu - 1.0) * t_final) / (np.sqrt(nu) - 1.0))
