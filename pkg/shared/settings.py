from dataclasses import asdict, dataclass, field, replace
from typing import Any, Dict, List, Optional, Tuple

from heat.conjugate_kernel import DEFAULT_DT


@dataclass(frozen=True)
class LabSettings:
    """Knobs of the expansion pipeline at desk scale"""
    m: int = 64
    # working centre, the middle cell when unset
    x0: Optional[Tuple[int, int]] = None
    alpha0: float = 0.05
    bump_width: float = 0.05
    t1: float = 1e-14
    tau: float = 1e-3
    r0: float = 0.45
    beta: float = 1.0
    gamma_conf: float = 2.0
    c4: float = 2.0
    v0: float = 1.0
    volume_radius: float = 0.1
    max_stages: int = 5
    # explicit flow step as a fraction of the stability bound
    flow_safety: float = 0.5
    # floor on flow and kernel steps per stage
    min_stage_steps: int = 10
    kernel_dt: float = DEFAULT_DT
    min_collar_cells: int = 2
    min_cutoff_cells: int = 3
    # factor on the radius drops and on the t^{1/4} cutoff radius; 1 is the exact ledger
    ledger_scale: float = 1.0
    tail_distance: Optional[float] = None
    report_only: bool = True
    probe_offsets: List[Tuple[int, int]] = field(default_factory=lambda: [(0, 0), (5, 0), (0, -5)])

    def __post_init__(self):
        if self.m < 8:
            raise ValueError(f"grid too small for the pipeline: m={self.m}")
        if not 0.0 < self.flow_safety <= 1.0:
            raise ValueError(f"flow_safety must lie in (0, 1], got {self.flow_safety}")
        if self.min_collar_cells < 1 or self.min_cutoff_cells < 1:
            raise ValueError("scale floors must be at least one cell")
        if self.min_stage_steps < 1:
            raise ValueError(f"min_stage_steps must be at least 1, got {self.min_stage_steps}")
        if not 0.0 < self.ledger_scale <= 1.0:
            raise ValueError(f"ledger_scale must lie in (0, 1], got {self.ledger_scale}")
        centre = (self.m // 2, self.m // 2) if self.x0 is None else self.x0
        object.__setattr__(self, "x0", tuple(int(c) for c in centre))

    @property
    def h(self) -> float:
        return 1.0 / self.m

    @classmethod
    def resolved(cls, **changes: Any) -> "LabSettings":
        """A run whose stages and kernel tails are resolved by the grid.

        The exact ledger cannot be met at desk resolution once the stages
        are long enough for the kernel to reach the cutoff annulus, so the
        radius drops and the cutoff radius are scaled down. tau = C1 / 4
        pins C1 = 4 tau and nu = 1.625; the probes sit on the negatively
        curved ring of the bump.
        """
        preset = dict(m=128, tau=0.0125, t1=1e-5, bump_width=0.04, ledger_scale=0.02, min_cutoff_cells=2,
                      probe_offsets=[(10, 0), (0, -10), (7, 7)])
        preset.update(changes)
        return cls(**preset)

    def with_overrides(self, **changes: Any) -> "LabSettings":
        if "m" in changes and "x0" not in changes:
            changes["x0"] = None
        return replace(self, **changes)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
