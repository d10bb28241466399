"""SVG plots and series CSVs for a finished suite run."""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import pandas as pd

from shared.serialization import write_csv

logger = logging.getLogger(__name__)

# fixed salt and no date stamp keep the SVG bytes reproducible
SVG_HASHSALT = "ricci-lab"
FIGSIZE = (6.4, 4.0)


@dataclass
class Series:
    """One registered plot: curves and dashed reference overlays sharing an x axis"""
    name: str
    x: List[float]
    curves: Dict[str, List[float]]
    xlabel: str = "t"
    ylabel: str = ""
    references: Dict[str, List[float]] = field(default_factory=dict)
    log_x: bool = False
    log_y: bool = False

    @property
    def is_empty(self) -> bool:
        return len(self.x) == 0 or not any(len(values) for values in self.curves.values())

    def to_frame(self) -> pd.DataFrame:
        columns = {self.xlabel or "x": list(self.x)}
        columns.update({name: list(values) for name, values in self.curves.items()})
        columns.update({name: list(values) for name, values in self.references.items()})
        return pd.DataFrame(columns)


def plot_series(series: Series, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": SVG_HASHSALT, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=FIGSIZE)
        for label, values in series.curves.items():
            ax.plot(series.x, values, marker="o", markersize=3, linewidth=1.2, label=label)
        for label, values in series.references.items():
            ax.plot(series.x, values, linestyle="--", linewidth=1.0, color="0.4", label=label)
        if series.log_x:
            ax.set_xscale("log")
        if series.log_y:
            ax.set_yscale("log")
        ax.set_xlabel(series.xlabel)
        ax.set_ylabel(series.ylabel)
        ax.set_title(series.name)
        ax.grid(True, linewidth=0.3)
        ax.legend(fontsize=8)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def emit_report(series: List[Series], out_dir: Union[str, Path]) -> List[Path]:
    """One SVG under plots/ and one CSV under series/ per non-empty series"""
    out_dir = Path(out_dir)
    written = []
    for s in series:
        if s.is_empty:
            logger.warning("series %s is empty, skipped", s.name)
            continue
        write_csv(out_dir / "series" / f"{s.name}.csv", s.to_frame(), description=f"{s.name} series")
        written.append(plot_series(s, out_dir / "plots" / f"{s.name}.svg"))
    return written
