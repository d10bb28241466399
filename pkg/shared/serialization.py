import json
from pathlib import Path
from typing import Any, Dict, Iterable, List, Tuple, Union

import numpy as np
import pandas as pd

FLOAT_FORMAT = "%.17g"


def fmt17(value: float) -> str:
    return format(float(value), ".17g")


def to_jsonable(obj: Any) -> Any:
    """Convert numpy containers and scalars into plain JSON types"""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if np.isfinite(value):
            return value
        return fmt17(value)
    if isinstance(obj, Path):
        return str(obj)
    return obj


def save_json(path: Union[str, Path], data: Dict[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(to_jsonable(data), f, indent=2)
    return path


def write_csv(path: Union[str, Path], frame: pd.DataFrame, description: str = "") -> Path:
    """Write a frame as RFC-4180 CSV with 17-digit floats and a '#' column note"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        note = description or "columns"
        f.write(f"# {note}: {', '.join(str(c) for c in frame.columns)}\n")
        frame.to_csv(f, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def mask_run_lengths(mask: np.ndarray) -> List[Tuple[int, int]]:
    """Row-major run-length encoding as (value, count) pairs"""
    flat = np.asarray(mask, dtype=bool).ravel()
    runs: List[Tuple[int, int]] = []
    if flat.size == 0:
        return runs
    change = np.flatnonzero(np.diff(flat.astype(np.int8))) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [flat.size]))
    for s, e in zip(starts, ends):
        runs.append((int(flat[s]), int(e - s)))
    return runs


def mask_from_run_lengths(runs: Iterable[Tuple[int, int]], shape: Tuple[int, int]) -> np.ndarray:
    values = [np.full(count, bool(value)) for value, count in runs]
    return np.concatenate(values).reshape(shape)


def save_grid_field(path: Union[str, Path], field: np.ndarray, mask: np.ndarray,
                    h: float, extra: Dict[str, Any] = None) -> Path:
    """Row-major CSV of a cell field plus a JSON sidecar with m, h and the mask"""
    path = Path(path)
    m = field.shape[0]
    rows, cols = np.indices(field.shape)
    frame = pd.DataFrame({
        "row": rows.ravel(),
        "col": cols.ravel(),
        "value": np.asarray(field, dtype=float).ravel(),
    })
    write_csv(path, frame, description="grid field")
    sidecar = {"m": m, "h": h, "mask_rle": mask_run_lengths(mask)}
    if extra:
        sidecar.update(extra)
    save_json(path.with_suffix(".json"), sidecar)
    return path
