import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, Optional, Tuple, Union

from dotenv import load_dotenv

from shared.errors import ConfigurationError

SUITE_NAMES = ("cones", "flows", "kernel", "cutoff", "distortion", "expansion", "all")
M_MIN, M_MAX = 8, 256
DT_MAX = 0.1
SEED_MAX = 2 ** 64

DEFAULT_OUTPUT_DIR = "results"
DEFAULT_SEED = 7
DEFAULT_M = 32
DEFAULT_DT = 1e-4

TOP_LEVEL_KEYS = {"suite", "seed", "resolution", "sweep", "output_dir", "strict"}
RESOLUTION_KEYS = {"m", "dt"}
TRUTHY = {"1", "true", "yes", "on"}
DIM_MIN, DIM_MAX = 3, 6
EXPANSION_PRESETS = ("desk", "resolved")
EXPANSION_KNOBS = ("alpha0", "bump_width", "t1", "tau", "r0", "beta", "gamma_conf", "c4", "max_stages",
                   "flow_safety", "min_stage_steps", "kernel_dt", "min_collar_cells", "min_cutoff_cells",
                   "ledger_scale", "tail_distance")


@dataclass(frozen=True)
class Resolution:
    m: int = DEFAULT_M
    dt: float = DEFAULT_DT


@dataclass(frozen=True)
class ExperimentConfig:
    suite: str
    seed: int = DEFAULT_SEED
    resolution: Resolution = field(default_factory=Resolution)
    sweep: Dict[str, Any] = field(default_factory=dict)
    output_dir: Path = Path(DEFAULT_OUTPUT_DIR)
    strict: bool = False

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["output_dir"] = str(self.output_dir)
        return data


@dataclass(frozen=True)
class EnvironmentDefaults:
    output_dir: str
    seed: int
    strict: bool
    log_level: str


def environment_defaults() -> EnvironmentDefaults:
    """Run defaults from the process environment, after loading a .env file if present"""
    load_dotenv()
    raw_seed = os.getenv("RICCI_LAB_SEED", str(DEFAULT_SEED))
    try:
        seed = int(raw_seed)
    except ValueError:
        raise ConfigurationError(f"RICCI_LAB_SEED must be an integer, got {raw_seed!r}")
    return EnvironmentDefaults(
        output_dir=os.getenv("RICCI_LAB_OUTPUT_DIR", DEFAULT_OUTPUT_DIR),
        seed=seed,
        strict=os.getenv("RICCI_LAB_STRICT", "false").strip().lower() in TRUTHY,
        log_level=os.getenv("RICCI_LAB_LOG_LEVEL", "WARNING").upper(),
    )


def key_line(text: str, key: str) -> Optional[int]:
    """1-based line of the first `"key":` in the source text"""
    pattern = re.compile(r'"' + re.escape(key) + r'"\s*:')
    for number, line in enumerate(text.splitlines(), start=1):
        if pattern.search(line):
            return number
    return None


def _is_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _count(value: Any) -> bool:
    return _is_int(value) and value >= 1


def _positive(value: Any) -> bool:
    return _is_number(value) and value > 0


def _fraction(value: Any) -> bool:
    return _is_number(value) and 0 < value <= 1


def _optional_positive(value: Any) -> bool:
    return value is None or _positive(value)


def _positive_list(value: Any) -> bool:
    return isinstance(value, list) and bool(value) and all(_positive(v) for v in value)


def _dims(value: Any) -> bool:
    return isinstance(value, list) and bool(value) and all(_is_int(v) and DIM_MIN <= v <= DIM_MAX for v in value)


def _preset(value: Any) -> bool:
    return value in EXPANSION_PRESETS


# sweep key -> (check, what the value must be)
SWEEP_RULES: Dict[str, Tuple[Callable[[Any], bool], str]] = {
    "cone_operators": (_count, "a positive integer"),
    "dims": (_dims, f"a non-empty list of integers in [{DIM_MIN}, {DIM_MAX}]"),
    "flow_steps": (_count, "a positive integer"),
    "cutoff_rs": (_positive_list, "a non-empty list of positive numbers"),
    "cutoff_radius": (_positive, "a positive number"),
    "distortion_pairs": (_count, "a positive integer"),
    "distortion_beta": (_positive, "a positive number"),
    "expansion_preset": (_preset, f"one of {', '.join(EXPANSION_PRESETS)}"),
    "alpha0": (_positive, "a positive number"),
    "bump_width": (_positive, "a positive number"),
    "t1": (_positive, "a positive number"),
    "tau": (_positive, "a positive number"),
    "r0": (_positive, "a positive number"),
    "beta": (_positive, "a positive number"),
    "gamma_conf": (_positive, "a positive number"),
    "c4": (_positive, "a positive number"),
    "max_stages": (_count, "a positive integer"),
    "flow_safety": (_positive, "a positive number"),
    "min_stage_steps": (_count, "a positive integer"),
    "kernel_dt": (_positive, "a positive number"),
    "min_collar_cells": (_count, "a positive integer"),
    "min_cutoff_cells": (_count, "a positive integer"),
    "ledger_scale": (_fraction, "a number in (0, 1]"),
    "tail_distance": (_optional_positive, "a positive number or null"),
}

SUITE_SWEEP_KEYS: Dict[str, Tuple[str, ...]] = {
    "cones": ("cone_operators", "dims"),
    "flows": ("flow_steps",),
    "kernel": (),
    "cutoff": ("cutoff_rs", "cutoff_radius"),
    "distortion": ("distortion_pairs", "distortion_beta"),
    "expansion": ("expansion_preset",) + EXPANSION_KNOBS,
}
SUITE_SWEEP_KEYS["all"] = tuple(key for keys in SUITE_SWEEP_KEYS.values() for key in keys)


def check_sweep(suite: str, sweep: Dict[str, Any], fail: Callable[[str, str], None]) -> None:
    """Reject sweep keys the suite does not read and values of the wrong type"""
    allowed = SUITE_SWEEP_KEYS[suite]
    for key, value in sweep.items():
        if key not in allowed:
            fail(key, f"unknown sweep key {key!r} for suite {suite}")
        check, expected = SWEEP_RULES[key]
        if not check(value):
            fail(key, f"sweep key {key} must be {expected}, got {value!r}")


def parse_config(text: str, defaults: Optional[EnvironmentDefaults] = None) -> ExperimentConfig:
    """Validate a JSON experiment config field by field.

    Every problem raises ConfigurationError carrying the line of the
    offending key; syntax errors carry the decoder's line.
    """
    defaults = environment_defaults() if defaults is None else defaults
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"invalid JSON: {e.msg}", line=e.lineno)
    if not isinstance(raw, dict):
        raise ConfigurationError("config must be a JSON object", line=1)

    def fail(key: str, message: str):
        raise ConfigurationError(message, line=key_line(text, key))

    for key in raw:
        if key not in TOP_LEVEL_KEYS:
            fail(key, f"unknown key {key!r}")

    if "suite" not in raw:
        raise ConfigurationError("missing required key 'suite'", line=1)
    suite = raw["suite"]
    if suite not in SUITE_NAMES:
        fail("suite", f"suite must be one of {', '.join(SUITE_NAMES)}, got {suite!r}")

    seed = raw.get("seed", defaults.seed)
    if not _is_int(seed) or not 0 <= seed < SEED_MAX:
        fail("seed", f"seed must be an integer in [0, 2^64), got {seed!r}")

    resolution = Resolution()
    if "resolution" in raw:
        block = raw["resolution"]
        if not isinstance(block, dict):
            fail("resolution", "resolution must be an object with keys m and dt")
        for key in block:
            if key not in RESOLUTION_KEYS:
                fail(key, f"unknown resolution key {key!r}")
        m = block.get("m", DEFAULT_M)
        if not _is_int(m) or not M_MIN <= m <= M_MAX:
            fail("m", f"m must be an integer in [{M_MIN}, {M_MAX}], got {m!r}")
        dt = block.get("dt", DEFAULT_DT)
        if not _is_number(dt) or not 0.0 < dt <= DT_MAX:
            fail("dt", f"dt must satisfy 0 < dt <= {DT_MAX}, got {dt!r}")
        resolution = Resolution(m=int(m), dt=float(dt))

    sweep = raw.get("sweep", {})
    if not isinstance(sweep, dict):
        fail("sweep", "sweep must be an object")
    check_sweep(suite, sweep, fail)

    output_dir = raw.get("output_dir", defaults.output_dir)
    if not isinstance(output_dir, str) or not output_dir:
        fail("output_dir", "output_dir must be a non-empty string")

    strict = raw.get("strict", defaults.strict)
    if not isinstance(strict, bool):
        fail("strict", f"strict must be true or false, got {strict!r}")

    return ExperimentConfig(suite=suite, seed=int(seed), resolution=resolution, sweep=dict(sweep),
                            output_dir=Path(output_dir), strict=strict)


def load_config(path: Union[str, Path], defaults: Optional[EnvironmentDefaults] = None) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigurationError(f"cannot read config {path}: {e}")
    return parse_config(text, defaults)
