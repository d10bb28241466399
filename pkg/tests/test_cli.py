import json
import logging
from pathlib import Path

import pandas as pd
import pytest

from cli.config import (SUITE_NAMES, EnvironmentDefaults, environment_defaults, key_line, load_config,
                        parse_config)
from cli.main import apply_overrides, main
from cli.report import Series, emit_report
from cli.suites import SUITE_REGISTRY, ExpansionSuite, FittedConstant, SuiteResult, get_suite
from shared.errors import ConfigurationError

DEFAULTS = EnvironmentDefaults(output_dir="results", seed=7, strict=False, log_level="WARNING")

NEGATIVE_DT = """{
  "suite": "flows",
  "resolution": {
    "m": 16,
    "dt": -0.001
  }
}
"""


def write_config(tmp_path, data, name="config.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return path


def test_minimal_config_takes_defaults():
    config = parse_config('{"suite": "cones"}', DEFAULTS)
    assert config.suite == "cones"
    assert config.seed == 7
    assert config.resolution.m == 32 and config.resolution.dt == 1e-4
    assert config.sweep == {}
    assert str(config.output_dir) == "results"
    assert config.strict is False


def test_negative_dt_points_at_its_line():
    with pytest.raises(ConfigurationError) as info:
        parse_config(NEGATIVE_DT, DEFAULTS)
    assert info.value.line == 5
    assert str(info.value).startswith("line 5:")


@pytest.mark.parametrize("text, line", [
    ('{\n  "suite": "cones",\n  "colour": 3\n}', 3),
    ('{\n  "suite": "nope"\n}', 2),
    ('{\n  "suite": "cones",\n  "seed": -1\n}', 3),
    ('{\n  "suite": "cones",\n  "resolution": {"m": 4}\n}', 3),
    ('{\n  "suite": "cones",\n  "resolution": {"m": 512, "dt": 0.01}\n}', 3),
    ('{\n  "suite": "cones",\n  "strict": "yes"\n}', 3),
    ('{\n  "suite": "cones",\n  "sweep": [1, 2]\n}', 3),
    ('{\n  "suite": "cones",\n  "seed": 1,\n}', 4),
    ('{\n  "suite": "cones",\n  "sweep": {\n    "cone_operators": "many"\n  }\n}', 4),
    ('{\n  "suite": "cones",\n  "sweep": {"flow_steps": 3}\n}', 3),
    ('{\n  "suite": "expansion",\n  "sweep": {"ledger_scale": 2.0}\n}', 3),
    ('{\n  "suite": "distortion",\n  "sweep": {\n    "distortion_pairs": 0\n  }\n}', 4),
])
def test_schema_violations_are_line_anchored(text, line):
    with pytest.raises(ConfigurationError) as info:
        parse_config(text, DEFAULTS)
    assert info.value.line == line


def test_dt_upper_bound_is_inclusive():
    config = parse_config('{"suite": "kernel", "resolution": {"m": 256, "dt": 0.1}}', DEFAULTS)
    assert config.resolution.m == 256 and config.resolution.dt == 0.1
    with pytest.raises(ConfigurationError):
        parse_config('{"suite": "kernel", "resolution": {"dt": 0.2}}', DEFAULTS)


def test_key_line_finds_first_occurrence():
    assert key_line('{\n"a": 1,\n"b": {"a": 2}}', "a") == 2
    assert key_line('{"a": 1}', "missing") is None


def test_environment_defaults(monkeypatch):
    monkeypatch.setenv("RICCI_LAB_SEED", "11")
    monkeypatch.setenv("RICCI_LAB_STRICT", "yes")
    monkeypatch.setenv("RICCI_LAB_OUTPUT_DIR", "elsewhere")
    monkeypatch.setenv("RICCI_LAB_LOG_LEVEL", "debug")
    defaults = environment_defaults()
    assert defaults == EnvironmentDefaults(output_dir="elsewhere", seed=11, strict=True, log_level="DEBUG")
    config = parse_config('{"suite": "flows", "seed": 3}', defaults)
    assert config.seed == 3 and config.strict


def test_bad_seed_in_environment(monkeypatch):
    monkeypatch.setenv("RICCI_LAB_SEED", "seven")
    with pytest.raises(ConfigurationError):
        environment_defaults()


def test_flags_override_config(tmp_path):
    config = parse_config('{"suite": "cones", "seed": 5}', DEFAULTS)
    updated = apply_overrides(config, tmp_path, 9, True)
    assert updated.seed == 9 and updated.strict and updated.output_dir == tmp_path
    assert apply_overrides(config, None, None, False) == config
    with pytest.raises(ConfigurationError):
        apply_overrides(config, None, 2 ** 64, False)


def test_registry_covers_every_suite_name():
    assert set(SUITE_REGISTRY) == set(SUITE_NAMES)
    for name, suite in SUITE_REGISTRY.items():
        assert suite.get_suite_name() == name
    with pytest.raises(ConfigurationError):
        get_suite("gui")


def test_malformed_config_exits_2(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(NEGATIVE_DT, encoding="utf-8")
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "line 5" in capsys.readouterr().out
    assert not (tmp_path / "out" / "results.csv").exists()


def test_missing_config_exits_2(tmp_path):
    assert main(["run", str(tmp_path / "absent.json")]) == 2


def test_bad_sweep_value_exits_2(tmp_path, capsys):
    path = write_config(tmp_path, {"suite": "cones", "sweep": {"cone_operators": "many"}})
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 2
    assert "line 4" in capsys.readouterr().out
    assert not (tmp_path / "out" / "results.csv").exists()


def test_all_suite_accepts_every_suite_sweep_key():
    text = json.dumps({"suite": "all", "sweep": {"cone_operators": 4, "dims": [3, 4], "flow_steps": 5,
                                                  "distortion_beta": 3.0, "expansion_preset": "resolved",
                                                  "tail_distance": None}})
    assert parse_config(text, DEFAULTS).sweep["expansion_preset"] == "resolved"


def test_expansion_preset_selects_resolved_settings():
    desk = ExpansionSuite.settings(parse_config('{"suite": "expansion", "resolution": {"m": 48}}', DEFAULTS))
    assert desk.m == 48 and desk.ledger_scale == 1.0
    text = '{"suite": "expansion", "sweep": {"expansion_preset": "resolved", "max_stages": 3}}'
    resolved = ExpansionSuite.settings(parse_config(text, DEFAULTS))
    assert resolved.m == 128 and resolved.ledger_scale < 1.0 and resolved.max_stages == 3


def test_flows_suite_on_flat_torus(tmp_path):
    out = tmp_path / "flows"
    path = write_config(tmp_path, {"suite": "flows", "resolution": {"m": 16, "dt": 1e-4},
                                   "sweep": {"flow_steps": 20}})
    assert main(["run", str(path), "--out", str(out)]) == 0

    results = pd.read_csv(out / "results.csv", comment="#")
    assert list(results.columns) == ["suite", "check", "value", "threshold", "passed", "hard"]
    stationary = results[results["check"] == "flat torus is stationary"]
    assert stationary["value"].iloc[0] == 0.0
    assert results["passed"].all()

    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["passed"] and manifest["failures"] == []
    assert manifest["constants"]["flows.rk4_order"]["module"] == "flows.homogeneous"
    assert manifest["constants"]["flows.rk4_order"]["value"] == pytest.approx(4.0, abs=0.2)
    assert (out / "plots" / "flows_flat_torus.svg").exists()
    assert (out / "plots" / "flows_berger_ell.svg").exists()
    series = pd.read_csv(out / "series" / "flows_flat_torus.csv", comment="#")
    assert (series["max |u|"] == 0.0).all()


def test_cones_suite_is_deterministic(tmp_path):
    data = {"suite": "cones", "seed": 7, "sweep": {"cone_operators": 30}}
    path = write_config(tmp_path, data)
    assert main(["run", str(path), "--out", str(tmp_path / "a")]) == 0
    assert main(["run", str(path), "--out", str(tmp_path / "b")]) == 0
    for name in ("results.csv", "cones.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    comparisons = pd.read_csv(tmp_path / "a" / "cones.csv", comment="#")
    assert len(comparisons) == 60
    assert set(comparisons["cone"]) == {"NonnegOperator", "TwoNonneg"}
    assert comparisons["difference"].max() <= 1e-8
    assert (tmp_path / "a" / "cones.csv").read_text().startswith("# ell oracle comparisons:")

    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert manifest["constants"]["cones.operators"]["value"] == 30
    assert "cones: NonnegOperator implies WPIC2 implies WPIC1" not in manifest["failures"]


def test_cones_seed_changes_samples(tmp_path):
    data = {"suite": "cones", "sweep": {"cone_operators": 6}}
    path = write_config(tmp_path, data)
    assert main(["run", str(path), "--out", str(tmp_path / "a"), "--seed", "1"]) == 0
    assert main(["run", str(path), "--out", str(tmp_path / "b"), "--seed", "2"]) == 0
    assert (tmp_path / "a" / "cones.csv").read_bytes() != (tmp_path / "b" / "cones.csv").read_bytes()


def test_distortion_suite_audits_shrinking(tmp_path):
    out = tmp_path / "distortion"
    path = write_config(tmp_path, {"suite": "distortion", "sweep": {"distortion_pairs": 150}})
    assert main(["run", str(path), "--out", str(out)]) == 0
    results = pd.read_csv(out / "results.csv", comment="#")
    checks = dict(zip(results["check"], results["passed"]))
    for name in ("distances change along the flow", "shrinking estimate with configured beta",
                 "Hoelder band holds pairs", "limit ladder is Cauchy"):
        assert checks[name]
    constants = json.loads((out / "manifest.json").read_text())["constants"]
    assert constants["distortion.audited_slope"]["value"] >= constants["distortion.beta_sqrt_c0"]["value"] > 0.0
    assert constants["distortion.flow_steps"]["value"] > 10


@pytest.mark.slow
def test_full_cones_suite(tmp_path):
    path = write_config(tmp_path, {"suite": "cones", "seed": 7})
    assert main(["run", str(path), "--out", str(tmp_path / "out")]) == 0
    comparisons = pd.read_csv(tmp_path / "out" / "cones.csv", comment="#")
    assert comparisons["sample"].nunique() == 1000
    assert len(comparisons) == 2000
    assert set(comparisons["n"]) == {3, 4, 5}

    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["constants"]["cones.operators"]["value"] == 1000
    results = pd.read_csv(tmp_path / "out" / "results.csv", comment="#")
    frames = results[results["check"] == "NonnegOperator implies WPIC2 implies WPIC1"]
    assert len(frames) == 1 and frames["passed"].iloc[0]


def test_report_skips_empty_series(tmp_path, caplog):
    series = [
        Series(name="empty", x=[], curves={"ell": []}),
        Series(name="mass", x=[0.1, 0.2, 0.3], curves={"mass": [1.0, 1.0, 1.0]},
               references={"unit mass": [1.0, 1.0, 1.0]}),
    ]
    with caplog.at_level(logging.WARNING, logger="cli.report"):
        written = emit_report(series, tmp_path)
    assert [p.name for p in written] == ["mass.svg"]
    assert "empty" in caplog.text
    assert not (tmp_path / "plots" / "empty.svg").exists()
    frame = pd.read_csv(tmp_path / "series" / "mass.csv", comment="#")
    assert list(frame.columns) == ["t", "mass", "unit mass"]


def test_svg_output_is_reproducible(tmp_path):
    series = [Series(name="ell", x=[1e-16, 1e-15, 1e-14], curves={"sup ell": [0.05, 0.06, 0.07]},
                     references={"C4 alpha0": [0.1, 0.1, 0.1]}, log_x=True)]
    first = emit_report(series, tmp_path / "a")[0].read_bytes()
    second = emit_report(series, tmp_path / "b")[0].read_bytes()
    assert first == second
    assert b"<svg" in first


def test_merge_rejects_duplicate_constants():
    a = SuiteResult(suite="a")
    a.constants["x.c"] = FittedConstant(1.0, "m")
    b = SuiteResult(suite="b")
    b.constants["x.c"] = FittedConstant(2.0, "m")
    with pytest.raises(ValueError):
        SuiteResult.merge("all", [a, b])


def test_suite_result_bookkeeping():
    result = SuiteResult(suite="demo")
    result.check("hard ok", 1.0, 2.0, True)
    result.check("soft miss", 0, 1, False, hard=False)
    assert result.passed
    result.check("hard miss", 3.0, 2.0, False)
    assert result.failures == ["demo: hard miss"]
    result.constant("c", 1.5, "demo.module", 1e-6)
    assert result.constants["demo.c"].to_dict() == {"value": 1.5, "module": "demo.module", "tolerance": 1e-6}
    with pytest.raises(ValueError):
        result.constant("c", 2.0, "demo.module")
    assert len(result.to_frame()) == 3


def test_shipped_experiments_validate():
    root = Path(__file__).resolve().parents[1] / "experiments"
    paths = sorted(root.glob("*.json"))
    assert {p.stem for p in paths} == set(SUITE_NAMES)
    for path in paths:
        assert load_config(path, DEFAULTS).suite == path.stem
