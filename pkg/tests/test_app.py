import json

import pandas as pd
import pytest

from cli.app import EXIT_CELL_FAILURE, EXIT_OK, EXIT_VALIDATION, build_parser, main
from cli.presets import preset_names


def _write_config(tmp_path, **overrides):
    payload = {
        "name": "app",
        "rounds": 4,
        "model": {"kind": "quadratic"},
        "data": {"source": "quadratic", "dim": 3, "lam": 1.0, "L": 4.0, "heterogeneity": 0.5,
                 "sample_spread": 0.5, "samples_per_client": 10, "clients": 3},
        "local": {"B": 5, "E": 2},
        "schedule": {"kind": "fixed_blind", "eta_0": 0.05},
        "overlays": ["cvx_fixed"],
        "estimate": {"enabled": True, "resamples": 5},
        "output": {"directory": str(tmp_path / "run")},
    }
    payload.update(overrides)
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def test_presets_command_writes_every_file(tmp_path):
    assert main(["presets", "--directory", str(tmp_path)]) == EXIT_OK
    assert sorted(p.stem for p in tmp_path.glob("*.json")) == sorted(preset_names())


def test_presets_command_rejects_unknown_names(tmp_path):
    assert main(["presets", "nope", "--directory", str(tmp_path)]) == EXIT_VALIDATION
    assert not list(tmp_path.iterdir())


def test_run_command_succeeds(tmp_path):
    assert main(["run", str(_write_config(tmp_path))]) == EXIT_OK
    assert (tmp_path / "run" / "manifest.json").exists()


def test_run_command_reports_invalid_config(tmp_path):
    path = _write_config(tmp_path, rounds=-1)
    assert main(["run", str(path)]) == EXIT_VALIDATION
    assert not (tmp_path / "run").exists()


def test_run_command_reports_cell_failures(tmp_path):
    path = _write_config(
        tmp_path,
        overlays=[],
        estimate={"enabled": False},
        scheme={"variant": "truncated_inversion", "c_th": 0.5},
        sweep={"delta_max": [0.0, 1.0]},
    )
    assert main(["run", str(path)]) == EXIT_CELL_FAILURE


def test_run_command_output_override(tmp_path):
    target = tmp_path / "elsewhere"
    assert main(["run", str(_write_config(tmp_path)), "--output", str(target), "--workers", "2"]) == EXIT_OK
    assert (target / "summary.csv").exists()


def test_bounds_command_from_a_constants_file(tmp_path):
    assert main(["run", str(_write_config(tmp_path))]) == EXIT_OK
    constants = next((tmp_path / "run" / "constants").glob("*.json"))
    out = tmp_path / "bounds.csv"
    assert main(["bounds", str(constants), "--rounds", "20", "--kind", "cvx_fixed", "--output", str(out)]) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["t", "cvx_fixed"]
    assert frame["cvx_fixed"].is_monotonic_decreasing


def test_bounds_command_with_unmet_preconditions(tmp_path):
    assert main(["run", str(_write_config(tmp_path))]) == EXIT_OK
    constants = next((tmp_path / "run" / "constants").glob("*.json"))
    assert main(["bounds", str(constants), "--kind", "noncvx_fixed"]) == EXIT_VALIDATION


def test_bounds_command_with_missing_file(tmp_path):
    assert main(["bounds", str(tmp_path / "absent.json")]) == EXIT_VALIDATION


def test_parser_requires_a_command():
    with pytest.raises(SystemExit):
        build_parser().parse_args([])
